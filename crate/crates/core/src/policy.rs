//! Shared-trunk policy/value network with analytic gradients.
//!
//! ```text
//! input K×X×Y ─ conv3×3(c1) ─ relu ─ conv3×3(c2) ─ relu ─ flatten ─┬─ fc(h) ─ relu ─ fc(5) ─ softmax
//!                                                                  └─ fc(h) ─ relu ─ fc(1)
//! ```
//!
//! All parameters live in one flat `Vec<f64>`; [`NetShape::layout`] names the
//! tensors and their offsets in declaration order. Convolutions use stride 1
//! and zero "same" padding. They are evaluated on a padded plane whose rows
//! are `Y + 2` wide, so each kernel tap is a single contiguous axpy; outputs
//! in the two padding columns of each row are computed and then discarded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoder::StateTensor;
use crate::error::{Error, Result};
use crate::world::Action;

pub const N_ACTIONS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NetShape {
    pub planes: usize,
    pub width: usize,
    pub height: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
}

impl NetShape {
    /// Default layer sizes for a `planes × width × height` input.
    pub fn new(planes: usize, width: usize, height: usize) -> Self {
        NetShape {
            planes,
            width,
            height,
            conv1: 8,
            conv2: 8,
            hidden: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.planes,
            self.width,
            self.height,
            self.conv1,
            self.conv2,
            self.hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::config(format!("network dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn flat_features(&self) -> usize {
        self.conv2 * self.width * self.height
    }

    /// `(name, dims, owner)` of every tensor in declaration order.
    pub fn layout(&self) -> Vec<TensorSpec> {
        let f = self.flat_features();
        let h = self.hidden;
        let spec = |name: &'static str, dims: Vec<usize>, owner| TensorSpec { name, dims, owner };
        vec![
            spec("conv1.weight", vec![self.conv1, self.planes, 3, 3], Owner::Trunk),
            spec("conv1.bias", vec![self.conv1], Owner::Trunk),
            spec("conv2.weight", vec![self.conv2, self.conv1, 3, 3], Owner::Trunk),
            spec("conv2.bias", vec![self.conv2], Owner::Trunk),
            spec("policy.hidden.weight", vec![h, f], Owner::Policy),
            spec("policy.hidden.bias", vec![h], Owner::Policy),
            spec("policy.out.weight", vec![N_ACTIONS, h], Owner::Policy),
            spec("policy.out.bias", vec![N_ACTIONS], Owner::Policy),
            spec("value.hidden.weight", vec![h, f], Owner::Value),
            spec("value.hidden.bias", vec![h], Owner::Value),
            spec("value.out.weight", vec![1, h], Owner::Value),
            spec("value.out.bias", vec![1], Owner::Value),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.layout().iter().map(TensorSpec::len).sum()
    }

    fn offsets(&self) -> Offsets {
        let mut at = 0;
        let mut next = |spec: &TensorSpec| {
            let o = at;
            at += spec.len();
            o
        };
        let l = self.layout();
        Offsets {
            w1: next(&l[0]),
            b1: next(&l[1]),
            w2: next(&l[2]),
            b2: next(&l[3]),
            wph: next(&l[4]),
            bph: next(&l[5]),
            wpo: next(&l[6]),
            bpo: next(&l[7]),
            wvh: next(&l[8]),
            bvh: next(&l[9]),
            wvo: next(&l[10]),
            bvo: next(&l[11]),
            end: at,
        }
    }

    fn row(&self) -> usize {
        self.height + 2
    }

    fn padded(&self) -> usize {
        (self.width + 2) * self.row()
    }

    /// Length of the wide output plane; the final two padding slots are dropped.
    fn wide(&self) -> usize {
        self.width * self.row() - 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Owner {
    /// Shared convolutional layers, updated by both objectives.
    Trunk,
    Policy,
    Value,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: &'static str,
    pub dims: Vec<usize>,
    pub owner: Owner,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    wph: usize,
    bph: usize,
    wpo: usize,
    bpo: usize,
    wvh: usize,
    bvh: usize,
    wvo: usize,
    bvo: usize,
    end: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    shape: NetShape,
    seed: u64,
    data: Vec<f64>,
}

/// Loss gradient: `apply` subtracts it, which ascends the policy objective
/// and descends the value loss.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub data: Vec<f64>,
    /// `Σ log π(a|s) · A` over the rollout.
    pub policy_objective: f64,
    /// `c_v · Σ A²`.
    pub value_loss: f64,
    /// `Σ H(π(s))`.
    pub entropy: f64,
}

impl Gradients {
    pub fn zeros(shape: &NetShape) -> Self {
        Gradients {
            data: vec![0.0; shape.n_params()],
            policy_objective: 0.0,
            value_loss: 0.0,
            entropy: 0.0,
        }
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|g| *g = 0.0);
        self.policy_objective = 0.0;
        self.value_loss = 0.0;
        self.entropy = 0.0;
    }
}

/// One `(s, a, A)` sample; the advantage is a constant for differentiation.
#[derive(Clone, Copy, Debug)]
pub struct RolloutStep<'a> {
    pub state: &'a StateTensor,
    pub action: Action,
    pub advantage: f64,
}

/// Activations of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct Trace {
    input: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
    pre2: Vec<f64>,
    flat: Vec<f64>,
    pre_ph: Vec<f64>,
    act_ph: Vec<f64>,
    pre_vh: Vec<f64>,
    act_vh: Vec<f64>,
    probs: [f64; N_ACTIONS],
    value: f64,
}

impl Trace {
    pub fn probs(&self) -> [f64; N_ACTIONS] {
        self.probs
    }

    pub fn value(&self) -> f64 {
        self.value
    }
}

pub fn entropy(p: &[f64; N_ACTIONS]) -> f64 {
    -p.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>()
}

fn softmax(logits: &[f64; N_ACTIONS]) -> [f64; N_ACTIONS] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; N_ACTIONS];
    let mut z = 0.0;
    for (pi, l) in p.iter_mut().zip(logits) {
        *pi = (l - m).exp();
        z += *pi;
    }
    p.iter_mut().for_each(|pi| *pi /= z);
    p
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    // independent lanes so the reduction can vectorize
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// 3×3 tap offsets into a padded plane for wide output index 0.
fn taps(row: usize) -> [usize; 9] {
    let mut t = [0; 9];
    for kx in 0..3 {
        for ky in 0..3 {
            t[kx * 3 + ky] = kx * row + ky;
        }
    }
    t
}

impl ModelParams {
    /// Uniform fan-in initialization with zero biases.
    pub fn init(shape: NetShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(shape.n_params());
        for spec in shape.layout() {
            if spec.dims.len() == 1 {
                data.extend(std::iter::repeat_n(0.0, spec.len()));
                continue;
            }
            let fan_in: usize = spec.dims[1..].iter().product();
            let bound = 1.0 / (fan_in as f64).sqrt();
            data.extend((0..spec.len()).map(|_| rng.gen_range(-bound..bound)));
        }
        Ok(ModelParams { shape, seed, data })
    }

    pub fn from_parts(shape: NetShape, seed: u64, data: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.n_params() {
            return Err(Error::Shape {
                expected: format!("{} parameters", shape.n_params()),
                found: data.len().to_string(),
            });
        }
        Ok(ModelParams { shape, seed, data })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    /// Seed the parameters were initialized from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let mut at = 0;
        for spec in self.shape.layout() {
            if spec.name == name {
                return Some(&self.data[at..at + spec.len()]);
            }
            at += spec.len();
        }
        None
    }

    /// Zeroes both output layers, making the policy uniform and the value 0.
    pub fn zero_output_layers(&mut self) {
        let o = self.shape.offsets();
        self.data[o.wpo..o.wvh].iter_mut().for_each(|v| *v = 0.0);
        self.data[o.wvo..o.end].iter_mut().for_each(|v| *v = 0.0);
    }

    fn check_input(&self, s: &StateTensor) -> Result<()> {
        let want = (self.shape.planes, self.shape.width, self.shape.height);
        if s.dims() != want {
            return Err(Error::Shape {
                expected: format!("{}x{}x{}", want.0, want.1, want.2),
                found: format!("{}x{}x{}", s.dims().0, s.dims().1, s.dims().2),
            });
        }
        Ok(())
    }

    /// Action probabilities and state value.
    pub fn forward(&self, s: &StateTensor) -> Result<([f64; N_ACTIONS], f64)> {
        let t = self.forward_trace(s)?;
        Ok((t.probs, t.value))
    }

    pub fn value(&self, s: &StateTensor) -> Result<f64> {
        Ok(self.forward_trace(s)?.value)
    }

    pub fn forward_trace(&self, s: &StateTensor) -> Result<Trace> {
        self.check_input(s)?;
        let sh = &self.shape;
        let o = sh.offsets();
        let (row, padded, wide) = (sh.row(), sh.padded(), sh.wide());
        let (nx, ny) = (sh.width, sh.height);
        let taps = taps(row);
        let p = &self.data;

        let mut input = vec![0.0; sh.planes * padded];
        for k in 0..sh.planes {
            for x in 0..nx {
                let src = &s.as_slice()[(k * nx + x) * ny..(k * nx + x + 1) * ny];
                let dst = k * padded + (x + 1) * row + 1;
                input[dst..dst + ny].copy_from_slice(src);
            }
        }

        let conv = |inp: &[f64], c_in: usize, c_out: usize, w: usize, b: usize| {
            let mut out = vec![0.0; c_out * wide];
            for co in 0..c_out {
                let dst = &mut out[co * wide..(co + 1) * wide];
                dst.iter_mut().for_each(|v| *v = p[b + co]);
                for ci in 0..c_in {
                    let plane = &inp[ci * padded..(ci + 1) * padded];
                    let kern = &p[w + (co * c_in + ci) * 9..w + (co * c_in + ci + 1) * 9];
                    for (tap, &wt) in taps.iter().zip(kern) {
                        axpy(wt, &plane[*tap..*tap + wide], dst);
                    }
                }
            }
            out
        };

        let pre1 = conv(&input, sh.planes, sh.conv1, o.w1, o.b1);
        let mut act1 = vec![0.0; sh.conv1 * padded];
        for c in 0..sh.conv1 {
            for x in 0..nx {
                for y in 0..ny {
                    act1[c * padded + (x + 1) * row + y + 1] = relu(pre1[c * wide + x * row + y]);
                }
            }
        }

        let pre2 = conv(&act1, sh.conv1, sh.conv2, o.w2, o.b2);
        let mut flat = vec![0.0; sh.flat_features()];
        for c in 0..sh.conv2 {
            for x in 0..nx {
                for y in 0..ny {
                    flat[(c * nx + x) * ny + y] = relu(pre2[c * wide + x * row + y]);
                }
            }
        }

        let f = flat.len();
        let h = sh.hidden;
        let dense = |w: usize, b: usize| -> Vec<f64> {
            (0..h).map(|j| p[b + j] + dot(&p[w + j * f..w + (j + 1) * f], &flat)).collect()
        };
        let pre_ph = dense(o.wph, o.bph);
        let act_ph: Vec<f64> = pre_ph.iter().map(|&v| relu(v)).collect();
        let pre_vh = dense(o.wvh, o.bvh);
        let act_vh: Vec<f64> = pre_vh.iter().map(|&v| relu(v)).collect();

        let mut logits = [0.0; N_ACTIONS];
        for (a, l) in logits.iter_mut().enumerate() {
            *l = p[o.bpo + a] + dot(&p[o.wpo + a * h..o.wpo + (a + 1) * h], &act_ph);
        }
        let value = p[o.bvo] + dot(&p[o.wvo..o.wvo + h], &act_vh);

        Ok(Trace {
            input,
            pre1,
            act1,
            pre2,
            flat,
            pre_ph,
            act_ph,
            pre_vh,
            act_vh,
            probs: softmax(&logits),
            value,
        })
    }

    /// Smallest `|z|` over every ReLU input of a trace. Finite-difference
    /// checks are only meaningful when this exceeds the step size.
    pub fn relu_margin(&self, t: &Trace) -> f64 {
        let sh = &self.shape;
        let (row, wide) = (sh.row(), sh.wide());
        let mut m = f64::INFINITY;
        for (pre, channels) in [(&t.pre1, sh.conv1), (&t.pre2, sh.conv2)] {
            for c in 0..channels {
                for x in 0..sh.width {
                    for y in 0..sh.height {
                        m = m.min(pre[c * wide + x * row + y].abs());
                    }
                }
            }
        }
        t.pre_ph.iter().chain(&t.pre_vh).fold(m, |m, z| m.min(z.abs()))
    }

    /// Gradient of `Σ [-A·log π(a|s) - β·H(π(s)) + c_v·(R - V(s))²]` where
    /// `R = A + V(s)` is held fixed, accumulated over the rollout.
    pub fn backward(&self, rollout: &[RolloutStep<'_>], beta: f64, c_v: f64) -> Result<Gradients> {
        if rollout.is_empty() {
            return Err(Error::contract("backward needs a non-empty rollout"));
        }
        let mut g = Gradients::zeros(&self.shape);
        for step in rollout {
            let trace = self.forward_trace(step.state)?;
            self.accumulate(&trace, step.action, step.advantage, beta, c_v, &mut g);
        }
        Ok(g)
    }

    /// Adds one sample's loss gradient, using a trace produced by these parameters.
    pub fn accumulate(
        &self,
        t: &Trace,
        action: Action,
        advantage: f64,
        beta: f64,
        c_v: f64,
        g: &mut Gradients,
    ) {
        let sh = &self.shape;
        let o = sh.offsets();
        let (row, padded, wide) = (sh.row(), sh.padded(), sh.wide());
        let (nx, ny) = (sh.width, sh.height);
        let taps = taps(row);
        let h = sh.hidden;
        let f = sh.flat_features();
        let p = &self.data;
        let gd = &mut g.data;

        let a = action.index();
        let ent = entropy(&t.probs);
        g.policy_objective += t.probs[a].ln() * advantage;
        g.value_loss += c_v * advantage * advantage;
        g.entropy += ent;

        // d/dz of -A log π_a - β H
        let mut d_logits = [0.0; N_ACTIONS];
        for (j, d) in d_logits.iter_mut().enumerate() {
            let pj = t.probs[j];
            let onehot = if j == a { 1.0 } else { 0.0 };
            *d = -advantage * (onehot - pj) + beta * pj * (pj.ln() + ent);
        }
        // d/dV of c_v (R - V)²
        let d_value = -2.0 * c_v * advantage;

        let mut d_flat = vec![0.0; f];

        // value head
        gd[o.bvo] += d_value;
        axpy(d_value, &t.act_vh, &mut gd[o.wvo..o.wvo + h]);
        for j in 0..h {
            if t.pre_vh[j] <= 0.0 {
                continue;
            }
            let dz = d_value * p[o.wvo + j];
            gd[o.bvh + j] += dz;
            axpy(dz, &t.flat, &mut gd[o.wvh + j * f..o.wvh + (j + 1) * f]);
            axpy(dz, &p[o.wvh + j * f..o.wvh + (j + 1) * f], &mut d_flat);
        }

        // policy head
        let mut d_hidden = vec![0.0; h];
        for (k, &dl) in d_logits.iter().enumerate() {
            gd[o.bpo + k] += dl;
            axpy(dl, &t.act_ph, &mut gd[o.wpo + k * h..o.wpo + (k + 1) * h]);
            axpy(dl, &p[o.wpo + k * h..o.wpo + (k + 1) * h], &mut d_hidden);
        }
        for j in 0..h {
            if t.pre_ph[j] <= 0.0 {
                continue;
            }
            let dz = d_hidden[j];
            gd[o.bph + j] += dz;
            axpy(dz, &t.flat, &mut gd[o.wph + j * f..o.wph + (j + 1) * f]);
            axpy(dz, &p[o.wph + j * f..o.wph + (j + 1) * f], &mut d_flat);
        }

        // conv2
        let mut d_pre2 = vec![0.0; sh.conv2 * wide];
        for c in 0..sh.conv2 {
            for x in 0..nx {
                for y in 0..ny {
                    let wi = c * wide + x * row + y;
                    if t.pre2[wi] > 0.0 {
                        d_pre2[wi] = d_flat[(c * nx + x) * ny + y];
                    }
                }
            }
        }
        let mut d_act1 = vec![0.0; sh.conv1 * padded];
        for co in 0..sh.conv2 {
            let dout = &d_pre2[co * wide..(co + 1) * wide];
            gd[o.b2 + co] += dout.iter().sum::<f64>();
            for ci in 0..sh.conv1 {
                let plane = &t.act1[ci * padded..(ci + 1) * padded];
                let kb = o.w2 + (co * sh.conv1 + ci) * 9;
                for (k, tap) in taps.iter().enumerate() {
                    gd[kb + k] += dot(dout, &plane[*tap..*tap + wide]);
                    axpy(p[kb + k], dout, &mut d_act1[ci * padded + tap..ci * padded + tap + wide]);
                }
            }
        }

        // conv1
        let mut d_pre1 = vec![0.0; sh.conv1 * wide];
        for c in 0..sh.conv1 {
            for x in 0..nx {
                for y in 0..ny {
                    let wi = c * wide + x * row + y;
                    if t.pre1[wi] > 0.0 {
                        d_pre1[wi] = d_act1[c * padded + (x + 1) * row + y + 1];
                    }
                }
            }
        }
        for co in 0..sh.conv1 {
            let dout = &d_pre1[co * wide..(co + 1) * wide];
            gd[o.b1 + co] += dout.iter().sum::<f64>();
            for ci in 0..sh.planes {
                let plane = &t.input[ci * padded..(ci + 1) * padded];
                let kb = o.w1 + (co * sh.planes + ci) * 9;
                for (k, tap) in taps.iter().enumerate() {
                    gd[kb + k] += dot(dout, &plane[*tap..*tap + wide]);
                }
            }
        }
    }
}

/// The scalar whose gradient [`ModelParams::backward`] returns, with the
/// returns `R` given explicitly so it can be differentiated numerically.
pub fn rollout_loss(
    params: &ModelParams,
    rollout: &[RolloutStep<'_>],
    returns: &[f64],
    beta: f64,
    c_v: f64,
) -> Result<f64> {
    let mut loss = 0.0;
    for (step, r) in rollout.iter().zip(returns) {
        let (probs, v) = params.forward(step.state)?;
        loss += -step.advantage * probs[step.action.index()].ln() - beta * entropy(&probs)
            + c_v * (r - v) * (r - v);
    }
    Ok(loss)
}

/// Central-difference gradient of `loss` at `params`. Test oracle.
pub fn finite_diff_grad<F>(params: &ModelParams, loss: F, eps: f64) -> Gradients
where
    F: Fn(&ModelParams) -> f64,
{
    let mut probe = params.clone();
    let mut g = Gradients::zeros(&params.shape);
    for i in 0..params.data.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + eps;
        let up = loss(&probe);
        probe.data[i] = orig - eps;
        let down = loss(&probe);
        probe.data[i] = orig;
        g.data[i] = (up - down) / (2.0 * eps);
    }
    g
}
