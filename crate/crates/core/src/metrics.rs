//! Per-step and per-episode records, moving averages and CSV export.
//!
//! Step CSV columns:
//! `episode,step,mean_coverage,n_agents,reward_sum,reward_mean,penalties`
//!
//! Episode CSV columns:
//! `episode,n_agents,n_mmwave,initial_coverage,final_coverage,mean_coverage,`
//! `accumulated_reward_mean,accumulated_reward_sum,penalties,ma_final_coverage,ma_accumulated_reward`
//!
//! Episodes and steps are 1-based. The two `ma_*` columns hold the
//! 50-episode trailing mean and are empty before the 50th episode.

use std::io::Write;

use crate::error::Result;

pub const MOVING_AVERAGE_WINDOW: usize = 50;

pub const STEP_COLUMNS: &str = "episode,step,mean_coverage,n_agents,reward_sum,reward_mean,penalties";
pub const EPISODE_COLUMNS: &str = "episode,n_agents,n_mmwave,initial_coverage,final_coverage,mean_coverage,\
accumulated_reward_mean,accumulated_reward_sum,penalties,ma_final_coverage,ma_accumulated_reward";

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub episode: usize,
    pub step: usize,
    /// Mean coverage after the step.
    pub mean_coverage: f64,
    /// Reward of each agent, ordered by vehicle id.
    pub agent_rewards: Vec<f64>,
    pub penalties: usize,
}

impl StepRecord {
    pub fn reward_sum(&self) -> f64 {
        self.agent_rewards.iter().sum()
    }

    pub fn reward_mean(&self) -> f64 {
        mean_or_zero(&self.agent_rewards)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub n_agents: usize,
    pub n_mmwave: usize,
    pub initial_coverage: f64,
    pub final_coverage: f64,
    /// Mean over the episode's steps.
    pub mean_coverage: f64,
    /// Accumulated reward of each agent over the episode.
    pub accumulated_rewards: Vec<f64>,
    pub penalties: usize,
}

impl EpisodeSummary {
    pub fn accumulated_reward_mean(&self) -> f64 {
        mean_or_zero(&self.accumulated_rewards)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeMetrics {
    pub steps: Vec<StepRecord>,
    pub episodes: Vec<EpisodeSummary>,
}

fn mean_or_zero(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Trailing mean over `window` values; `None` until the window is full.
pub fn moving_average(values: &[f64], window: usize) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push((i + 1 >= window).then(|| sum / window as f64));
    }
    out
}

impl EpisodeMetrics {
    pub fn final_coverages(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.final_coverage).collect()
    }

    pub fn mean_final_coverage(&self) -> f64 {
        mean_or_zero(&self.final_coverages())
    }

    pub fn accumulated_reward_means(&self) -> Vec<f64> {
        self.episodes.iter().map(EpisodeSummary::accumulated_reward_mean).collect()
    }

    /// Mean coverage at 1-based `step` across episodes.
    pub fn mean_coverage_at_step(&self, step: usize) -> f64 {
        let v: Vec<f64> = self
            .steps
            .iter()
            .filter(|s| s.step == step)
            .map(|s| s.mean_coverage)
            .collect();
        mean_or_zero(&v)
    }

    /// Mean coverage per step index, averaged over episodes.
    pub fn coverage_curve(&self) -> Vec<f64> {
        let max_step = self.steps.iter().map(|s| s.step).max().unwrap_or(0);
        (1..=max_step).map(|t| self.mean_coverage_at_step(t)).collect()
    }

    pub fn write_steps_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{STEP_COLUMNS}")?;
        for s in &self.steps {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                s.episode,
                s.step,
                s.mean_coverage,
                s.agent_rewards.len(),
                s.reward_sum(),
                s.reward_mean(),
                s.penalties
            )?;
        }
        Ok(())
    }

    pub fn write_episodes_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{EPISODE_COLUMNS}")?;
        let ma_cov = moving_average(&self.final_coverages(), MOVING_AVERAGE_WINDOW);
        let ma_rew = moving_average(&self.accumulated_reward_means(), MOVING_AVERAGE_WINDOW);
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (i, e) in self.episodes.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                e.episode,
                e.n_agents,
                e.n_mmwave,
                e.initial_coverage,
                e.final_coverage,
                e.mean_coverage,
                e.accumulated_reward_mean(),
                e.accumulated_rewards.iter().sum::<f64>(),
                e.penalties,
                opt(ma_cov[i]),
                opt(ma_rew[i]),
            )?;
        }
        Ok(())
    }
}

/// Accumulates step records into an episode summary.
#[derive(Debug)]
pub(crate) struct EpisodeRecorder {
    episode: usize,
    n_mmwave: usize,
    initial_coverage: f64,
    accumulated: Vec<f64>,
    coverage_sum: f64,
    last_coverage: f64,
    penalties: usize,
    steps: usize,
}

impl EpisodeRecorder {
    pub(crate) fn new(episode: usize, n_agents: usize, n_mmwave: usize, initial_coverage: f64) -> Self {
        EpisodeRecorder {
            episode,
            n_mmwave,
            initial_coverage,
            accumulated: vec![0.0; n_agents],
            coverage_sum: 0.0,
            last_coverage: initial_coverage,
            penalties: 0,
            steps: 0,
        }
    }

    pub(crate) fn record(&mut self, coverage: f64, rewards: Vec<f64>, penalties: usize) -> StepRecord {
        self.steps += 1;
        for (acc, r) in self.accumulated.iter_mut().zip(&rewards) {
            *acc += r;
        }
        self.coverage_sum += coverage;
        self.last_coverage = coverage;
        self.penalties += penalties;
        StepRecord {
            episode: self.episode,
            step: self.steps,
            mean_coverage: coverage,
            agent_rewards: rewards,
            penalties,
        }
    }

    pub(crate) fn finish(self) -> EpisodeSummary {
        EpisodeSummary {
            episode: self.episode,
            n_agents: self.accumulated.len(),
            n_mmwave: self.n_mmwave,
            initial_coverage: self.initial_coverage,
            final_coverage: self.last_coverage,
            mean_coverage: if self.steps == 0 {
                self.initial_coverage
            } else {
                self.coverage_sum / self.steps as f64
            },
            accumulated_rewards: self.accumulated,
            penalties: self.penalties,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_starts_at_window() {
        let ma = moving_average(&[1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(ma, vec![None, Some(1.5), Some(2.5), Some(3.5)]);
        let ma = moving_average(&(0..60).map(f64::from).collect::<Vec<_>>(), 50);
        assert!(ma[48].is_none());
        assert_eq!(ma[49], Some(24.5));
        assert_eq!(ma[59], Some(34.5));
    }

    #[test]
    fn csv_layout() {
        let mut rec = EpisodeRecorder::new(1, 2, 4, 0.2);
        let s1 = rec.record(0.25, vec![1.0, 2.0], 1);
        let s2 = rec.record(0.3, vec![0.5, 0.5], 0);
        let m = EpisodeMetrics {
            steps: vec![s1, s2],
            episodes: vec![rec.finish()],
        };
        let mut buf = Vec::new();
        m.write_steps_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            format!("{STEP_COLUMNS}\n1,1,0.25,2,3,1.5,1\n1,2,0.3,2,1,0.5,0\n")
        );
        let mut buf = Vec::new();
        m.write_episodes_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert_eq!(row, "1,2,4,0.2,0.3,0.275,2,4,1,,");
        assert_eq!(m.mean_final_coverage(), 0.3);
        assert_eq!(m.coverage_curve(), vec![0.25, 0.3]);
    }
}
