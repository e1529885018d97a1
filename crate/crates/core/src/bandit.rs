//! UCB arm selection with per-arm reward offsets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Offsets added to the success, uncertainty and explore arm rewards.
pub const DEFAULT_OFFSETS: [f64; 3] = [0.35, -0.05, 0.6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    pub counts: Vec<u64>,
    pub sums: Vec<f64>,
    /// Wall-clock time spent per arm, milliseconds.
    pub time_ms: Vec<f64>,
    pub offsets: Vec<f64>,
    pub ucb_c: f64,
    pub total: u64,
}

impl BanditState {
    pub fn new(offsets: Vec<f64>, ucb_c: f64) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::InvalidArgument("bandit needs at least one arm".into()));
        }
        if !(ucb_c >= 0.0 && ucb_c.is_finite()) || offsets.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidArgument("bandit constants must be finite and ucb_c >= 0".into()));
        }
        let n = offsets.len();
        Ok(BanditState {
            counts: vec![0; n],
            sums: vec![0.0; n],
            time_ms: vec![0.0; n],
            offsets,
            ucb_c,
            total: 0,
        })
    }

    pub fn arms(&self) -> usize {
        self.counts.len()
    }

    pub fn mean(&self, arm: usize) -> Option<f64> {
        (self.counts[arm] > 0).then(|| self.sums[arm] / self.counts[arm] as f64)
    }

    pub fn means(&self) -> Vec<Option<f64>> {
        (0..self.arms()).map(|a| self.mean(a)).collect()
    }

    /// First unpulled arm, else the highest upper confidence bound; ties go
    /// to the lower index.
    pub fn select(&self) -> usize {
        if let Some(a) = self.counts.iter().position(|&n| n == 0) {
            return a;
        }
        let ln_t = (self.total as f64).ln();
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for a in 0..self.arms() {
            let n = self.counts[a] as f64;
            let score = self.sums[a] / n + self.ucb_c * (2.0 * ln_t / n).sqrt();
            if score > best_score {
                best = a;
                best_score = score;
            }
        }
        best
    }

    /// Records `raw + offset[arm]` and returns it.
    pub fn update(&mut self, arm: usize, raw: f64) -> Result<f64> {
        if arm >= self.arms() {
            return Err(Error::InvalidArgument(format!("arm {arm} out of range")));
        }
        if !(0.0..=1.0).contains(&raw) {
            return Err(Error::InvalidArgument(format!("raw reward {raw} outside [0, 1]")));
        }
        let r = raw + self.offsets[arm];
        self.counts[arm] += 1;
        self.sums[arm] += r;
        self.total += 1;
        Ok(r)
    }

    pub fn add_time(&mut self, arm: usize, ms: f64) {
        self.time_ms[arm] += ms;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with(means: &[f64], counts: &[u64]) -> BanditState {
        let mut s = BanditState::new(vec![0.0; means.len()], 1.0).unwrap();
        s.counts = counts.to_vec();
        s.sums = means.iter().zip(counts).map(|(m, n)| m * *n as f64).collect();
        s.total = counts.iter().sum();
        s
    }

    #[test]
    fn unpulled_arms_first() {
        let s = BanditState::new(DEFAULT_OFFSETS.to_vec(), 1.0).unwrap();
        assert_eq!(s.select(), 0);
        assert_eq!(with(&[0.0, 0.0, 0.0], &[3, 0, 0]).select(), 1);
    }

    #[test]
    fn bonus_and_tie_break() {
        assert_eq!(with(&[0.9, 0.9, 0.9], &[100, 10, 10]).select(), 1);
        assert_eq!(with(&[1.0, 0.0, 0.0], &[1, 1, 1]).select(), 0);
    }

    #[test]
    fn offsets_are_added() {
        let mut s = BanditState::new(DEFAULT_OFFSETS.to_vec(), 1.0).unwrap();
        assert!((s.update(0, 0.6).unwrap() - 0.95).abs() < 1e-15);
        assert!((s.update(1, 0.6).unwrap() - 0.55).abs() < 1e-15);
        assert_eq!(s.update(2, 0.0).unwrap(), 0.6);
        assert_eq!(s.total, 3);
        assert!(s.update(0, 1.5).is_err());
        assert!(s.update(7, 0.5).is_err());
    }
}
