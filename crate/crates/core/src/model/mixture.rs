use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `ln Σ exp(vᵢ)` without overflow; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Diagonal-covariance Gaussian mixture over grasp configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub sigmas: Vec<Vec<f64>>,
}

impl MixtureParams {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, sigmas: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || sigmas.len() != k {
            return Err(Error::InvalidArgument("mixture needs K weights, means and sigmas".into()));
        }
        let d = means[0].len();
        if means.iter().chain(&sigmas).any(|v| v.len() != d) {
            return Err(Error::InvalidArgument("ragged mixture parameters".into()));
        }
        let finite = weights.iter().chain(means.iter().flatten()).chain(sigmas.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("mixture parameters"));
        }
        if weights.iter().any(|w| *w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("mixture weights must be a probability vector".into()));
        }
        if sigmas.iter().flatten().any(|s| *s <= 0.0) {
            return Err(Error::InvalidArgument("mixture sigmas must be positive".into()));
        }
        Ok(MixtureParams { weights, means, sigmas })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Per-component `ln πₖ + ln N(q; μₖ, diag σₖ²)`.
    fn component_terms(&self, q: &[f64]) -> Vec<f64> {
        (0..self.components())
            .map(|k| {
                let mut t = self.weights[k].ln();
                for ((x, m), s) in q.iter().zip(&self.means[k]).zip(&self.sigmas[k]) {
                    let z = (x - m) / s;
                    t -= 0.5 * z * z + s.ln() + 0.5 * LN_2PI;
                }
                t
            })
            .collect()
    }

    pub fn log_density(&self, q: &[f64]) -> f64 {
        log_sum_exp(&self.component_terms(q))
    }

    /// Log density and its gradient w.r.t. `q`.
    pub fn log_density_grad(&self, q: &[f64]) -> (f64, Vec<f64>) {
        let terms = self.component_terms(q);
        let lse = log_sum_exp(&terms);
        let mut grad = vec![0.0; q.len()];
        if lse.is_finite() {
            for (k, t) in terms.iter().enumerate() {
                let r = (t - lse).exp();
                if r == 0.0 {
                    continue;
                }
                for (i, g) in grad.iter_mut().enumerate() {
                    let s = self.sigmas[k][i];
                    *g -= r * (q[i] - self.means[k][i]) / (s * s);
                }
            }
        }
        (lse, grad)
    }

    /// Posterior component probabilities given `q`.
    pub fn responsibilities(&self, q: &[f64]) -> Vec<f64> {
        let terms = self.component_terms(q);
        let lse = log_sum_exp(&terms);
        terms.iter().map(|t| (t - lse).exp()).collect()
    }

    /// Ancestral sample: component by weight, then a diagonal Gaussian draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        // a zero-weight trailing component can never be chosen by the fallback
        while self.weights[k] == 0.0 && k > 0 {
            k -= 1;
        }
        self.means[k]
            .iter()
            .zip(&self.sigmas[k])
            .map(|(m, s)| {
                let z: f64 = StandardNormal.sample(rng);
                m + s * z
            })
            .collect()
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.sample(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn standard(d: usize) -> MixtureParams {
        MixtureParams::new(vec![1.0], vec![vec![0.0; d]], vec![vec![1.0; d]]).unwrap()
    }

    #[test]
    fn standard_normal_mode() {
        let m = standard(1);
        assert!((m.log_density(&[0.0]) + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn identical_components_collapse() {
        let one = MixtureParams::new(vec![1.0], vec![vec![0.3, -1.0]], vec![vec![0.5, 2.0]]).unwrap();
        let two = MixtureParams::new(
            vec![0.5, 0.5],
            vec![vec![0.3, -1.0], vec![0.3, -1.0]],
            vec![vec![0.5, 2.0], vec![0.5, 2.0]],
        )
        .unwrap();
        for q in [[0.0, 0.0], [1.0, -3.0], [10.0, 4.0]] {
            assert!((one.log_density(&q) - two.log_density(&q)).abs() < 1e-12);
        }
    }

    #[test]
    fn stable_far_from_the_mean() {
        let m = MixtureParams::new(
            vec![0.3, 0.7],
            vec![vec![0.0, 0.0], vec![1.0, 1.0]],
            vec![vec![1e-3, 1e-3], vec![0.1, 0.1]],
        )
        .unwrap();
        let v = m.log_density(&[1e6, -1e6]);
        assert!(v.is_finite() && v < -1e12);
        let (_, g) = m.log_density_grad(&[1e6, -1e6]);
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = MixtureParams::new(
            vec![0.2, 0.5, 0.3],
            vec![vec![0.0, 1.0], vec![-1.0, 0.5], vec![0.5, -0.5]],
            vec![vec![0.4, 0.7], vec![1.1, 0.3], vec![0.6, 0.6]],
        )
        .unwrap();
        let q = [0.2, 0.1];
        let (_, g) = m.log_density_grad(&q);
        for i in 0..2 {
            let mut up = q;
            let mut dn = q;
            up[i] += 1e-6;
            dn[i] -= 1e-6;
            let num = (m.log_density(&up) - m.log_density(&dn)) / 2e-6;
            assert!(crate::net::relative_error(g[i], num) < 1e-6);
        }
    }

    #[test]
    fn degenerate_weights_pick_first_component() {
        let m = MixtureParams::new(
            vec![1.0, 0.0],
            vec![vec![-5.0], vec![5.0]],
            vec![vec![0.1], vec![0.1]],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(m.sample_n(1000, &mut rng).iter().all(|s| s[0] < 0.0));
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(MixtureParams::new(vec![0.5], vec![vec![0.0]], vec![vec![1.0]]).is_err());
        assert!(MixtureParams::new(vec![1.0], vec![vec![0.0]], vec![vec![0.0]]).is_err());
        assert!(MixtureParams::new(vec![1.0], vec![vec![f64::NAN]], vec![vec![1.0]]).is_err());
    }
}
