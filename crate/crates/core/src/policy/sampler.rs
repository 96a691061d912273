use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Training-state distribution in the camera frame. Forward velocity is
/// `v_m - X` with `X` log-normal, so it is skewed toward `v_m` and bounded by it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSampler {
    pub sigma: f64,
    pub mu: f64,
    pub v_m: f64,
    pub lateral_std: f64,
    pub acceleration_std: f64,
}

impl StateSampler {
    /// `v_m = 1.1 v_max`, `mu = ln(0.4 v_m)`, `sigma = 0.6`, lateral 0.3 v_max, acceleration 0.3 a_max.
    pub fn for_limits(v_max: f64, a_max: f64) -> Result<Self> {
        let v_m = 1.1 * v_max;
        let s = Self { sigma: 0.6, mu: (0.4 * v_m).ln(), v_m, lateral_std: 0.3 * v_max, acceleration_std: 0.3 * a_max };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_m > 0.0 && self.sigma > 0.0 && self.mu.is_finite()) {
            return Err(invalid("sampler needs v_m > 0, sigma > 0 and finite mu"));
        }
        if !(self.lateral_std >= 0.0 && self.acceleration_std >= 0.0) {
            return Err(invalid("sampler standard deviations must be non-negative"));
        }
        Ok(())
    }

    /// Density of the forward velocity.
    pub fn forward_pdf(&self, v: f64) -> f64 {
        let x = self.v_m - v;
        if x <= 0.0 {
            return 0.0;
        }
        let z = (x.ln() - self.mu) / self.sigma;
        (-0.5 * z * z).exp() / (x * self.sigma * (2.0 * std::f64::consts::PI).sqrt())
    }

    /// Camera-frame `(velocity, acceleration)`.
    pub fn sample(&self, rng: &mut impl Rng) -> (Vector3<f64>, Vector3<f64>) {
        let ln = LogNormal::new(self.mu, self.sigma).expect("validated");
        let lat = Normal::new(0.0, self.lateral_std).expect("validated");
        let acc = Normal::new(0.0, self.acceleration_std).expect("validated");
        let forward = self.v_m - ln.sample(rng);
        let v = Vector3::new(forward, lat.sample(rng), lat.sample(rng));
        let a = Vector3::new(acc.sample(rng), acc.sample(rng), acc.sample(rng));
        (v, a)
    }
}

/// Convenience wrapper used by the dataset generator.
pub fn sample_training_state(sampler: &StateSampler, rng: &mut impl Rng) -> (Vector3<f64>, Vector3<f64>) {
    sampler.sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pdf_integrates_to_one() {
        let s = StateSampler::for_limits(5.0, 5.0).unwrap();
        let lo = -40.0;
        let n = 400_000;
        let h = (s.v_m - lo) / n as f64;
        let total: f64 = (0..n).map(|i| s.forward_pdf(lo + (i as f64 + 0.5) * h) * h).sum();
        assert!((total - 1.0).abs() < 1e-4, "{total}");
        assert_eq!(s.forward_pdf(s.v_m + 0.1), 0.0);
    }
}
