use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Poisson, StandardNormal};

use crate::error::{Error, Result};

/// Seeded, platform-independent random stream (ChaCha8).
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

/// SplitMix64 finalizer; mixes a base seed with a stream tag.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream keyed by `tag`.
    pub fn fork(&self, tag: u64) -> Rng {
        Rng::new(derive_seed(self.seed, tag))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn uniform(&mut self, low: f64, high: f64) -> Result<f64> {
        if !(low.is_finite() && high.is_finite()) || low > high {
            return Err(Error::domain(format!("uniform({low}, {high}) is not a valid range")));
        }
        Ok(low + (high - low) * self.unit())
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Exponential with the given mean (rate `1/mean`).
    pub fn exponential(&mut self, mean: f64) -> Result<f64> {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::domain(format!("exponential mean must be positive, got {mean}")));
        }
        let d = Exp::new(1.0 / mean).map_err(|e| Error::domain(e.to_string()))?;
        Ok(d.sample(&mut self.inner))
    }

    /// `exp(N(mu, sigma²))`.
    pub fn lognormal(&mut self, mu: f64, sigma: f64) -> Result<f64> {
        if !(sigma >= 0.0 && sigma.is_finite() && mu.is_finite()) {
            return Err(Error::domain(format!("lognormal({mu}, {sigma}) is invalid")));
        }
        let d = LogNormal::new(mu, sigma).map_err(|e| Error::domain(e.to_string()))?;
        Ok(d.sample(&mut self.inner))
    }

    /// Negative-binomial count with mean `mu` and variance `mu + mu²/phi`,
    /// drawn as Poisson(Gamma(shape = phi, scale = mu/phi)).
    pub fn gamma_poisson(&mut self, mu: f64, phi: f64) -> Result<u64> {
        if !(mu > 0.0 && mu.is_finite()) || !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::domain(format!(
                "gamma-Poisson needs mu > 0 and phi > 0, got mu={mu}, phi={phi}"
            )));
        }
        let gamma = Gamma::new(phi, mu / phi).map_err(|e| Error::domain(e.to_string()))?;
        let lambda: f64 = gamma.sample(&mut self.inner);
        if lambda <= 0.0 {
            return Ok(0);
        }
        let poisson = Poisson::new(lambda).map_err(|e| Error::domain(e.to_string()))?;
        let k: f64 = poisson.sample(&mut self.inner);
        Ok(k as u64)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Bernoulli keep-mask scaled by `1/(1-p)` (inverted dropout).
    pub fn dropout_mask(&mut self, rows: usize, cols: usize, p: f64) -> super::Matrix {
        let keep = 1.0 / (1.0 - p);
        super::Matrix::from_fn(rows, cols, |_, _| if self.unit() < p { 0.0 } else { keep })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(99);
        let mut b = Rng::new(99);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        assert_ne!(Rng::new(1).next_u64(), Rng::new(2).next_u64());
    }

    #[test]
    fn gamma_poisson_moments() {
        let mut rng = Rng::new(2024);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| rng.gamma_poisson(50.0, 1.0).unwrap() as f64)
            .collect();
        let (mean, var) = moments(&xs);
        assert!((49.0..=51.0).contains(&mean), "mean {mean}");
        assert!((2420.0..=2680.0).contains(&var), "var {var}");
    }

    #[test]
    fn gamma_poisson_near_poisson_limit() {
        let mut rng = Rng::new(5);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| rng.gamma_poisson(5.0, 1e9).unwrap() as f64)
            .collect();
        let (_, var) = moments(&xs);
        assert!((var - 5.0).abs() / 5.0 < 0.05, "var {var}");
    }

    #[test]
    fn gamma_poisson_rejects_bad_parameters() {
        let mut rng = Rng::new(0);
        assert!(rng.gamma_poisson(0.0, 1.0).is_err());
        assert!(rng.gamma_poisson(1.0, -1.0).is_err());
    }

    #[test]
    fn distribution_shapes() {
        let mut rng = Rng::new(11);
        for _ in 0..10_000 {
            let u = rng.uniform(0.2, 2.2).unwrap();
            assert!((0.2..=2.2).contains(&u));
        }
        let mut ln: Vec<f64> = (0..100_000).map(|_| rng.lognormal(0.0, 1.0).unwrap()).collect();
        ln.sort_by(f64::total_cmp);
        let median = 0.5 * (ln[49_999] + ln[50_000]);
        assert!((median - 1.0).abs() < 0.05, "median {median}");
        let ex: Vec<f64> = (0..100_000).map(|_| rng.exponential(25.0).unwrap()).collect();
        let (mean, _) = moments(&ex);
        assert!((mean - 25.0).abs() / 25.0 < 0.02, "mean {mean}");
        assert!(rng.uniform(2.0, 1.0).is_err());
        assert!(rng.exponential(0.0).is_err());
    }
}
