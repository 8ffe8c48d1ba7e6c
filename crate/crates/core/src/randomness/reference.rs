//! Reference distribution of the geometric-mean response of a nominal fleet.
//!
//! For a device whose referenced features deviate by `σ·z` with `z` a
//! standard normal truncated at ±3, each normalized value is `|z|/6·10⁶`, so
//! `ln G = ln(10⁶/6) + (1/K)·Σ ln|zᵢ|`. The density of `ln|z|` is tabulated on
//! a grid and convolved `K` times; the resulting CDF maps `G` to a uniform
//! variate.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::devicegen::TRUNCATION_SIGMAS;
use crate::error::{Error, Result};

const GRID_LOW: f64 = -20.0;
const GRID_STEP: f64 = 0.004;

#[derive(Debug, Clone, PartialEq)]
pub struct GeoMeanReference {
    k: usize,
    /// Lower edge of the support of `Σ ln|zᵢ|`.
    origin: f64,
    step: f64,
    /// CDF at the right edge of each cell.
    cdf: Vec<f64>,
}

impl GeoMeanReference {
    /// Reference for a geometric mean over `k` referenced features.
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("reference needs at least one feature"));
        }
        let high = TRUNCATION_SIGMAS.ln();
        let cells = ((high - GRID_LOW) / GRID_STEP).ceil() as usize;
        let step = (high - GRID_LOW) / cells as f64;
        let norm = Normal::standard();
        let mass_total = 2.0 * norm.cdf(TRUNCATION_SIGMAS) - 1.0;
        // P(ln|z| in cell) = 2·(Φ(e^b) − Φ(e^a)) / mass_total
        let mut base: Vec<f64> = (0..cells)
            .map(|i| {
                let a = (GRID_LOW + i as f64 * step).exp();
                let b = (GRID_LOW + (i + 1) as f64 * step).exp();
                let m = 2.0 * (norm.cdf(b) - norm.cdf(a)) / mass_total;
                if m > 0.0 {
                    m
                } else {
                    2.0 * norm.pdf(a) * (b - a) / mass_total
                }
            })
            .collect();
        // mass below the grid
        base[0] += 2.0 * (norm.cdf(GRID_LOW.exp()) - 0.5) / mass_total;
        let mut pmf = base.clone();
        for _ in 1..k {
            let mut next = vec![0.0; pmf.len() + base.len() - 1];
            for (i, &a) in pmf.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (j, &b) in base.iter().enumerate() {
                    next[i + j] += a * b;
                }
            }
            pmf = next;
        }
        let total: f64 = pmf.iter().sum();
        let mut acc = 0.0;
        let cdf = pmf
            .iter()
            .map(|m| {
                acc += m / total;
                acc.min(1.0)
            })
            .collect();
        // Masses sit at cell centres, so index i of the k-fold sum is centred
        // on k·low + (i + k/2)·step.
        Ok(GeoMeanReference {
            k,
            origin: k as f64 * GRID_LOW + (k as f64 - 1.0) / 2.0 * step,
            step,
            cdf,
        })
    }

    pub fn features(&self) -> usize {
        self.k
    }

    /// `P(G ≤ g)` for a nominal device.
    pub fn cdf(&self, g: f64) -> f64 {
        if !(g > 0.0) {
            return 0.0;
        }
        let s = self.k as f64 * (g.ln() - (1e6f64 / 6.0).ln());
        let x = (s - self.origin) / self.step;
        if x <= 0.0 {
            return 0.0;
        }
        let i = x.floor() as usize;
        if i >= self.cdf.len() {
            return 1.0;
        }
        let left = if i == 0 { 0.0 } else { self.cdf[i - 1] };
        left + (x - i as f64) * (self.cdf[i] - left)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devicegen::Param;
    use crate::seed::rng_from_seed;

    #[test]
    fn cdf_is_monotone_and_bounded() {
        let r = GeoMeanReference::new(3).unwrap();
        let mut prev = 0.0;
        for i in 1..200 {
            let g = i as f64 * 3000.0;
            let c = r.cdf(g);
            assert!(c >= prev && (0.0..=1.0).contains(&c));
            prev = c;
        }
        assert_eq!(r.cdf(0.0), 0.0);
        assert_eq!(r.cdf(600_000.0), 1.0);
    }

    #[test]
    fn matches_monte_carlo() {
        let r = GeoMeanReference::new(3).unwrap();
        let p = Param::new(0.0, 1.0);
        let mut rng = rng_from_seed(5);
        let n = 20_000;
        let mut g: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = (0..3).map(|_| (p.sample(&mut rng).abs() / 6.0 * 1e6).ln()).sum();
                (s / 3.0).exp()
            })
            .collect();
        g.sort_by(f64::total_cmp);
        for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let x = g[(q * n as f64) as usize];
            assert!((r.cdf(x) - q).abs() < 0.015, "q {q} cdf {}", r.cdf(x));
        }
    }
}
