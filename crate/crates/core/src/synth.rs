//! Seeded synthetic data: noisy polynomials and correlated, fractionally-noisy
//! multi-exponential correlators.
//!
//! Random numbers come from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64`, and standard normals from `rand_distr::StandardNormal`.
//! Samples are drawn row by row, coordinate by coordinate.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::SampleSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    /// `y(x) = Σⱼ cⱼ (x/x_scale)ʲ + η`, `η ~ N(0, noise_sigma²)` independent per point.
    PolynomialTruth {
        coeffs: Vec<f64>,
        x_scale: f64,
        noise_sigma: f64,
        x_values: Vec<f64>,
    },
    /// `y(t) = F(t)(1 + η(t))` with `F(t) = Σᵢ Aᵢ e^(−Eᵢ t)` and
    /// `η` Gaussian with variance `frac_noise_var` and correlation `ρ^|t−t'|`.
    CorrelatorTruth {
        amplitudes: Vec<f64>,
        energies: Vec<f64>,
        frac_noise_var: f64,
        rho: f64,
        t_values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    pub n_samples: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    /// Quadratic truth `1.80 − 0.53(x/16) + 0.31(x/16)²` on `x = 1..16`, unit noise.
    pub fn polynomial_benchmark(n_samples: usize, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::PolynomialTruth {
                coeffs: vec![1.80, -0.53, 0.31],
                x_scale: 16.0,
                noise_sigma: 1.0,
                x_values: (1..=16).map(f64::from).collect(),
            },
            n_samples,
            seed,
        }
    }

    /// Two-state truth `2.0e^(−0.8t) + 10.4e^(−1.16t)` on `t = 0..31`,
    /// fractional noise variance 0.09 and `ρ = 0.6`.
    pub fn correlator_benchmark(n_samples: usize, seed: u64) -> Self {
        Self {
            kind: GeneratorKind::CorrelatorTruth {
                amplitudes: vec![2.0, 10.4],
                energies: vec![0.8, 1.16],
                frac_noise_var: 0.09,
                rho: 0.6,
                t_values: (0..32).map(f64::from).collect(),
            },
            n_samples,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_samples(mut self, n_samples: usize) -> Self {
        self.n_samples = n_samples;
        self
    }

    pub fn abscissa(&self) -> &[f64] {
        match &self.kind {
            GeneratorKind::PolynomialTruth { x_values, .. } => x_values,
            GeneratorKind::CorrelatorTruth { t_values, .. } => t_values,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidGenerator(msg.to_string()));
        if self.n_samples < 2 {
            return bad("n_samples must be at least 2");
        }
        let x = self.abscissa();
        if x.is_empty() {
            return bad("abscissa is empty");
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return bad("abscissa must be strictly increasing");
        }
        match &self.kind {
            GeneratorKind::PolynomialTruth {
                noise_sigma,
                x_scale,
                ..
            } => {
                if noise_sigma.is_nan() || *noise_sigma <= 0.0 {
                    return bad("noise_sigma must be positive");
                }
                if !(x_scale.is_finite() && *x_scale != 0.0) {
                    return bad("x_scale must be finite and nonzero");
                }
            }
            GeneratorKind::CorrelatorTruth {
                amplitudes,
                energies,
                frac_noise_var,
                rho,
                ..
            } => {
                if amplitudes.len() != energies.len() {
                    return bad("amplitudes and energies differ in length");
                }
                if frac_noise_var.is_nan() || *frac_noise_var <= 0.0 {
                    return bad("frac_noise_var must be positive");
                }
                if rho.is_nan() || rho.abs() >= 1.0 {
                    return bad("|rho| must be below 1");
                }
            }
        }
        Ok(())
    }
}

/// Noiseless truth on the generator's abscissa.
pub fn truth_curve(spec: &GeneratorSpec) -> Vec<f64> {
    match &spec.kind {
        GeneratorKind::PolynomialTruth {
            coeffs,
            x_scale,
            x_values,
            ..
        } => x_values
            .iter()
            .map(|&x| coeffs.iter().rev().fold(0.0, |acc, &c| acc * (x / x_scale) + c))
            .collect(),
        GeneratorKind::CorrelatorTruth {
            amplitudes,
            energies,
            t_values,
            ..
        } => t_values
            .iter()
            .map(|&t| {
                amplitudes
                    .iter()
                    .zip(energies)
                    .map(|(a, e)| a * (-e * t).exp())
                    .sum()
            })
            .collect(),
    }
}

/// Draws `n_samples` noisy observations; identical seeds give identical output.
pub fn generate(spec: &GeneratorSpec) -> Result<SampleSet> {
    spec.validate()?;
    let truth = truth_curve(spec);
    let d = truth.len();
    let n = spec.n_samples;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let draw = |rng: &mut ChaCha20Rng| -> DVector<f64> {
        DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(rng)))
    };
    let samples = match &spec.kind {
        GeneratorKind::PolynomialTruth { noise_sigma, .. } => (0..n)
            .map(|_| {
                let z = draw(&mut rng);
                DVector::from_iterator(d, truth.iter().zip(z.iter()).map(|(f, e)| f + noise_sigma * e)).transpose()
            })
            .collect::<Vec<_>>(),
        GeneratorKind::CorrelatorTruth {
            frac_noise_var,
            rho,
            t_values,
            ..
        } => {
            let corr = DMatrix::from_fn(d, d, |i, j| rho.powf((t_values[i] - t_values[j]).abs()));
            let chol = corr.cholesky().ok_or(Error::NonPositiveDefiniteCorrelation)?;
            let l = chol.l() * frac_noise_var.sqrt();
            (0..n)
                .map(|_| {
                    let eta = &l * draw(&mut rng);
                    DVector::from_iterator(d, truth.iter().zip(eta.iter()).map(|(f, e)| f * (1.0 + e))).transpose()
                })
                .collect::<Vec<_>>()
        }
    };
    let matrix = DMatrix::from_rows(&samples);
    SampleSet::from_matrix(spec.abscissa().to_vec(), matrix, format!("seed={}", spec.seed))
}

/// `log C(t)/C(t+1)`; `None` where the ratio is not finite or the correlator
/// grows (`C(t+1) > C(t)`) or changes sign.
pub fn effective_mass(mean_correlator: &[f64]) -> Vec<Option<f64>> {
    mean_correlator
        .windows(2)
        .map(|w| {
            let ratio = w[0] / w[1];
            (ratio.is_finite() && ratio >= 1.0).then(|| ratio.ln())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn truth_values() {
        let p = truth_curve(&GeneratorSpec::polynomial_benchmark(10, 0));
        assert_relative_eq!(p[15], 1.58, max_relative = 1e-14);
        let c = truth_curve(&GeneratorSpec::correlator_benchmark(10, 0));
        assert_relative_eq!(c[0], 12.4, max_relative = 1e-14);
        let mut zero = GeneratorSpec::correlator_benchmark(10, 0);
        if let GeneratorKind::CorrelatorTruth { amplitudes, .. } = &mut zero.kind {
            amplitudes.iter_mut().for_each(|a| *a = 0.0);
        }
        assert!(truth_curve(&zero).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = GeneratorSpec::correlator_benchmark(20, 42);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate(&spec.clone().with_seed(43)).unwrap();
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn correlator_means_and_correlations() {
        let spec = GeneratorSpec::correlator_benchmark(100_000, 9);
        let s = generate(&spec).unwrap();
        let truth = truth_curve(&spec);
        let n = s.n_samples() as f64;
        // fractional noise with sd 0.3 → standard error 0.3·F/√N
        for (t, f) in truth.iter().enumerate() {
            let mean = s.samples().column(t).sum() / n;
            let se = 0.3 * f / n.sqrt();
            assert!((mean - f).abs() < 5.0 * se, "t={t}");
        }
        // η(t) = y/F − 1; corr(η(t), η(t+2)) ≈ 0.36
        let eta = |t: usize| -> Vec<f64> { s.samples().column(t).iter().map(|y| y / truth[t] - 1.0).collect() };
        let (e5, e7) = (eta(5), eta(7));
        let cov: f64 = e5.iter().zip(&e7).map(|(a, b)| a * b).sum::<f64>() / n;
        let v5: f64 = e5.iter().map(|a| a * a).sum::<f64>() / n;
        let v7: f64 = e7.iter().map(|a| a * a).sum::<f64>() / n;
        let r = cov / (v5 * v7).sqrt();
        assert!((r - 0.36).abs() < 5.0 * (1.0 - 0.36f64.powi(2)) / n.sqrt(), "{r}");
        // fractional spread is t-independent
        for t in [0, 10, 31] {
            let sd = (eta(t).iter().map(|a| a * a).sum::<f64>() / n).sqrt();
            assert!((sd - 0.3).abs() < 0.005, "t={t} sd={sd}");
        }
    }

    #[test]
    fn polynomial_means_converge() {
        for n in [100, 10_000] {
            let spec = GeneratorSpec::polynomial_benchmark(n, 17);
            let s = generate(&spec).unwrap();
            let truth = truth_curve(&spec);
            for (x, f) in truth.iter().enumerate() {
                let mean = s.samples().column(x).sum() / n as f64;
                // 3σ band per point; 4σ keeps the 16-point family-wise rate small
                assert!((mean - f).abs() < 4.0 / (n as f64).sqrt(), "n={n} x={x}");
            }
        }
    }

    #[test]
    fn effective_mass_cases() {
        let c: Vec<f64> = (0..10).map(|t| 3.0 * (-0.45 * t as f64).exp()).collect();
        for m in effective_mass(&c) {
            assert_relative_eq!(m.unwrap(), 0.45, max_relative = 1e-12);
        }
        let truth = truth_curve(&GeneratorSpec::correlator_benchmark(2, 0));
        let m = effective_mass(&truth);
        assert_eq!(m.len(), 31);
        assert!(m.windows(2).all(|w| w[1].unwrap() < w[0].unwrap()));
        assert!(m[20].unwrap() - 0.8 < 0.01);
        assert!(m[20].unwrap() > 0.8);
        let bumpy = effective_mass(&[1.0, 2.0, 1.0, -1.0]);
        assert_eq!(bumpy[0], None);
        assert_relative_eq!(bumpy[1].unwrap(), 2f64.ln());
        assert_eq!(bumpy[2], None);
    }

    #[test]
    fn invalid_specs() {
        let mut s = GeneratorSpec::correlator_benchmark(10, 0);
        if let GeneratorKind::CorrelatorTruth { rho, .. } = &mut s.kind {
            *rho = 1.0;
        }
        assert!(generate(&s).is_err());
        let mut s = GeneratorSpec::polynomial_benchmark(10, 0);
        if let GeneratorKind::PolynomialTruth { x_values, .. } = &mut s.kind {
            x_values.swap(0, 1);
        }
        assert!(generate(&s).is_err());
        assert!(generate(&GeneratorSpec::polynomial_benchmark(1, 0)).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = GeneratorSpec::correlator_benchmark(500, 3);
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"kind\":\"correlator_truth\""));
        assert_eq!(serde_json::from_str::<GeneratorSpec>(&text).unwrap(), s);
    }
}
