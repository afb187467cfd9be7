//! Central-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Model, ModelInput, Mode};
use crate::error::Result;
use crate::train::loss::{bce_with_logits, bce_with_logits_grad};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Largest `|a − n|` over all checked coordinates.
    pub max_abs_error: f64,
    /// Largest relative error among coordinates with
    /// `max(|a|, |n|) ≥ SIGNIFICANT_GRADIENT`. Below that scale the central
    /// difference is dominated by roundoff in the loss (about `u·|L|/ε`).
    pub max_relative_error_significant: f64,
}

/// Gradient magnitude above which central differences at `ε = 1e−5` resolve
/// four significant digits in double precision.
pub const SIGNIFICANT_GRADIENT: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, 1e−8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic[i]` with `(f(θ + εe_i) − f(θ − εe_i)) / 2ε` for every
/// `i` in `coords`. `f` receives the perturbed coordinate and its value; the
/// caller restores nothing, `f` must evaluate at `θ` with only that
/// coordinate changed.
pub fn check_coordinates(
    theta: &[f64],
    analytic: &[f64],
    coords: impl IntoIterator<Item = usize>,
    eps: f64,
    mut f: impl FnMut(usize, f64) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        max_abs_error: 0.0,
        max_relative_error_significant: 0.0,
    };
    for i in coords {
        let plus = f(i, theta[i] + eps);
        let minus = f(i, theta[i] - eps);
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_relative_error || report.checked == 0 {
            report.max_relative_error = err;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
        report.max_abs_error = report.max_abs_error.max((analytic[i] - numeric).abs());
        if analytic[i].abs().max(numeric.abs()) >= SIGNIFICANT_GRADIENT {
            report.max_relative_error_significant = report.max_relative_error_significant.max(err);
        }
        report.checked += 1;
    }
    report
}

/// Which parameters to perturb.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinates {
    All,
    /// A seeded random subset of this size (or all, if smaller).
    Sample { count: usize, seed: u64 },
}

/// Gradient check of the class-weighted BCE loss of one sample in eval mode.
pub fn gradient_check(
    model: &Model,
    input: &ModelInput,
    label: bool,
    pos_weight: f64,
    eps: f64,
    coords: Coordinates,
) -> Result<GradCheckReport> {
    let cache = model.forward_cached(input, Mode::Eval)?;
    let mut grads = model.params.zeros_like();
    model.backward(&cache, bce_with_logits_grad(cache.logit, label, pos_weight), &mut grads);
    let analytic = grads.to_flat();
    let theta = model.params.to_flat();
    let n = theta.len();
    let indices: Vec<usize> = match coords {
        Coordinates::All => (0..n).collect(),
        Coordinates::Sample { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = sample(&mut rng, n, count.min(n)).into_vec();
            v.sort_unstable();
            v
        }
    };
    let mut probe = model.clone();
    let mut failure = None;
    let report = check_coordinates(&theta, &analytic, indices, eps, |i, value| {
        probe.params.flat_set(i, value);
        let out = probe.forward(input, Mode::Eval);
        probe.params.flat_set(i, theta[i]);
        match out {
            Ok(z) => bce_with_logits(z, label, pos_weight),
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{tiny_config, Fusion, ModelParams};
    use ndarray::{Array1, Array2};

    fn input(tv: usize, ta: usize) -> ModelInput {
        ModelInput {
            visual: Array2::from_shape_fn((tv, 3), |(t, c)| ((t * 3 + c) as f64 * 0.9).sin().abs()),
            audio: Array2::from_shape_fn((ta, 4), |(t, c)| ((t * 5 + c) as f64 * 0.4).cos()),
            text: Array1::from_shape_fn(5, |c| 0.3 - c as f64 * 0.15),
        }
    }

    #[test]
    fn quadratic_is_exact() {
        // f(θ) = Σ c_i θ_i² + θ_0 θ_1, gradient known in closed form
        let theta = vec![0.3, -1.2, 2.0, 0.7];
        let c = [1.5, -0.5, 2.0, 0.25];
        let f = |t: &[f64]| -> f64 {
            t.iter().zip(c).map(|(x, c)| c * x * x).sum::<f64>() + t[0] * t[1]
        };
        let mut grad: Vec<f64> = theta.iter().zip(c).map(|(x, c)| 2.0 * c * x).collect();
        grad[0] += theta[1];
        grad[1] += theta[0];
        let mut work = theta.clone();
        let r = check_coordinates(&theta, &grad, 0..4, 1e-5, |i, v| {
            work[i] = v;
            let out = f(&work);
            work[i] = theta[i];
            out
        });
        assert!(r.max_relative_error < 1e-9, "{r:?}");
        assert_eq!(r.checked, 4);
    }

    #[test]
    fn full_model_all_variants() {
        for (k, fusion) in Fusion::ALL.into_iter().enumerate() {
            let m = Model::new(tiny_config(fusion), 40 + k as u64).unwrap();
            let r = gradient_check(&m, &input(4, 4), k % 2 == 0, 1.7, 1e-5, Coordinates::All).unwrap();
            assert!(r.max_relative_error_significant < 1e-4, "{fusion:?}: {r:?}");
            assert!(r.max_abs_error < 1e-9, "{fusion:?}: {r:?}");
            assert_eq!(r.checked, m.params.num_params());
        }
    }

    #[test]
    fn windowed_and_unimodal() {
        let mut cfg = tiny_config(Fusion::Divergence);
        cfg.unimodal = Some(crate::model::Modality::Audio);
        let m = Model::new(cfg, 5).unwrap();
        let r = gradient_check(&m, &input(2, 6), true, 1.0, 1e-5, Coordinates::All).unwrap();
        assert!(r.max_relative_error_significant < 1e-4, "{r:?}");
        assert!(r.max_abs_error < 1e-9, "{r:?}");
    }

    #[test]
    fn zero_model_bias_gradients() {
        let cfg = tiny_config(Fusion::Implicit);
        let m = Model::from_parts(cfg.clone(), ModelParams::zeros(&cfg)).unwrap();
        let names: Vec<(String, usize)> = m.params.named().into_iter().map(|(n, v)| (n, v.len())).collect();
        let mut offset = 0;
        let mut bias_coords = Vec::new();
        for (name, len) in names {
            if name.ends_with("bias") {
                bias_coords.extend(offset..offset + len);
            }
            offset += len;
        }
        let cache = m.forward_cached(&input(3, 2), Mode::Eval).unwrap();
        let mut g = m.params.zeros_like();
        m.backward(&cache, bce_with_logits_grad(cache.logit, true, 1.0), &mut g);
        let analytic = g.to_flat();
        let theta = m.params.to_flat();
        let mut probe = m.clone();
        let x = input(3, 2);
        let r = check_coordinates(&theta, &analytic, bias_coords, 1e-5, |i, v| {
            probe.params.flat_set(i, v);
            let z = probe.forward(&x, Mode::Eval).unwrap();
            probe.params.flat_set(i, theta[i]);
            bce_with_logits(z, true, 1.0)
        });
        let worst_abs = (r.analytic - r.numeric).abs();
        assert!(r.max_relative_error < 1e-9 || worst_abs < 1e-9, "{r:?}");
    }

    #[test]
    fn sampled_coordinates_on_full_size_model() {
        let cfg = crate::model::ModelConfig::default();
        let m = Model::new(cfg, 9).unwrap();
        let x = ModelInput {
            visual: Array2::from_shape_fn((3, 20), |(t, c)| ((t + c) as f64 * 0.21).sin().abs()),
            audio: Array2::from_shape_fn((2, 768), |(t, c)| ((t * 768 + c) as f64 * 0.013).cos()),
            text: Array1::from_shape_fn(768, |c| (c as f64 * 0.07).sin()),
        };
        let r = gradient_check(&m, &x, false, 2.0, 1e-5, Coordinates::Sample { count: 150, seed: 1 }).unwrap();
        assert_eq!(r.checked, 150);
        assert!(r.max_relative_error_significant < 1e-4, "{r:?}");
        assert!(r.max_abs_error < 1e-9, "{r:?}");
    }
}
