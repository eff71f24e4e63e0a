//! Central finite-difference checks of backpropagated gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, Mode, Tensor};
use crate::error::{Error, Result};

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error; below it the comparison is
/// effectively absolute.
pub const RELATIVE_FLOOR: f64 = 1e-4;
pub const MAX_CHECKED_PARAMS: usize = 10_000;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Entries whose step crossed a ReLU-style kink: the one-sided
    /// differences disagree and backprop matches one of them.
    pub kinks: usize,
    /// Description of the entry with the largest error.
    pub worst: Option<String>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} entries, max relative error {:.3e} (tolerance {:.0e}), {} kink crossings{}",
            self.checked,
            self.max_rel_error,
            self.tolerance,
            self.kinks,
            self.worst.as_ref().map(|w| format!(", worst at {w}")).unwrap_or_default()
        )
    }
}

/// Compares `analytic[i]` against `(f(i, +h) - f(i, -h)) / 2h`, where
/// `loss_at(i, delta)` evaluates the scalar loss with entry `i` shifted by
/// `delta`. When the central difference straddles a kink, the entry is
/// accepted if backprop matches one of the one-sided differences.
pub fn compare_with_finite_differences(
    analytic: &[f64],
    mut loss_at: impl FnMut(usize, f64) -> Result<f64>,
    describe: impl Fn(usize) -> String,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        kinks: 0,
        worst: None,
        tolerance,
    };
    for (i, &a) in analytic.iter().enumerate() {
        let plus = loss_at(i, FD_STEP)?;
        let minus = loss_at(i, -FD_STEP)?;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let mut err = relative_error(a, numeric);
        report.checked += 1;
        if err >= tolerance {
            let centre = loss_at(i, 0.0)?;
            let forward = (plus - centre) / FD_STEP;
            let backward = (centre - minus) / FD_STEP;
            let one_sided = relative_error(a, forward).min(relative_error(a, backward));
            if relative_error(forward, backward) >= tolerance && one_sided < tolerance {
                report.kinks += 1;
                err = one_sided;
            }
        }
        if err > report.max_rel_error || !err.is_finite() {
            report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
            report.worst = Some(format!("{} (backprop {a:.6e}, numeric {numeric:.6e})", describe(i)));
        }
    }
    Ok(report)
}

fn projected_loss(out: &Tensor, projection: &Tensor) -> f64 {
    out.iter().zip(projection.iter()).map(|(a, b)| a * b).sum()
}

/// Checks every parameter and input gradient of `model` for the scalar loss
/// `sum(forward(input) * r)` with a seeded random projection `r`.
pub fn grad_check<L: Layer>(
    model: &mut L,
    input: &Tensor,
    mode: Mode,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let count = model.param_count();
    if count > MAX_CHECKED_PARAMS {
        return Err(Error::InvalidArgument(format!(
            "gradient check limited to {MAX_CHECKED_PARAMS} parameters, model has {count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = model.forward(input, mode)?;
    let projection = out.mapv(|_| rng.random_range(-1.0..1.0));

    model.zero_grad();
    model.forward(input, mode)?;
    let input_grad = model.backward(&projection)?;

    let mut analytic = Vec::with_capacity(count + input.len());
    let mut names = Vec::with_capacity(count + input.len());
    for (pi, p) in model.params().iter().enumerate() {
        for (e, &g) in p.grad.iter().enumerate() {
            analytic.push(g);
            names.push((Some(pi), e, p.name));
        }
    }
    for (e, &g) in input_grad.iter().enumerate() {
        analytic.push(g);
        names.push((None, e, "input"));
    }

    let base_input = input.as_standard_layout().into_owned();
    compare_with_finite_differences(
        &analytic,
        |i, delta| {
            let (param, entry, _) = names[i];
            match param {
                Some(pi) => {
                    let set = |m: &mut L, v: Option<f64>| {
                        let mut params = m.params_mut();
                        let slot = params[pi].value.iter_mut().nth(entry).unwrap();
                        let old = *slot;
                        *slot = v.unwrap_or(old + delta);
                        old
                    };
                    let original = set(model, None);
                    let loss = model.forward(&base_input, mode).map(|o| projected_loss(&o, &projection));
                    set(model, Some(original));
                    loss
                }
                None => {
                    let mut x = base_input.clone();
                    *x.iter_mut().nth(entry).unwrap() += delta;
                    model.forward(&x, mode).map(|o| projected_loss(&o, &projection))
                }
            }
        },
        |i| {
            let (param, entry, name) = names[i];
            match param {
                Some(pi) => format!("param #{pi} ({name}) entry {entry}"),
                None => format!("input entry {entry}"),
            }
        },
        tolerance,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shifted_relu(x: f64) -> f64 {
        (x - 3e-6).max(0.0)
    }

    #[test]
    fn step_across_a_kink_is_accepted() {
        let report =
            compare_with_finite_differences(&[0.0], |_, d| Ok(shifted_relu(d)), |_| "x".into(), 1e-4).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.kinks, 1);
    }

    #[test]
    fn wrong_gradient_near_a_kink_still_fails() {
        let report =
            compare_with_finite_differences(&[0.5], |_, d| Ok(shifted_relu(d)), |_| "x".into(), 1e-4).unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn smooth_function() {
        let report =
            compare_with_finite_differences(&[3.0], |_, d| Ok((1.0 + d).powi(3)), |_| "x".into(), 1e-4).unwrap();
        assert!(report.passed());
        assert_eq!(report.kinks, 0);
    }
}
