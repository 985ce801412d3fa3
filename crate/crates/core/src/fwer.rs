//! Family-wise and pairwise error rates and boundary calibration.

use crate::arm::{design_tables, grid_sum, Numerics};
use crate::design::{Boundaries, CalibratedDesign, DesignSpec, EffectConfig, Schedule};
use crate::error::{Error, Result};
use crate::mvn::chain_prefix_cdf;
use crate::quadrature::HermiteRule;
use crate::roots::solve_monotone;

/// Probability that no null hypothesis is rejected under `theta`,
/// integrating over all control increments.
pub fn non_rejection_prob(design: &CalibratedDesign, theta: &EffectConfig, numerics: &Numerics) -> Result<f64> {
    theta.check(design.n_arms())?;
    let rule = HermiteRule::new(numerics.nodes_per_dim)?;
    non_rejection_with_rule(design, &theta.theta, &rule, numerics.mvn_tol)
}

fn non_rejection_with_rule(design: &CalibratedDesign, theta: &[f64], rule: &HermiteRule, tol: f64) -> Result<f64> {
    let tabs = design_tables(design, theta, rule, tol)?;
    let p = grid_sum(rule, design.schedule.control_stages(), |idx, _| {
        tabs.iter().map(|t| t.not_rejected(idx)).product()
    });
    if !p.is_finite() {
        return Err(Error::NonFinite { point: vec![], value: p });
    }
    Ok(p)
}

/// FWER under the global null.
pub fn fwer(design: &CalibratedDesign, numerics: &Numerics) -> Result<f64> {
    Ok(1.0 - non_rejection_prob(design, &EffectConfig::global_null(design.n_arms()), numerics)?)
}

/// Pairwise error rate of arm `k`: the probability of rejecting its null
/// when no other arm can stop the trial.
pub fn pwer(design: &CalibratedDesign, k: usize, numerics: &Numerics) -> Result<f64> {
    if k >= design.n_arms() {
        return Err(Error::Shape(format!("arm index {k} out of range")));
    }
    pwer_bounds(&design.schedule, k, &design.boundaries.lower[k], &design.boundaries.upper[k], numerics.mvn_tol)
}

/// Pairwise error rate for explicit boundaries. The arm's statistics are
/// a Brownian motion in the information `1 / (1/n + 1/Delta)`.
pub fn pwer_bounds(schedule: &Schedule, k: usize, lower: &[f64], upper: &[f64], tol: f64) -> Result<f64> {
    let jn = schedule.stages(k);
    if lower.len() != jn || upper.len() != jn {
        return Err(Error::Shape(format!("arm {} needs {jn} boundary values", k + 1)));
    }
    let info: Vec<f64> = (0..jn)
        .map(|j| 1.0 / (1.0 / schedule.n_active[k][j] + 1.0 / schedule.concurrent_control(k, j)))
        .collect();
    let rho: Vec<f64> = info.windows(2).map(|w| (w[0] / w[1]).sqrt()).collect();
    let mut accept = 0.0;
    for j in 0..jn {
        accept += chain_prefix_cdf(&rho[..j], &lower[..j], &upper[..j], [lower[j]], tol)[0];
    }
    Ok((1.0 - accept).max(0.0))
}

/// How the FWER is shared between arms: Algorithm-1-style calibration sets
/// every arm's shape parameter so that `arm_error` equals that of the first
/// arm. `arm_error` must decrease in the arm's shape parameter.
pub trait ErrorSplit {
    fn arm_error(&self, schedule: &Schedule, boundaries: &Boundaries, k: usize, tol: f64) -> Result<f64>;
}

/// Equal pairwise error rates across arms.
#[derive(Debug, Clone, Copy, Default)]
pub struct EqualPwer;

impl ErrorSplit for EqualPwer {
    fn arm_error(&self, schedule: &Schedule, boundaries: &Boundaries, k: usize, tol: f64) -> Result<f64> {
        pwer_bounds(schedule, k, &boundaries.lower[k], &boundaries.upper[k], tol)
    }
}

/// Calibrates shape parameters with equal pairwise error rates so that the
/// global-null FWER equals `spec.alpha`.
pub fn calibrate_boundaries(spec: &DesignSpec, schedule: &Schedule, numerics: &Numerics) -> Result<Boundaries> {
    calibrate_with(spec, schedule, numerics, &EqualPwer, None)
}

/// Iterative calibration: a common parameter meeting the FWER target, then
/// repeatedly (i) each arm's parameter set to match the first arm's error
/// share and (ii) all parameters rescaled by a common factor to meet the
/// FWER target, until no parameter moves by more than `eps_boundary`.
/// `init` warm-starts the search.
pub fn calibrate_with(
    spec: &DesignSpec,
    schedule: &Schedule,
    numerics: &Numerics,
    split: &dyn ErrorSplit,
    init: Option<&[f64]>,
) -> Result<Boundaries> {
    spec.validate()?;
    numerics.validate()?;
    schedule.validate()?;
    let k_arms = spec.n_arms;
    if schedule.n_arms() != k_arms {
        return Err(Error::Shape("schedule and spec disagree on arm count".into()));
    }
    let rule = HermiteRule::new(numerics.nodes_per_dim)?;
    let tol = numerics.mvn_tol;
    let a_tol = (numerics.eps_boundary * 0.01).max(1e-9);
    let null = vec![0.0; k_arms];
    let fwer_at = |a: &[f64]| -> Result<f64> {
        let b = Boundaries::from_shapes(&spec.shapes, a, schedule)?;
        let d = CalibratedDesign { spec: spec.clone(), schedule: schedule.clone(), boundaries: b };
        Ok(1.0 - non_rejection_with_rule(&d, &null, &rule, tol)?)
    };

    let mut a: Vec<f64> = match init {
        Some(v) if v.len() == k_arms && v.iter().all(|&x| x > 0.0) => v.to_vec(),
        _ => {
            let c = solve_monotone(
                |x| fwer_at(&vec![x; k_arms]),
                spec.alpha,
                1.0,
                4.0,
                1e-3,
                100.0,
                a_tol,
                "common shape parameter",
            )?;
            vec![c; k_arms]
        }
    };
    if k_arms == 1 {
        let c = solve_monotone(|x| fwer_at(&[x]), spec.alpha, a[0] * 0.99, a[0] * 1.01, 1e-3, 100.0, a_tol, "shape parameter")?;
        return Boundaries::from_shapes(&spec.shapes, &[c], schedule);
    }

    let mut last_change = f64::INFINITY;
    for _ in 0..numerics.max_iter {
        let prev = a.clone();
        let b0 = Boundaries::from_shapes(&spec.shapes, &a, schedule)?;
        let target = split.arm_error(schedule, &b0, 0, tol)?;
        for k in 1..k_arms {
            let mut trial = a.clone();
            a[k] = solve_monotone(
                |x| {
                    trial[k] = x;
                    let b = Boundaries::from_shapes(&spec.shapes, &trial, schedule)?;
                    split.arm_error(schedule, &b, k, tol)
                },
                target,
                a[k] * 0.99,
                a[k] * 1.01,
                1e-3,
                100.0,
                a_tol,
                &format!("shape parameter of arm {}", k + 1),
            )?;
        }
        let scale = solve_monotone(
            |c| fwer_at(&a.iter().map(|v| v * c).collect::<Vec<_>>()),
            spec.alpha,
            0.995,
            1.005,
            1e-3,
            100.0,
            a_tol / 4.0,
            "common rescaling factor",
        )?;
        for v in a.iter_mut() {
            *v *= scale;
        }
        last_change = a.iter().zip(&prev).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if last_change < numerics.eps_boundary {
            return Boundaries::from_shapes(&spec.shapes, &a, schedule);
        }
    }
    Err(Error::Convergence {
        what: "boundary calibration".into(),
        iterations: numerics.max_iter,
        last_change,
    })
}
