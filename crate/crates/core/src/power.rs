//! Power under least favourable configurations and sample-size search.
//!
//! Arm `k'` is recommended at its analysis `J'` when its statistic crosses
//! the upper boundary, no arm rejected earlier, and every other arm
//! analysed at the same time either stays below its own upper boundary or
//! has a smaller treatment mean. Conditional on the control increments `t`
//! and the standardised mean `v` of arm `k'` at `J'`, arm `k'`'s earlier
//! analyses follow a Brownian bridge and the other arms are independent,
//! so the probability is an outer sum over `t` of a one-dimensional
//! integral over `v`.

use crate::arm::{design_tables, grid_sum, ArmGeometry, ArmTables, Numerics};
use crate::design::{control_schedule, Boundaries, CalibratedDesign, DesignSpec, EffectConfig};
use crate::error::{Error, Result};
use crate::fwer::calibrate_with;
use crate::fwer::EqualPwer;
use crate::mvn::{chain_prefix_cdf, chain_rect, CLAMP};
use crate::normal;
use crate::quadrature::{adaptive_gk, HermiteRule};
use crate::roots::solve_monotone;
use serde::{Deserialize, Serialize};

const V_DEPTH: u32 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerDecomposition {
    pub arm: usize,
    /// Probability of recommending the arm at each of its analyses.
    pub terms: Vec<f64>,
    pub total: f64,
}

/// Power of arm `kp` under its least favourable configuration.
pub fn power(design: &CalibratedDesign, kp: usize, numerics: &Numerics) -> Result<PowerDecomposition> {
    let theta = EffectConfig::lfc(&design.spec, kp);
    power_at(design, kp, &theta, numerics)
}

/// Probability of recommending arm `kp` under arbitrary effects.
pub fn power_at(
    design: &CalibratedDesign,
    kp: usize,
    theta: &EffectConfig,
    numerics: &Numerics,
) -> Result<PowerDecomposition> {
    let ctx = PowerCtx::new(design, kp, theta, numerics)?;
    let terms = (0..design.schedule.stages(kp))
        .map(|jp| ctx.term(jp))
        .collect::<Result<Vec<_>>>()?;
    let total = terms.iter().sum();
    Ok(PowerDecomposition { arm: kp, terms, total })
}

/// Probability of recommending arm `kp` at its analysis `jp` (0-based)
/// under its least favourable configuration.
pub fn power_term(design: &CalibratedDesign, kp: usize, jp: usize, numerics: &Numerics) -> Result<f64> {
    let theta = EffectConfig::lfc(&design.spec, kp);
    let ctx = PowerCtx::new(design, kp, &theta, numerics)?;
    if jp >= design.schedule.stages(kp) {
        return Err(Error::Shape(format!("arm {} has no analysis {}", kp + 1, jp + 1)));
    }
    ctx.term(jp)
}

/// Probability that competitor `k` neither rejected before the focal
/// analysis nor beats arm `kp` at it, given the focal standardised mean
/// `v` and control increments `t` (one per control period up to the focal
/// analysis). Uses the least favourable configuration for `kp`.
pub fn competitor_block(
    design: &CalibratedDesign,
    k: usize,
    kp: usize,
    jp: usize,
    v: f64,
    t: &[f64],
    numerics: &Numerics,
) -> Result<f64> {
    if k == kp || k >= design.n_arms() || kp >= design.n_arms() {
        return Err(Error::Shape("competitor must be a different valid arm".into()));
    }
    let spec = &design.spec;
    let sched = &design.schedule;
    let focal = sched.add_stage[kp] + jp + 1;
    if t.len() < focal {
        return Err(Error::Shape(format!("need {focal} control increments")));
    }
    let s = sched.add_stage[k];
    if focal <= s {
        return Ok(1.0);
    }
    let g = ArmGeometry::new(sched, k, spec.sigma)?;
    let gp = ArmGeometry::new(sched, kp, spec.sigma)?;
    let partial = g.partials(&padded(t, s + g.stages()));
    let lo: Vec<f64> = (0..g.stages())
        .map(|j| g.limit(design.boundaries.lower[k][j], j, spec.theta_null, partial[j]))
        .collect();
    let hi: Vec<f64> = (0..g.stages())
        .map(|j| g.limit(design.boundaries.upper[k][j], j, spec.theta_null, partial[j]))
        .collect();
    let tol = numerics.mvn_tol * 1e-3;
    let reach = (focal - s).min(g.stages());
    let mut total = 0.0;
    for j in 0..reach {
        if s + j + 1 < focal {
            total += chain_prefix_cdf(&g.rho[..j], &lo[..j], &hi[..j], [lo[j]], tol)[0];
        } else {
            let slope = (g.n[j] / gp.n[jp]).sqrt();
            let icpt = g.n[j].sqrt() * (spec.theta_interesting - spec.theta_null) / spec.sigma;
            let x = hi[j].max(slope * v + icpt);
            total += chain_prefix_cdf(&g.rho[..j], &lo[..j], &hi[..j], [x], tol)[0];
        }
    }
    Ok(total)
}

fn padded(t: &[f64], len: usize) -> Vec<f64> {
    let mut v = t.to_vec();
    v.resize(len.max(t.len()), 0.0);
    v
}

struct PowerCtx<'a> {
    design: &'a CalibratedDesign,
    kp: usize,
    theta: Vec<f64>,
    rule: HermiteRule,
    tol: f64,
    geoms: Vec<ArmGeometry>,
    tables: Vec<ArmTables>,
}

/// A competitor analysed at the same time as the focal analysis.
struct Rival {
    /// Probability of having stopped for futility earlier.
    base: f64,
    stage: usize,
    arm: usize,
    upper: f64,
    slope: f64,
    icpt: f64,
}

impl<'a> PowerCtx<'a> {
    fn new(design: &'a CalibratedDesign, kp: usize, theta: &EffectConfig, numerics: &Numerics) -> Result<Self> {
        if kp >= design.n_arms() {
            return Err(Error::Shape(format!("arm index {kp} out of range")));
        }
        theta.check(design.n_arms())?;
        numerics.validate()?;
        let rule = HermiteRule::new(numerics.nodes_per_dim)?;
        let geoms = (0..design.n_arms())
            .map(|k| ArmGeometry::new(&design.schedule, k, design.spec.sigma))
            .collect::<Result<Vec<_>>>()?;
        let tables = design_tables(design, &theta.theta, &rule, numerics.mvn_tol)?;
        Ok(Self { design, kp, theta: theta.theta.clone(), rule, tol: numerics.mvn_tol, geoms, tables })
    }

    fn term(&self, jp: usize) -> Result<f64> {
        let d = self.design;
        let kp = self.kp;
        let sched = &d.schedule;
        let gp = &self.geoms[kp];
        let focal = sched.add_stage[kp] + jp + 1;
        let lowp = &d.boundaries.lower[kp];
        let upp = &d.boundaries.upper[kp];
        let theta_p = self.theta[kp];
        let mean_gap = |k: usize| (self.theta[kp] - self.theta[k]) / d.spec.sigma;

        // Bridge correlations of analyses 0..jp given the mean at jp.
        let np = &gp.n;
        let bridge_rho: Vec<f64> = (0..jp.saturating_sub(1))
            .map(|i| ((np[i] * (np[jp] - np[i + 1])) / (np[i + 1] * (np[jp] - np[i]))).sqrt())
            .collect();
        let bridge_c: Vec<f64> = (0..jp).map(|i| (np[i] / np[jp]).sqrt()).collect();
        let bridge_s: Vec<f64> = (0..jp).map(|i| (1.0 - np[i] / np[jp]).sqrt()).collect();

        let mut failure: Option<Error> = None;
        let mut rivals: Vec<Rival> = Vec::with_capacity(d.n_arms());
        let mut rival_lo: Vec<Vec<f64>> = vec![Vec::new(); d.n_arms()];
        let mut rival_hi: Vec<Vec<f64>> = vec![Vec::new(); d.n_arms()];
        let mut own_lo = vec![0.0; jp];
        let mut own_hi = vec![0.0; jp];
        let mut blo = vec![0.0; jp];
        let mut bhi = vec![0.0; jp];

        let total = grid_sum(&self.rule, focal, |idx, t| {
            if failure.is_some() {
                return 0.0;
            }
            // Arm kp's limits on its mean scale.
            let mut partial = 0.0;
            let mut v_star = 0.0;
            for j in 0..=jp {
                partial += t[gp.add_stage + j] * gp.sqrt_inc[j];
                let l = gp.limit(lowp[j], j, theta_p, partial);
                let u = gp.limit(upp[j], j, theta_p, partial);
                if j < jp {
                    own_lo[j] = l;
                    own_hi[j] = u;
                } else {
                    v_star = u;
                }
            }
            if v_star >= CLAMP {
                return 0.0;
            }
            if jp > 0 && self.tables[kp].cont(jp - 1, idx) <= 0.0 {
                return 0.0;
            }

            rivals.clear();
            let mut fixed = 1.0;
            for k in 0..d.n_arms() {
                if k == kp {
                    continue;
                }
                let s = sched.add_stage[k];
                if focal <= s {
                    continue;
                }
                let tab = &self.tables[k];
                let jn = tab.stages();
                if s + jn < focal {
                    fixed *= tab.not_rejected(idx);
                    continue;
                }
                let js = focal - s - 1;
                let base = if js == 0 { 0.0 } else { tab.futile_by(js - 1, idx) };
                let cont_before = if js == 0 { 1.0 } else { tab.cont(js - 1, idx) };
                if cont_before <= 0.0 {
                    fixed *= base;
                    continue;
                }
                let g = &self.geoms[k];
                let mut partial = 0.0;
                rival_lo[k].clear();
                rival_hi[k].clear();
                let mut upper = 0.0;
                for j in 0..=js {
                    partial += t[s + j] * g.sqrt_inc[j];
                    let l = g.limit(d.boundaries.lower[k][j], j, self.theta[k], partial);
                    let u = g.limit(d.boundaries.upper[k][j], j, self.theta[k], partial);
                    if j < js {
                        rival_lo[k].push(l);
                        rival_hi[k].push(u);
                    } else {
                        upper = u;
                    }
                }
                let slope = (g.n[js] / gp.n[jp]).sqrt();
                let icpt = g.n[js].sqrt() * mean_gap(k);
                rivals.push(Rival { base, stage: js, arm: k, upper, slope, icpt });
            }
            if fixed <= 0.0 {
                return 0.0;
            }

            // Breakpoints where a rival's effective upper limit switches.
            let mut cuts = vec![v_star.max(-CLAMP)];
            for r in rivals.iter() {
                let kink = (r.upper - r.icpt) / r.slope;
                if kink > cuts[0] && kink < CLAMP {
                    cuts.push(kink);
                }
            }
            cuts.push(CLAMP);
            cuts.sort_by(f64::total_cmp);

            let mut integrand = |v: f64| -> [f64; 1] {
                let mut val = normal::pdf(v);
                if jp > 0 {
                    for i in 0..jp {
                        blo[i] = (own_lo[i] - bridge_c[i] * v) / bridge_s[i];
                        bhi[i] = (own_hi[i] - bridge_c[i] * v) / bridge_s[i];
                    }
                    val *= chain_rect(&bridge_rho, &blo, &bhi, self.tol * 1e-3);
                    if val == 0.0 {
                        return [0.0];
                    }
                }
                for r in rivals.iter() {
                    let x = r.upper.max(r.slope * v + r.icpt);
                    let g = &self.geoms[r.arm];
                    let p = chain_prefix_cdf(&g.rho[..r.stage], &rival_lo[r.arm], &rival_hi[r.arm], [x], self.tol * 1e-3)[0];
                    val *= r.base + p;
                }
                [val]
            };
            let mut inner = 0.0;
            for w in cuts.windows(2) {
                inner += adaptive_gk(&mut integrand, w[0], w[1], self.tol, V_DEPTH)[0];
            }
            let out = fixed * inner;
            if !out.is_finite() {
                failure = Some(Error::NonFinite { point: t.to_vec(), value: out });
                return 0.0;
            }
            out
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(total),
        }
    }
}

/// Power of arm `k` when its stage-one size is `n1_k`, the other arms keep
/// theirs, the control schedule follows from all sizes and the shape
/// parameters are held fixed.
fn power_with_arm_size(
    spec: &DesignSpec,
    n1: &[f64],
    a: &[f64],
    k: usize,
    n1_k: f64,
    numerics: &Numerics,
) -> Result<f64> {
    let mut n = n1.to_vec();
    n[k] = n1_k;
    let sched = control_schedule(spec, &n)?;
    let b = Boundaries::from_shapes(&spec.shapes, a, &sched)?;
    let d = CalibratedDesign { spec: spec.clone(), schedule: sched, boundaries: b };
    Ok(power(&d, k, numerics)?.total)
}

/// Finds per-arm stage-one sizes giving every arm power `1 - beta` under
/// its least favourable configuration, then rounds them up and
/// recalibrates the boundaries.
///
/// Starting from a common size for every arm (and the control), the search
/// alternates between solving each arm's size in turn with the shape
/// parameters fixed, and recalibrating the boundaries at the resulting
/// schedule, until no size moves by more than `eps_n` patients. The control
/// schedule is rebuilt from the current sizes whenever an arm's size is
/// tried; freezing it during the per-arm solves makes the iteration
/// oscillate between designs with very different control allocations.
pub fn size_for_power(spec: &DesignSpec, numerics: &Numerics) -> Result<CalibratedDesign> {
    let n = size_continuous(spec, numerics)?;
    finalize_sizes(spec, &n.0, Some(&n.1), numerics)
}

/// Continuous stage-one sizes and shape parameters before rounding.
pub fn size_continuous(spec: &DesignSpec, numerics: &Numerics) -> Result<(Vec<f64>, Vec<f64>)> {
    spec.validate()?;
    numerics.validate()?;
    let k_arms = spec.n_arms;
    let target = 1.0 - spec.beta;
    let n_fixed = spec.fixed_sample_size();
    let max_n = 10.0 * n_fixed;
    let n_tol = 0.01;

    let unit = control_schedule(spec, &vec![1.0; k_arms])?;
    let mut a = calibrate_with(spec, &unit, numerics, &EqualPwer, None)?.a;
    let common = solve_monotone(
        |x| {
            let sched = control_schedule(spec, &vec![x; k_arms])?;
            let b = Boundaries::from_shapes(&spec.shapes, &a, &sched)?;
            let d = CalibratedDesign { spec: spec.clone(), schedule: sched, boundaries: b };
            Ok(power(&d, 0, numerics)?.total)
        },
        target,
        n_fixed * 0.5,
        n_fixed * 1.5,
        2.0,
        max_n,
        n_tol,
        "common sample size",
    )
    .map_err(sizing_error)?;
    let mut n = vec![common; k_arms];

    let mut last_change = f64::INFINITY;
    for _ in 0..numerics.max_iter {
        let prev = n.clone();
        for k in 0..k_arms {
            let guess = n[k];
            let current = n.clone();
            n[k] = solve_monotone(
                |x| power_with_arm_size(spec, &current, &a, k, x, numerics),
                target,
                guess * 0.97,
                guess * 1.03,
                2.0,
                max_n,
                n_tol,
                &format!("sample size of arm {}", k + 1),
            )
            .map_err(sizing_error)?;
        }
        let schedule = control_schedule(spec, &n)?;
        a = calibrate_with(spec, &schedule, numerics, &EqualPwer, Some(&a))?.a;
        last_change = n.iter().zip(&prev).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if last_change < numerics.eps_n {
            return Ok((n, a));
        }
    }
    Err(Error::Convergence { what: "sample size search".into(), iterations: numerics.max_iter, last_change })
}

/// Rounds stage-one sizes up and recalibrates boundaries at the integer
/// schedule.
pub fn finalize_sizes(
    spec: &DesignSpec,
    n: &[f64],
    a_init: Option<&[f64]>,
    numerics: &Numerics,
) -> Result<CalibratedDesign> {
    let rounded: Vec<f64> = n.iter().map(|v| v.ceil()).collect();
    let schedule = control_schedule(spec, &rounded)?;
    let b = calibrate_with(spec, &schedule, numerics, &EqualPwer, a_init)?;
    CalibratedDesign::new(spec.clone(), schedule, b)
}

fn sizing_error(e: Error) -> Error {
    match e {
        Error::Bracket { what, lo, hi, f_lo, f_hi } => Error::Sizing(format!(
            "power target not attainable for {what}: power {f_lo:.4} at n = {lo:.1}, {f_hi:.4} at n = {hi:.1}"
        )),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::Shape;

    #[test]
    fn single_arm_matches_z_test() {
        let theta = 0.5;
        let z = normal::quantile(0.975) + normal::quantile(0.8);
        let n = 2.0 * (z / theta).powi(2);
        let spec = DesignSpec::new(vec![0], vec![1], vec![Shape::Pocock], theta, 0.0, 1.0, 0.025, 0.2, 10.0).unwrap();
        let sched = control_schedule(&spec, &[n]).unwrap();
        let b = Boundaries::from_shapes(&spec.shapes, &[normal::quantile(0.975)], &sched).unwrap();
        let d = CalibratedDesign::new(spec, sched, b).unwrap();
        let p = power(&d, 0, &Numerics::default()).unwrap();
        assert!((p.total - 0.8).abs() < 1e-5, "{p:?}");
    }
}
