//! Adding the late arm earlier or later than planned.
//!
//! The late arm is planned to join after the first control stage. Its
//! actual joining point is given as the number of control patients
//! recruited by then; the initial arms have been recruited in their
//! first-stage ratio to the control up to that point. The total maximum
//! sample size is kept at its planned value.
//!
//! * [`Approach::MoveInterim`]: the first interim of the initial arms moves
//!   to the joining point; the remaining patients are shared over the later
//!   stages in the planned allocation; the planned boundaries are kept.
//! * [`Approach::Recalibrate`]: as `MoveInterim`, with boundaries
//!   recalibrated for the realised allocation.
//! * [`Approach::KeepInterim`]: every analysis stays at its planned control
//!   count and every arm keeps its planned stage sizes; only the late arm's
//!   allocation ratio to the control changes.

use serde::Serialize;

use crate::arm::Numerics;
use crate::design::{CalibratedDesign, EffectConfig, Schedule};
use crate::error::{Error, Result};
use crate::fwer::{calibrate_with, EqualPwer};
use crate::sim::{simulate, Segment, SimConfig, SimReport, Timeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Approach {
    MoveInterim,
    Recalibrate,
    KeepInterim,
}

impl Approach {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Self::MoveInterim),
            2 => Ok(Self::Recalibrate),
            3 => Ok(Self::KeepInterim),
            _ => Err(Error::Domain(format!("approach must be 1, 2 or 3, got {n}"))),
        }
    }

    /// Label used in study tables: the approach number.
    pub fn label(self) -> String {
        self.number().to_string()
    }

    pub fn number(self) -> u8 {
        match self {
            Self::MoveInterim => 1,
            Self::Recalibrate => 2,
            Self::KeepInterim => 3,
        }
    }
}

/// Per-period planned increments: `inc[p][k]` for arms, `inc[p][K]` for
/// the control.
fn planned_increments(design: &CalibratedDesign) -> Vec<Vec<f64>> {
    Timeline::planned(design)
        .segments
        .into_iter()
        .map(|s| {
            let mut v = s.arms;
            v.push(s.control);
            v
        })
        .collect()
}

/// The single arm joining after the first control stage, which the
/// deviation study moves.
pub fn late_arm(design: &CalibratedDesign) -> Result<usize> {
    let late: Vec<usize> = (0..design.n_arms()).filter(|&k| design.schedule.add_stage[k] > 0).collect();
    match late.as_slice() {
        [k] if design.schedule.add_stage[*k] == 1 => Ok(*k),
        _ => Err(Error::InvalidDesign(
            "deviation study needs exactly one arm, joining after the first control stage".into(),
        )),
    }
}

/// Rounds non-negative `x` to integers with the same (rounded) total,
/// giving the leftover units to the largest fractional parts.
pub fn largest_remainder(x: &[f64]) -> Vec<f64> {
    let total = x.iter().sum::<f64>().round();
    let mut out: Vec<f64> = x.iter().map(|v| v.floor()).collect();
    let mut short = (total - out.iter().sum::<f64>()).round() as usize;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| (x[b] - x[b].floor()).total_cmp(&(x[a] - x[a].floor())).then(a.cmp(&b)));
    for i in order {
        if short == 0 {
            break;
        }
        out[i] += 1.0;
        short -= 1;
    }
    out
}

/// Recruitment before the late arm joins at `add_n0` control patients.
fn pre_join(inc: &[Vec<f64>], late: usize, add_n0: f64) -> Vec<f64> {
    let ctrl = inc[0].len() - 1;
    let mut v: Vec<f64> = inc[0].iter().map(|m| add_n0 * m / inc[0][ctrl]).collect();
    v[late] = 0.0;
    largest_remainder(&v)
}

fn check_add_point(design: &CalibratedDesign, add_n0: f64) -> Result<()> {
    let last = design.schedule.n_control[design.schedule.control_stages() - 1];
    if !(add_n0 >= 1.0 && add_n0 < last) || add_n0.fract() != 0.0 {
        return Err(Error::Domain(format!(
            "joining point must be a whole number of control patients in [1, {last}), got {add_n0}"
        )));
    }
    Ok(())
}

/// Schedule when the first stage ends at the joining point and the
/// remaining patients follow the planned later-stage allocation.
pub fn moved_interim_schedule(design: &CalibratedDesign, add_n0: f64) -> Result<Schedule> {
    check_add_point(design, add_n0)?;
    let late = late_arm(design)?;
    let inc = planned_increments(design);
    let first = pre_join(&inc, late, add_n0);
    let remaining = design.max_n() - first.iter().sum::<f64>();
    let later: f64 = inc[1..].iter().flatten().sum();
    if remaining <= 0.0 {
        return Err(Error::Schedule(format!("no patients left after joining at {add_n0}")));
    }
    let exact: Vec<f64> = inc[1..].iter().flatten().map(|m| remaining * m / later).collect();
    let rounded = largest_remainder(&exact);
    let width = inc[0].len();
    let mut periods = vec![first];
    periods.extend(rounded.chunks(width).map(|c| c.to_vec()));
    schedule_from_periods(design, &periods)
}

fn schedule_from_periods(design: &CalibratedDesign, periods: &[Vec<f64>]) -> Result<Schedule> {
    let sched = &design.schedule;
    let k_arms = design.n_arms();
    let n_active = (0..k_arms)
        .map(|k| {
            let s = sched.add_stage[k];
            (0..sched.stages(k))
                .scan(0.0, |acc, j| {
                    *acc += periods[s + j][k];
                    Some(*acc)
                })
                .collect()
        })
        .collect();
    let n_control = periods
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p[k_arms];
            Some(*acc)
        })
        .collect();
    Schedule::from_counts(sched.add_stage.clone(), n_active, n_control)
}

/// Timeline keeping every analysis at its planned control count.
///
/// The initial arms recruit exactly as planned. The late arm recruits each
/// of its planned stage sizes evenly over the control patients of that
/// stage that come after it joins. Stages that end before the joining
/// point are folded into the first stage that ends after it and their
/// analyses are dropped; the remaining analyses keep the arm's last
/// boundaries.
pub fn kept_interim_timeline(design: &CalibratedDesign, add_n0: f64) -> Result<Timeline> {
    check_add_point(design, add_n0)?;
    let late = late_arm(design)?;
    let sched = &design.schedule;
    let inc = planned_increments(design);
    let k_arms = design.n_arms();
    let n_periods = inc.len();
    let c_end = &sched.n_control;
    let c_start = |p: usize| if p == 0 { 0.0 } else { c_end[p - 1] };

    let s = sched.add_stage[late];
    let stages = sched.stages(late);
    // First stage of the late arm still running at the joining point.
    let first = (0..stages).find(|&j| c_end[s + j] > add_n0).expect("joining point is before the last analysis");
    let carried: f64 = (s..=s + first).map(|p| inc[p][late]).sum();

    // Control window and planned recruitment of each stretch of one arm.
    let windows = |k: usize| -> Vec<(f64, f64, f64)> {
        if k == late {
            let mut w = vec![(add_n0, c_end[s + first], carried)];
            w.extend((first + 1..stages).map(|j| (c_end[s + j - 1], c_end[s + j], inc[s + j][k])));
            w
        } else {
            (0..n_periods).map(|p| (c_start(p), c_end[p], inc[p][k])).collect()
        }
    };
    let windows: Vec<_> = (0..k_arms).map(windows).collect();
    // Cumulative recruitment of arm k at control count x.
    let cumulative = |k: usize, x: f64| -> f64 {
        windows[k]
            .iter()
            .filter(|&&(lo, hi, _)| x > lo && hi > lo)
            .map(|&(lo, hi, m)| m * (x.min(hi) - lo) / (hi - lo))
            .sum()
    };

    let mut cuts: Vec<f64> = c_end.clone();
    if !cuts.contains(&add_n0) {
        cuts.push(add_n0);
        cuts.sort_by(f64::total_cmp);
    }
    let mut segments = Vec::new();
    let mut period_end_seg = vec![0; n_periods];
    let mut prev = 0.0;
    for &x in &cuts {
        let arms = (0..k_arms).map(|k| cumulative(k, x).round() - cumulative(k, prev).round()).collect();
        segments.push(Segment { arms, control: x - prev });
        if let Some(p) = c_end.iter().position(|&e| e == x) {
            period_end_seg[p] = segments.len() - 1;
        }
        prev = x;
    }
    let join_seg = segments.iter().position(|g| g.arms[late] > 0.0).ok_or_else(|| {
        Error::Schedule(format!("late arm recruits nobody when joining at {add_n0}"))
    })?;

    let skip = |k: usize| if k == late { first } else { 0 };
    let tl = Timeline {
        segments,
        join: (0..k_arms).map(|k| if k == late { join_seg } else { sched.add_stage[k] }).collect(),
        analyses: (0..k_arms)
            .map(|k| (skip(k)..sched.stages(k)).map(|j| period_end_seg[sched.add_stage[k] + j]).collect())
            .collect(),
        lower: (0..k_arms).map(|k| design.boundaries.lower[k][skip(k)..].to_vec()).collect(),
        upper: (0..k_arms).map(|k| design.boundaries.upper[k][skip(k)..].to_vec()).collect(),
        sigma: design.spec.sigma,
    };
    tl.validate()?;
    Ok(tl)
}

/// The design executed with the late arm joining at `add_n0` control
/// patients under `approach`.
pub fn deviated_timeline(
    design: &CalibratedDesign,
    approach: Approach,
    add_n0: f64,
    numerics: &Numerics,
) -> Result<Timeline> {
    match approach {
        Approach::KeepInterim => kept_interim_timeline(design, add_n0),
        Approach::MoveInterim | Approach::Recalibrate => {
            let schedule = moved_interim_schedule(design, add_n0)?;
            let boundaries = if approach == Approach::Recalibrate {
                calibrate_with(&design.spec, &schedule, numerics, &EqualPwer, Some(&design.boundaries.a))?
            } else {
                design.boundaries.clone()
            };
            Ok(Timeline::planned(&CalibratedDesign { spec: design.spec.clone(), schedule, boundaries }))
        }
    }
}

/// Simulation results for one joining point, or the reason it could not
/// be run.
#[derive(Debug, Clone, Serialize)]
pub struct DeviationPoint {
    pub add_point: f64,
    pub approach: Approach,
    pub results: std::result::Result<Vec<(String, SimReport)>, String>,
}

/// Simulates every joining point in `add_points` under each labelled
/// effect configuration. Points that cannot be built are reported and
/// skipped.
pub fn deviation_study(
    design: &CalibratedDesign,
    approach: Approach,
    add_points: &[f64],
    thetas: &[(String, EffectConfig)],
    replicates: u64,
    seed: u64,
    numerics: &Numerics,
) -> Vec<DeviationPoint> {
    add_points
        .iter()
        .map(|&c| {
            let results = deviated_timeline(design, approach, c, numerics).and_then(|tl| {
                thetas
                    .iter()
                    .map(|(label, theta)| {
                        let cfg = SimConfig { timeline: tl.clone(), theta: theta.clone(), replicates, seed };
                        Ok((label.clone(), simulate(&cfg)?))
                    })
                    .collect::<Result<Vec<_>>>()
            });
            DeviationPoint { add_point: c, approach, results: results.map_err(|e| e.to_string()) }
        })
        .collect()
}

/// One row of a study table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub add_point: f64,
    /// Approach number, or `planned` for the design run as planned.
    pub approach: String,
    pub theta_label: String,
    pub metric: String,
    pub estimate: f64,
    pub se: f64,
    pub replicates: u64,
    pub seed: u64,
}

/// Flattens reports into rows: FWER, power and rejection rate per arm,
/// expected sample size.
pub fn study_rows(add_point: f64, approach: &str, label: &str, r: &SimReport) -> Vec<StudyRow> {
    let row = |metric: String, e: crate::sim::Estimate| StudyRow {
        add_point,
        approach: approach.to_string(),
        theta_label: label.to_string(),
        metric,
        estimate: e.estimate,
        se: e.se,
        replicates: r.replicates,
        seed: r.seed,
    };
    let mut rows = vec![row("fwer".into(), r.fwer)];
    for (k, e) in r.power.iter().enumerate() {
        rows.push(row(format!("power_arm{}", k + 1), *e));
    }
    for (k, e) in r.reject.iter().enumerate() {
        rows.push(row(format!("reject_arm{}", k + 1), *e));
    }
    rows.push(row("expected_n".into(), r.expected_n));
    rows
}
