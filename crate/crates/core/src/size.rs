//! Distribution and expectation of the realised sample size, plus summary
//! operating characteristics of a calibrated design.

use serde::Serialize;

use crate::arm::{design_tables, grid_visit, ArmTables, Numerics};
use crate::design::{CalibratedDesign, EffectConfig};
use crate::error::{Error, Result};
use crate::fwer::fwer;
use crate::power::power;
use crate::quadrature::HermiteRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Efficacy,
    Futility,
}

/// One joint outcome of the per-arm tests, each arm considered on its own:
/// arm `k` would conclude at analysis `stop_stages[k]` (0-based) with
/// `verdicts[k]`. The realised sizes account for the trial stopping at the
/// earliest efficacy conclusion.
#[derive(Debug, Clone, Serialize)]
pub struct OutcomeCell {
    pub stop_stages: Vec<usize>,
    pub verdicts: Vec<Verdict>,
    pub probability: f64,
    pub arm_n: Vec<f64>,
    pub control_n: f64,
    pub total_n: f64,
}

/// A discrete distribution over sample sizes, support sorted ascending.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Pmf {
    pub support: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl Pmf {
    /// Merges `(size, probability)` pairs whose sizes agree to 1e-9.
    pub fn from_pairs(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out = Pmf::default();
        for (n, p) in pairs {
            match out.support.last() {
                Some(&last) if (n - last).abs() <= 1e-9 * last.abs().max(1.0) => {
                    *out.probabilities.last_mut().expect("nonempty") += p;
                }
                _ => {
                    out.support.push(n);
                    out.probabilities.push(p);
                }
            }
        }
        out
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().zip(&self.probabilities).map(|(n, p)| n * p).sum()
    }

    /// Probability of the atom at `n`, zero if absent.
    pub fn prob(&self, n: f64) -> f64 {
        self.support
            .iter()
            .position(|&v| (v - n).abs() <= 1e-9 * n.abs().max(1.0))
            .map_or(0.0, |i| self.probabilities[i])
    }

    pub fn cdf(&self) -> Vec<f64> {
        self.probabilities
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p;
                Some(*acc)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleSizePmf {
    pub total: Pmf,
    pub arms: Vec<Pmf>,
    pub control: Pmf,
}

/// Realised sizes of a cell: `(per-arm, control)`.
fn cell_sizes(design: &CalibratedDesign, stops: &[usize], verdicts: &[Verdict]) -> (Vec<f64>, f64) {
    let sched = &design.schedule;
    // Control periods are counted 1-based here: arm k concludes at period
    // s_k + j + 1 for its 0-based analysis j.
    let ends: Vec<usize> = stops.iter().zip(&sched.add_stage).map(|(j, s)| s + j + 1).collect();
    let eff_end = ends
        .iter()
        .zip(verdicts)
        .filter(|(_, v)| **v == Verdict::Efficacy)
        .map(|(e, _)| *e)
        .min()
        .unwrap_or(usize::MAX);
    let arm_n = ends
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let last = e.min(eff_end).saturating_sub(sched.add_stage[k]);
            if last == 0 {
                0.0
            } else {
                sched.n_active[k][last - 1]
            }
        })
        .collect();
    let control_end = (*ends.iter().max().expect("at least one arm")).min(eff_end);
    (arm_n, sched.n_control[control_end - 1])
}

fn arm_outcome(tab: &ArmTables, j: usize, v: Verdict, idx: &[usize]) -> f64 {
    match v {
        Verdict::Futility => tab.fut(j, idx),
        Verdict::Efficacy => tab.eff(j, idx),
    }
}

fn tables(design: &CalibratedDesign, theta: &EffectConfig, numerics: &Numerics) -> Result<(HermiteRule, Vec<ArmTables>)> {
    theta.check(design.n_arms())?;
    numerics.validate()?;
    let rule = HermiteRule::new(numerics.nodes_per_dim)?;
    let tabs = design_tables(design, &theta.theta, &rule, numerics.mvn_tol)?;
    Ok((rule, tabs))
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { point: vec![], value: v })
    }
}

/// Enumerates every combination of per-arm conclusion analysis and verdict.
pub fn outcome_cells(design: &CalibratedDesign, theta: &EffectConfig, numerics: &Numerics) -> Result<Vec<OutcomeCell>> {
    let (rule, tabs) = tables(design, theta, numerics)?;
    let k_arms = design.n_arms();
    let mut keys: Vec<(Vec<usize>, Vec<Verdict>)> = vec![(vec![], vec![])];
    for tab in &tabs {
        keys = keys
            .into_iter()
            .flat_map(|(s, q)| {
                (0..tab.stages()).flat_map(move |j| {
                    let (s, q) = (s.clone(), q.clone());
                    [Verdict::Efficacy, Verdict::Futility].into_iter().map(move |v| {
                        let mut s = s.clone();
                        let mut q = q.clone();
                        s.push(j);
                        q.push(v);
                        (s, q)
                    })
                })
            })
            .collect();
    }
    let mut probs = vec![0.0; keys.len()];
    grid_visit(&rule, design.schedule.control_stages(), |idx, w| {
        for (c, (s, q)) in keys.iter().enumerate() {
            probs[c] += w * (0..k_arms).map(|k| arm_outcome(&tabs[k], s[k], q[k], idx)).product::<f64>();
        }
    });
    keys.into_iter()
        .zip(probs)
        .map(|((s, q), p)| {
            let (arm_n, control_n) = cell_sizes(design, &s, &q);
            let total_n = arm_n.iter().sum::<f64>() + control_n;
            Ok(OutcomeCell { stop_stages: s, verdicts: q, probability: finite(p)?, arm_n, control_n, total_n })
        })
        .collect()
}

/// Distribution of the total, per-arm and control sample sizes.
pub fn sample_size_pmf(design: &CalibratedDesign, theta: &EffectConfig, numerics: &Numerics) -> Result<SampleSizePmf> {
    Ok(pmf_from_cells(&outcome_cells(design, theta, numerics)?, design.n_arms()))
}

pub fn pmf_from_cells(cells: &[OutcomeCell], n_arms: usize) -> SampleSizePmf {
    SampleSizePmf {
        total: Pmf::from_pairs(cells.iter().map(|c| (c.total_n, c.probability)).collect()),
        arms: (0..n_arms)
            .map(|k| Pmf::from_pairs(cells.iter().map(|c| (c.arm_n[k], c.probability)).collect()))
            .collect(),
        control: Pmf::from_pairs(cells.iter().map(|c| (c.control_n, c.probability)).collect()),
    }
}

/// Expected total sample size as the probability-weighted sum over all
/// outcome cells.
pub fn expected_n_enumeration(design: &CalibratedDesign, theta: &EffectConfig, numerics: &Numerics) -> Result<f64> {
    let cells = outcome_cells(design, theta, numerics)?;
    finite(cells.iter().map(|c| c.probability * c.total_n).sum())
}

/// Stopping probabilities behind the four-part expected sample size.
/// Control periods are 1-based: index `p` refers to the state after `p`
/// control stages, and per-arm vectors are indexed by 0-based analysis.
#[derive(Debug, Clone, Serialize)]
pub struct StoppingParts {
    /// P(every arm has stopped for futility by period p); zero until every
    /// arm has joined.
    pub all_futile: Vec<f64>,
    /// P(some null hypothesis has been rejected by period p).
    pub any_rejected: Vec<f64>,
    /// P(arm k stops at analysis j because another arm was rejected then).
    pub stopped_by_other: Vec<Vec<f64>>,
    /// P(arm k reaches its own conclusion at analysis j with no other arm
    /// rejected by then).
    pub stopped_by_self: Vec<Vec<f64>>,
    pub expected_n: f64,
}

/// P(arm has not rejected its null by the end of control period `p`,
/// 1-based), and P(arm has stopped for futility by then).
fn arm_status(tab: &ArmTables, p: usize, idx: &[usize]) -> (f64, f64) {
    if p <= tab.add_stage {
        return (1.0, 0.0);
    }
    let m = p - tab.add_stage;
    let jn = tab.stages();
    let futile: f64 = (0..m.min(jn)).map(|j| tab.fut(j, idx)).sum();
    if m >= jn {
        (futile, futile)
    } else {
        (futile + tab.cont(m - 1, idx), futile)
    }
}

/// Expected total sample size from the control's stopping-period
/// distribution and each arm's stopping-analysis distribution, without
/// enumerating joint outcomes.
pub fn expected_n_parts(design: &CalibratedDesign, theta: &EffectConfig, numerics: &Numerics) -> Result<StoppingParts> {
    let (rule, tabs) = tables(design, theta, numerics)?;
    let sched = &design.schedule;
    let k_arms = design.n_arms();
    let periods = sched.control_stages();
    let last_join = *sched.add_stage.iter().max().expect("at least one arm");

    let mut all_futile = vec![0.0; periods + 1];
    let mut none_rejected = vec![0.0; periods + 1];
    let mut by_other: Vec<Vec<f64>> = tabs.iter().map(|t| vec![0.0; t.stages()]).collect();
    let mut by_self = by_other.clone();
    let mut nr = vec![vec![0.0; periods + 1]; k_arms];
    let mut fut = nr.clone();
    grid_visit(&rule, periods, |idx, w| {
        for (k, tab) in tabs.iter().enumerate() {
            for p in 0..=periods {
                (nr[k][p], fut[k][p]) = arm_status(tab, p, idx);
            }
        }
        for p in 0..=periods {
            if p > last_join {
                all_futile[p] += w * (0..k_arms).map(|k| fut[k][p]).product::<f64>();
            }
            none_rejected[p] += w * (0..k_arms).map(|k| nr[k][p]).product::<f64>();
        }
        for (kp, tab) in tabs.iter().enumerate() {
            let others = |p: usize| (0..k_arms).filter(|&k| k != kp).map(|k| nr[k][p]).product::<f64>();
            for j in 0..tab.stages() {
                let p = tab.add_stage + j + 1;
                let reached = if j == 0 { 1.0 } else { tab.cont(j - 1, idx) };
                by_other[kp][j] += w * (others(p - 1) - others(p)) * reached;
                by_self[kp][j] += w * others(p) * (tab.fut(j, idx) + tab.eff(j, idx));
            }
        }
    });
    let any_rejected: Vec<f64> = none_rejected.iter().enumerate().map(|(p, v)| if p == 0 { 0.0 } else { 1.0 - v }).collect();
    let mut expected_n = 0.0;
    for p in 1..=periods {
        let stop = all_futile[p] + any_rejected[p] - all_futile[p - 1] - any_rejected[p - 1];
        expected_n += stop * sched.n_control[p - 1];
    }
    for k in 0..k_arms {
        for j in 0..tabs[k].stages() {
            expected_n += (by_other[k][j] + by_self[k][j]) * sched.n_active[k][j];
        }
    }
    finite(expected_n)?;
    Ok(StoppingParts { all_futile, any_rejected, stopped_by_other: by_other, stopped_by_self: by_self, expected_n })
}

pub fn expected_n_efficient(design: &CalibratedDesign, theta: &EffectConfig, numerics: &Numerics) -> Result<f64> {
    Ok(expected_n_parts(design, theta, numerics)?.expected_n)
}

/// Sample-size summary under one effect configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSizes {
    pub label: String,
    pub theta: Vec<f64>,
    pub expected_n: f64,
    pub expected_duration: f64,
    pub pmf: SampleSizePmf,
}

#[derive(Debug, Clone, Serialize)]
pub struct OperatingChars {
    pub n1: Vec<f64>,
    pub a: Vec<f64>,
    pub fwer: f64,
    /// Power of each arm under its least favourable configuration.
    pub power: Vec<f64>,
    pub max_n: f64,
    pub max_duration: f64,
    /// Global null first, then the least favourable configuration of each
    /// arm.
    pub scenarios: Vec<ScenarioSizes>,
}

/// Standard effect configurations: `H_G` then `LFC1..LFCK`.
pub fn standard_scenarios(design: &CalibratedDesign) -> Vec<(String, EffectConfig)> {
    let k_arms = design.n_arms();
    std::iter::once(("H_G".to_string(), EffectConfig::global_null(k_arms)))
        .chain((0..k_arms).map(|k| (format!("LFC{}", k + 1), EffectConfig::lfc(&design.spec, k))))
        .collect()
}

pub fn scenario_sizes(design: &CalibratedDesign, label: &str, theta: &EffectConfig, numerics: &Numerics) -> Result<ScenarioSizes> {
    let expected_n = expected_n_efficient(design, theta, numerics)?;
    Ok(ScenarioSizes {
        label: label.to_string(),
        theta: theta.theta.clone(),
        expected_n,
        expected_duration: crate::design::duration(expected_n, design.spec.recruitment_rate),
        pmf: sample_size_pmf(design, theta, numerics)?,
    })
}

pub fn operating_chars(design: &CalibratedDesign, numerics: &Numerics) -> Result<OperatingChars> {
    let power = (0..design.n_arms())
        .map(|k| Ok(power(design, k, numerics)?.total))
        .collect::<Result<Vec<_>>>()?;
    let scenarios = standard_scenarios(design)
        .iter()
        .map(|(label, theta)| scenario_sizes(design, label, theta, numerics))
        .collect::<Result<Vec<_>>>()?;
    Ok(OperatingChars {
        n1: design.schedule.stage1_sizes(),
        a: design.boundaries.a.clone(),
        fwer: fwer(design, numerics)?,
        power,
        max_n: design.max_n(),
        max_duration: design.max_duration(),
        scenarios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{control_schedule, Boundaries, DesignSpec, Shape};
    use crate::fwer::calibrate_boundaries;
    use crate::normal;

    fn single(u: f64) -> CalibratedDesign {
        let spec = DesignSpec::new(vec![0], vec![1], vec![Shape::Pocock], 0.5, 0.0, 1.0, 0.025, 0.2, 10.0).unwrap();
        let sch = control_schedule(&spec, &[40.0]).unwrap();
        let b = Boundaries::from_shapes(&spec.shapes, &[u], &sch).unwrap();
        CalibratedDesign::new(spec, sch, b).unwrap()
    }

    #[test]
    fn single_stage_cells_are_closed_form() {
        let d = single(1.96);
        let num = Numerics::default();
        let cells = outcome_cells(&d, &EffectConfig::global_null(1), &num).unwrap();
        assert_eq!(cells.len(), 2);
        for c in &cells {
            assert_eq!(c.total_n, 80.0);
            let want = match c.verdicts[0] {
                Verdict::Efficacy => normal::sf(1.96),
                Verdict::Futility => normal::cdf(1.96),
            };
            assert!((c.probability - want).abs() < 1e-10, "{} vs {want}", c.probability);
        }
        let e = expected_n_efficient(&d, &EffectConfig::global_null(1), &num).unwrap();
        assert!((e - 80.0).abs() < 1e-9);
    }

    fn setting2() -> CalibratedDesign {
        let spec = DesignSpec::setting2([Shape::Triangular; 2], -(0.99f64.ln()));
        let sch = control_schedule(&spec, &[46.0, 77.0]).unwrap();
        let b = calibrate_boundaries(&spec, &sch, &Numerics::default()).unwrap();
        CalibratedDesign::new(spec, sch, b).unwrap()
    }

    #[test]
    fn setting2_null_distribution() {
        let d = setting2();
        let num = Numerics::default();
        let null = EffectConfig::global_null(2);
        let pmf = sample_size_pmf(&d, &null, &num).unwrap();
        assert!((pmf.total.total() - 1.0).abs() < 1e-4);
        let want = [(92.0, 0.003), (246.0, 0.402), (292.0, 0.369), (400.0, 0.098), (415.0, 0.034), (446.0, 0.071), (492.0, 0.023)];
        assert_eq!(pmf.total.support, want.iter().map(|w| w.0).collect::<Vec<_>>());
        for (n, p) in want {
            assert!((pmf.total.prob(n) - p).abs() < 0.002, "P(N={n}) = {}", pmf.total.prob(n));
        }
        let enumerated = pmf.total.mean();
        let efficient = expected_n_efficient(&d, &null, &num).unwrap();
        assert!((enumerated - efficient).abs() < 1e-6, "{enumerated} vs {efficient}");
        assert!((efficient - 303.3).abs() < 1.0, "{efficient}");
    }

    #[test]
    fn control_periods_end_with_certainty() {
        let d = setting2();
        let parts = expected_n_parts(&d, &EffectConfig::lfc(&d.spec, 1), &Numerics::default()).unwrap();
        let last = parts.all_futile.len() - 1;
        assert!((parts.all_futile[last] + parts.any_rejected[last] - 1.0).abs() < 1e-6);
        for k in 0..2 {
            let total: f64 = parts.stopped_by_other[k].iter().zip(&parts.stopped_by_self[k]).map(|(a, b)| a + b).sum();
            // Arm 2 never starts when arm 1 is rejected at the first analysis.
            assert!(total <= 1.0 + 1e-9 && total > 0.9, "arm {k}: {total}");
        }
    }
}
