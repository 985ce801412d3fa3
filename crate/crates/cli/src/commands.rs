//! The four commands.

use std::path::{Path, PathBuf};

use platform_trial::arm::Numerics;
use platform_trial::comparators::{build_comparator, summarize, ComparatorKind, ComparatorSummary};
use platform_trial::deviation::{deviation_study, late_arm, study_rows, Approach, DeviationPoint, StudyRow};
use platform_trial::power::{power, size_for_power};
use platform_trial::sim::{simulate as run_simulation, SimConfig, SimReport};
use platform_trial::size::{operating_chars, standard_scenarios, OperatingChars, Pmf};
use platform_trial::{fwer, CalibratedDesign, DesignSpec};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::output::{sig6, table, write_csv, write_json, write_text};
use crate::{CliError, CommonArgs};

/// Everything a command needs before it starts computing.
struct Context {
    config: Config,
    spec: DesignSpec,
    numerics: Numerics,
    out: PathBuf,
}

fn context(args: &CommonArgs) -> Result<Context, CliError> {
    let mut config = Config::load(&args.config)?;
    if let Some(n) = args.nodes {
        config.numerics.nodes_per_dim = n;
    }
    if let Some(s) = args.seed {
        config.simulate.seed = s;
    }
    if let Some(r) = args.replicates {
        config.simulate.replicates = r;
    }
    // Re-check after the overrides.
    let config = Config::parse(&serde_json::to_string(&config).map_err(|e| CliError::Config(e.to_string()))?)?;
    let spec = config.spec()?;
    let numerics = config.numerics();
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Output(format!("cannot create {}: {e}", args.out.display())))?;
    Ok(Context { config, spec, numerics, out: args.out.clone() })
}

/// Key quantities of a calibrated design.
#[derive(Debug, Clone, Serialize)]
pub struct DesignSummary {
    pub n1: Vec<f64>,
    pub a: Vec<f64>,
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    pub n_active: Vec<Vec<f64>>,
    pub n_control: Vec<f64>,
    pub max_n: f64,
    pub max_duration: f64,
    pub fwer: f64,
    pub power: Vec<f64>,
}

impl DesignSummary {
    fn new(d: &CalibratedDesign, numerics: &Numerics) -> Result<Self, CliError> {
        Ok(Self {
            n1: d.schedule.stage1_sizes(),
            a: d.boundaries.a.clone(),
            lower: d.boundaries.lower.clone(),
            upper: d.boundaries.upper.clone(),
            n_active: d.schedule.n_active.clone(),
            n_control: d.schedule.n_control.clone(),
            max_n: d.max_n(),
            max_duration: d.max_duration(),
            fwer: fwer::fwer(d, numerics)?,
            power: (0..d.n_arms()).map(|k| Ok(power(d, k, numerics)?.total)).collect::<Result<_, CliError>>()?,
        })
    }
}

/// Contents of `design.json`.
#[derive(Debug, Clone, Serialize)]
pub struct DesignFile {
    pub config: Config,
    pub design: CalibratedDesign,
    pub summary: DesignSummary,
}

#[derive(Deserialize)]
struct DesignInput {
    design: CalibratedDesign,
}

/// Reads the design from a `design.json` written by the design command.
pub fn load_design(path: &Path) -> Result<CalibratedDesign, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let input: DesignInput = serde_json::from_value(crate::output::restore(raw)?)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let d = input.design;
    CalibratedDesign::new(d.spec, d.schedule, d.boundaries).map_err(|e| CliError::Config(e.to_string()))
}

fn obtain_design(args: &CommonArgs, ctx: &Context) -> Result<CalibratedDesign, CliError> {
    match &args.design {
        Some(path) => {
            let d = load_design(path)?;
            if d.spec != ctx.spec {
                return Err(CliError::Config(format!(
                    "{} was designed from a different configuration",
                    path.display()
                )));
            }
            Ok(d)
        }
        None => Ok(size_for_power(&ctx.spec, &ctx.numerics)?),
    }
}

fn fmt(x: f64) -> String {
    format!("{}", sig6(x))
}

fn fmt_fixed(x: f64, digits: usize) -> String {
    format!("{x:.digits$}")
}

fn join(v: &[f64], digits: usize) -> String {
    v.iter().map(|x| fmt_fixed(*x, digits)).collect::<Vec<_>>().join(" ")
}

fn stage_sizes(n_active: &[f64]) -> Vec<f64> {
    (0..n_active.len()).map(|j| n_active[j] - if j == 0 { 0.0 } else { n_active[j - 1] }).collect()
}

fn design_table(d: &CalibratedDesign, s: &DesignSummary) -> String {
    let rows: Vec<Vec<String>> = (0..d.n_arms())
        .map(|k| {
            vec![
                format!("arm {}", k + 1),
                d.spec.add_stage[k].to_string(),
                d.boundaries.shapes[k].label().to_string(),
                join(&stage_sizes(&d.schedule.n_active[k]), 0),
                fmt_fixed(d.boundaries.a[k], 4),
                join(&d.boundaries.lower[k], 3),
                join(&d.boundaries.upper[k], 3),
                fmt_fixed(s.power[k], 4),
            ]
        })
        .collect();
    let mut out = table(&["", "joins", "shape", "n per stage", "a", "lower", "upper", "power"], &rows);
    out.push_str(&format!(
        "control per stage: {}\nmax N {} ({} months), FWER {}\n",
        join(&stage_sizes(&d.schedule.n_control), 0),
        fmt(d.max_n()),
        fmt_fixed(d.max_duration(), 1),
        fmt_fixed(s.fwer, 5)
    ));
    out
}

pub fn design(args: &CommonArgs) -> Result<(), CliError> {
    let ctx = context(args)?;
    let d = size_for_power(&ctx.spec, &ctx.numerics)?;
    let summary = DesignSummary::new(&d, &ctx.numerics)?;
    write_json(&ctx.out.join("design.json"), &DesignFile { config: ctx.config.clone(), design: d.clone(), summary: summary.clone() })?;
    let text = design_table(&d, &summary);
    write_text(&ctx.out.join("design.txt"), &text)?;
    print!("{text}");
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportFile {
    pub design: DesignSummary,
    pub operating_chars: OperatingChars,
}

/// One point of a sample-size distribution.
#[derive(Debug, Clone, Serialize)]
pub struct CdfRow {
    pub scenario: String,
    /// `total`, `control` or `armK`.
    pub component: String,
    pub n: f64,
    pub probability: f64,
    pub cdf: f64,
}

fn cdf_rows(scenario: &str, component: &str, pmf: &Pmf) -> Vec<CdfRow> {
    pmf.support
        .iter()
        .zip(&pmf.probabilities)
        .zip(pmf.cdf())
        .map(|((&n, &p), c)| CdfRow {
            scenario: scenario.to_string(),
            component: component.to_string(),
            n,
            probability: sig6(p),
            cdf: sig6(c),
        })
        .collect()
}

pub fn report(args: &CommonArgs) -> Result<(), CliError> {
    let ctx = context(args)?;
    let d = obtain_design(args, &ctx)?;
    let file = report_file(&d, &ctx.numerics)?;
    write_json(&ctx.out.join("report.json"), &file)?;
    let mut rows = Vec::new();
    for s in &file.operating_chars.scenarios {
        rows.extend(cdf_rows(&s.label, "total", &s.pmf.total));
        for (k, p) in s.pmf.arms.iter().enumerate() {
            rows.extend(cdf_rows(&s.label, &format!("arm{}", k + 1), p));
        }
        rows.extend(cdf_rows(&s.label, "control", &s.pmf.control));
    }
    write_csv(&ctx.out.join("cdf.csv"), &rows)?;
    let text = report_text(&d, &file);
    write_text(&ctx.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

/// Operating characteristics of `d`; a pure function of the design, so a
/// reloaded design reproduces it exactly.
pub fn report_file(d: &CalibratedDesign, numerics: &Numerics) -> Result<ReportFile, CliError> {
    Ok(ReportFile { design: DesignSummary::new(d, numerics)?, operating_chars: operating_chars(d, numerics)? })
}

fn report_text(d: &CalibratedDesign, file: &ReportFile) -> String {
    let oc = &file.operating_chars;
    let mut out = design_table(d, &file.design);
    let rows: Vec<Vec<String>> = oc
        .scenarios
        .iter()
        .map(|s| {
            vec![
                s.label.clone(),
                fmt_fixed(s.expected_n, 1),
                fmt_fixed(s.expected_duration, 1),
                s.pmf.total.support.len().to_string(),
            ]
        })
        .collect();
    out.push('\n');
    out.push_str(&table(&["scenario", "E(N)", "E(T)", "atoms"], &rows));
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateFile {
    pub replicates: u64,
    pub seed: u64,
    pub planned_add_point: f64,
    pub planned: Vec<(String, SimReport)>,
    pub deviation: Vec<DeviationPoint>,
}

/// Control patients recruited when the first late arm joins as planned, or
/// zero when every arm starts together.
fn planned_add_point(d: &CalibratedDesign) -> f64 {
    match d.schedule.add_stage.iter().copied().filter(|&s| s > 0).min() {
        Some(s) => d.schedule.n_control[s - 1],
        None => 0.0,
    }
}

/// Every half first control stage from one patient up to the end of the
/// control's recruitment.
fn default_add_points(d: &CalibratedDesign) -> Vec<f64> {
    let last = d.schedule.n_control[d.schedule.control_stages() - 1];
    let step = (d.schedule.n_control[0] / 2.0).round().max(1.0);
    let mut v = vec![1.0];
    let mut x = step;
    while x < last {
        if x > 1.0 {
            v.push(x);
        }
        x += step;
    }
    v
}

pub fn simulate(args: &CommonArgs) -> Result<(), CliError> {
    let ctx = context(args)?;
    let d = obtain_design(args, &ctx)?;
    let sim = &ctx.config.simulate;
    let scenarios = standard_scenarios(&d);
    let planned_point = planned_add_point(&d);

    let mut rows: Vec<StudyRow> = Vec::new();
    let mut planned = Vec::new();
    for (label, theta) in &scenarios {
        let r = run_simulation(&SimConfig::planned(&d, theta.clone(), sim.replicates, sim.seed))?;
        rows.extend(study_rows(planned_point, "planned", label, &r));
        planned.push((label.clone(), r));
    }

    let mut deviation = Vec::new();
    if !sim.approaches.is_empty() {
        match late_arm(&d) {
            Ok(_) => {
                let points = if sim.add_points.is_empty() { default_add_points(&d) } else { sim.add_points.clone() };
                for &n in &sim.approaches {
                    let approach = Approach::from_number(n)?;
                    deviation.extend(deviation_study(
                        &d,
                        approach,
                        &points,
                        &scenarios,
                        sim.replicates,
                        sim.seed,
                        &ctx.numerics,
                    ));
                }
            }
            Err(e) if sim.add_points.is_empty() => eprintln!("note: no deviation study: {e}"),
            Err(e) => return Err(CliError::Config(format!("add_points given but {e}"))),
        }
    }
    let mut failures = 0;
    for p in &deviation {
        match &p.results {
            Ok(reports) => {
                for (label, r) in reports {
                    rows.extend(study_rows(p.add_point, &p.approach.label(), label, r));
                }
            }
            Err(e) => {
                failures += 1;
                eprintln!("warning: approach {} at {}: {e}", p.approach.number(), p.add_point);
            }
        }
    }
    if !deviation.is_empty() && failures == deviation.len() {
        return Err(CliError::Numerical(platform_trial::Error::Schedule("every deviation point failed".into())));
    }

    let csv_rows: Vec<StudyRow> = rows
        .iter()
        .map(|r| StudyRow { estimate: sig6(r.estimate), se: sig6(r.se), ..r.clone() })
        .collect();
    write_csv(&ctx.out.join("simulate.csv"), &csv_rows)?;
    write_json(
        &ctx.out.join("simulate.json"),
        &SimulateFile { replicates: sim.replicates, seed: sim.seed, planned_add_point: planned_point, planned, deviation },
    )?;
    let text = simulate_text(&rows, d.n_arms());
    write_text(&ctx.out.join("simulate.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn simulate_text(rows: &[StudyRow], n_arms: usize) -> String {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(a, p)| *a == r.approach && *p == r.add_point) {
            keys.push((r.approach.clone(), r.add_point));
        }
    }
    let value = |approach: &str, point: f64, label: &str, metric: &str| -> String {
        rows.iter()
            .find(|r| r.approach == approach && r.add_point == point && r.theta_label == label && r.metric == metric)
            .map_or("-".to_string(), |r| fmt_fixed(r.estimate, 4))
    };
    let mut header = vec!["approach".to_string(), "add point".to_string(), "FWER".to_string()];
    header.extend((0..n_arms).map(|k| format!("power {}", k + 1)));
    header.push("E(N|H_G)".to_string());
    let table_rows: Vec<Vec<String>> = keys
        .iter()
        .map(|(a, p)| {
            let mut row = vec![a.clone(), fmt(*p), value(a, *p, "H_G", "fwer")];
            row.extend((0..n_arms).map(|k| value(a, *p, &format!("LFC{}", k + 1), &format!("power_arm{}", k + 1))));
            row.push(value(a, *p, "H_G", "expected_n"));
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    table(&header, &table_rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareFile {
    pub platform: ComparatorSummary,
    pub comparators: Vec<ComparatorSummary>,
    pub failures: Vec<(String, String)>,
}

/// Long-format comparison row.
#[derive(Debug, Clone, Serialize)]
pub struct CompareRow {
    pub design: String,
    pub metric: String,
    pub value: f64,
}

fn compare_rows(s: &ComparatorSummary) -> Vec<CompareRow> {
    let mut rows = Vec::new();
    let mut push = |metric: String, value: f64| rows.push(CompareRow { design: s.label.clone(), metric, value: sig6(value) });
    push("fwer".into(), s.fwer);
    for (k, p) in s.power.iter().enumerate() {
        push(format!("power_arm{}", k + 1), *p);
    }
    for (k, sizes) in s.stage_sizes.iter().enumerate() {
        push(format!("stages_arm{}", k + 1), sizes.len() as f64);
        for (j, n) in sizes.iter().enumerate() {
            push(format!("n_arm{}_stage{}", k + 1, j + 1), *n);
        }
    }
    push("max_n".into(), s.max_n);
    push("max_duration".into(), s.max_duration);
    for sc in &s.scenarios {
        push(format!("expected_n_{}", sc.label), sc.expected_n);
        push(format!("expected_duration_{}", sc.label), sc.expected_duration);
    }
    rows
}

fn comparator_kinds(spec: &DesignSpec) -> Vec<ComparatorKind> {
    let mut kinds = vec![ComparatorKind::SeparateFwer, ComparatorKind::SeparateNoFwer];
    let mut stages = spec.stages.clone();
    stages.sort_unstable();
    stages.dedup();
    kinds.extend(stages.into_iter().map(|stages| ComparatorKind::SimultaneousMams { stages }));
    if spec.n_initial_arms < spec.n_arms {
        kinds.extend([ComparatorKind::NaiveSameN, ComparatorKind::NaiveSameMaxN]);
    }
    kinds
}

pub fn compare(args: &CommonArgs) -> Result<(), CliError> {
    let ctx = context(args)?;
    let d = obtain_design(args, &ctx)?;
    let platform = summarize("platform", &d, &ctx.numerics)?;
    let mut comparators = Vec::new();
    let mut failures = Vec::new();
    for kind in comparator_kinds(&ctx.spec) {
        match build_comparator(kind, &d, &ctx.numerics) {
            Ok(c) => comparators.push(c.summary),
            Err(e) => {
                eprintln!("warning: {}: {e}", kind.label());
                failures.push((kind.label(), e.to_string()));
            }
        }
    }
    if comparators.is_empty() {
        return Err(CliError::Numerical(platform_trial::Error::Sizing("every comparator failed".into())));
    }
    let mut rows = compare_rows(&platform);
    for c in &comparators {
        rows.extend(compare_rows(c));
    }
    write_csv(&ctx.out.join("compare.csv"), &rows)?;
    let file = CompareFile { platform, comparators, failures };
    write_json(&ctx.out.join("compare.json"), &file)?;
    let text = compare_text(&file);
    write_text(&ctx.out.join("compare.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn compare_text(file: &CompareFile) -> String {
    let all: Vec<&ComparatorSummary> = std::iter::once(&file.platform).chain(&file.comparators).collect();
    let labels: Vec<String> = file.platform.scenarios.iter().map(|s| s.label.clone()).collect();
    let mut header = vec!["design".to_string(), "FWER".into(), "power".into(), "n per stage".into(), "max N".into(), "max T".into()];
    header.extend(labels.iter().map(|l| format!("E(N|{l})")));
    let rows: Vec<Vec<String>> = all
        .iter()
        .map(|s| {
            let mut row = vec![
                s.label.clone(),
                fmt_fixed(s.fwer, 4),
                s.power.iter().map(|p| fmt_fixed(*p, 3)).collect::<Vec<_>>().join("/"),
                s.stage_sizes.iter().map(|v| join(v, 0).replace(' ', ",")).collect::<Vec<_>>().join(" | "),
                fmt(s.max_n),
                fmt_fixed(s.max_duration, 1),
            ];
            row.extend(s.scenarios.iter().map(|sc| fmt_fixed(sc.expected_n, 1)));
            row
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    table(&header, &rows)
}
