use platform_trial::arm::Numerics;
use platform_trial::deviation::{deviated_timeline, largest_remainder, Approach};
use platform_trial::mvn::{bvn_rect, mvn_rect_prob, CorrelationMatrix, Rectangle};
use platform_trial::sim::{simulate, SimConfig, Timeline};
use platform_trial::size::{expected_n_efficient, expected_n_enumeration, sample_size_pmf};
use platform_trial::{control_schedule, shape_bounds, Boundaries, CalibratedDesign, DesignSpec, EffectConfig, Shape};
use proptest::prelude::*;

fn shape() -> impl Strategy<Value = Shape> {
    prop_oneof![Just(Shape::Triangular), Just(Shape::Pocock), Just(Shape::OBrienFleming)]
}

/// Up to three arms with up to three analyses each, joining without gaps
/// in recruitment, plus uncalibrated boundaries.
fn small_design() -> impl Strategy<Value = CalibratedDesign> {
    (1usize..=3)
        .prop_flat_map(|k| {
            (
                prop::collection::vec(1usize..=3, k),
                prop::collection::vec(0usize..=3, k),
                prop::collection::vec(shape(), k),
                prop::collection::vec(10.0f64..80.0, k),
                prop::collection::vec(1.6f64..2.8, k),
            )
        })
        .prop_filter_map("invalid layout", |(stages, offsets, shapes, n1, a)| {
            let mut add = Vec::with_capacity(stages.len());
            let mut end = 0;
            for (k, j) in stages.iter().enumerate() {
                let s = if k == 0 { 0 } else { offsets[k].min(end).max(add[k - 1]) };
                add.push(s);
                end = end.max(s + j);
            }
            let spec = DesignSpec::new(add, stages, shapes.clone(), 0.4, 0.0, 1.0, 0.025, 0.2, 10.0).ok()?;
            let n1: Vec<f64> = n1.iter().map(|v| v.round()).collect();
            let schedule = control_schedule(&spec, &n1).ok()?;
            let boundaries = Boundaries::from_shapes(&shapes, &a, &schedule).ok()?;
            CalibratedDesign::new(spec, schedule, boundaries).ok()
        })
}

fn coarse() -> Numerics {
    Numerics { nodes_per_dim: 16, ..Numerics::default() }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 20, ..ProptestConfig::default() })]

    #[test]
    fn expected_n_methods_agree(d in small_design(), th in prop::collection::vec(-0.3f64..0.6, 3)) {
        let theta = EffectConfig { theta: th[..d.n_arms()].to_vec() };
        let num = coarse();
        let fast = expected_n_efficient(&d, &theta, &num).unwrap();
        let slow = expected_n_enumeration(&d, &theta, &num).unwrap();
        prop_assert!((fast - slow).abs() < 0.5, "{fast} vs {slow}");
        prop_assert!(fast <= d.max_n() + 1e-6);
    }

    #[test]
    fn pmf_is_a_distribution(d in small_design()) {
        let pmf = sample_size_pmf(&d, &EffectConfig::global_null(d.n_arms()), &coarse()).unwrap().total;
        prop_assert!((pmf.total() - 1.0).abs() < 1e-4, "{}", pmf.total());
        let cdf = pmf.cdf();
        prop_assert!(cdf.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }
}

proptest! {
    #[test]
    fn largest_remainder_keeps_total(x in prop::collection::vec(0.0f64..500.0, 1..8)) {
        let r = largest_remainder(&x);
        prop_assert_eq!(r.iter().sum::<f64>(), x.iter().sum::<f64>().round());
        for (a, b) in r.iter().zip(&x) {
            prop_assert!(a.fract() == 0.0 && (a - b).abs() < 1.0 + 1e-9);
        }
    }

    #[test]
    fn shapes_end_in_a_decision(s in shape(), a in 0.5f64..4.0, j in 1usize..6) {
        let r: Vec<f64> = (1..=j).map(|v| v as f64).collect();
        let (l, u) = shape_bounds(s, a, &r).unwrap();
        prop_assert_eq!(l[j - 1], u[j - 1]);
        prop_assert!(l.iter().zip(&u).all(|(l, u)| l <= u));
    }

    #[test]
    fn bivariate_rectangles_are_consistent(
        lo in prop::array::uniform2(-3.0f64..1.0),
        width in prop::array::uniform2(0.1f64..3.0),
        r in -0.95f64..0.95,
    ) {
        let hi = [lo[0] + width[0], lo[1] + width[1]];
        let p = bvn_rect(lo, hi, r);
        let corr = CorrelationMatrix::new(2, vec![1.0, r, r, 1.0]).unwrap();
        let q = mvn_rect_prob(&corr, &Rectangle::new(lo.to_vec(), hi.to_vec()).unwrap(), 1e-8).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((p - q).abs() < 1e-6, "{p} vs {q}");
        // Swapping the coordinates leaves the probability unchanged.
        prop_assert!((p - bvn_rect([lo[1], lo[0]], [hi[1], hi[0]], r)).abs() < 1e-12);
    }
}

fn setting2() -> CalibratedDesign {
    let spec = DesignSpec::setting2([Shape::Triangular; 2], -(0.99f64.ln()));
    let schedule = control_schedule(&spec, &[46.0, 77.0]).unwrap();
    let boundaries = Boundaries::from_shapes(&spec.shapes, &[2.0817, 2.0378], &schedule).unwrap();
    CalibratedDesign::new(spec, schedule, boundaries).unwrap()
}

#[test]
fn keeping_interims_at_the_planned_point_changes_nothing() {
    let d = setting2();
    let planned = Timeline::planned(&d);
    let kept = deviated_timeline(&d, Approach::KeepInterim, d.schedule.n_control[0], &Numerics::default()).unwrap();
    assert_eq!(kept, planned);
    let moved = deviated_timeline(&d, Approach::MoveInterim, d.schedule.n_control[0], &Numerics::default()).unwrap();
    assert_eq!(moved, planned);
}

#[test]
fn simulation_is_reproducible() {
    let d = setting2();
    let cfg = SimConfig::planned(&d, EffectConfig::lfc(&d.spec, 1), 10_000, 99);
    let a = simulate(&cfg).unwrap();
    let b = simulate(&cfg).unwrap();
    assert_eq!(a.fwer, b.fwer);
    assert_eq!(a.power, b.power);
    assert_eq!(a.expected_n, b.expected_n);
    let c = simulate(&SimConfig { seed: 100, ..cfg }).unwrap();
    assert_ne!(a.expected_n, c.expected_n);
}

#[test]
fn every_kept_interim_timeline_is_valid() {
    let d = setting2();
    let last = d.schedule.n_control[2] as usize;
    for c in (1..last).step_by(7) {
        let tl = deviated_timeline(&d, Approach::KeepInterim, c as f64, &Numerics::default()).unwrap();
        tl.validate().unwrap();
        let arm1: f64 = tl.segments.iter().map(|s| s.arms[0]).sum();
        let arm2: f64 = tl.segments.iter().map(|s| s.arms[1]).sum();
        assert_eq!(arm1, d.schedule.n_active[0][2], "c = {c}");
        assert_eq!(arm2, d.schedule.n_active[1][1], "c = {c}");
    }
}
