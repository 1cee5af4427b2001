use disdis::consistency_lab::{
    band_lambda, brute_min, gap_profile, inconsistency_floor, scan_band, GapProfile, SimplexGrid, GAP_TOL,
};
use disdis::data::{gen_discrete_instance, rng, BandRecipe, DiscreteInstanceSpec};
use disdis::discrepancy::{
    excess_surrogate, excess_true, pointwise_opt, surrogate_pseudo_value, LabelPair, PseudoWeights, Relation, Side,
    SurrogateKind,
};
use disdis::losses::score_to_class;
use rand::Rng;

fn profile(kind: SurrogateKind, side: Side, r: f64, alpha: f64) -> GapProfile {
    let g = gap_profile(kind, side, 3, r, alpha, true, &SimplexGrid::default_for(3)).unwrap();
    assert!(g.active, "side must be active for the chosen masses");
    g
}

#[test]
fn brute_force_matches_closed_forms() {
    let grid = SimplexGrid::default_for(3);
    for kind in [SurrogateKind::Rg23, SurrogateKind::Glk23, SurrogateKind::Ours] {
        for (r, agree) in [(0.3, true), (0.75, true), (2.0, true), (0.5, false)] {
            let w = PseudoWeights { w1: r, w2: 1.0 };
            let labels = if agree { LabelPair::new(0, 0) } else { LabelPair::new(0, 1) };
            let opt = pointwise_opt(kind, 3, w, agree).unwrap();
            let found = brute_min(|s| surrogate_pseudo_value(kind, w, labels, s), |_| true, &grid).unwrap();
            assert!((found.value - opt.value).abs() <= 1e-6, "{kind} r={r}: {} vs {}", found.value, opt.value);
            if let Some(q) = &opt.q {
                let err = q.iter().zip(found.q.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err <= 1e-4, "{kind} r={r}: q error {err}");
            }
        }
    }
}

#[test]
fn gap_functionals_are_monotone() {
    for kind in [SurrogateKind::Rg23, SurrogateKind::Glk23, SurrogateKind::Ours] {
        for (side, r, alpha) in [(Side::One, 0.6, 1.0 / 0.6), (Side::Two, 0.6, 1.0), (Side::Two, 0.9, 1.0)] {
            let p = profile(kind, side, r, alpha);
            let eps: Vec<f64> = (0..=40).map(|i| i as f64 * 0.025).collect();
            for w in eps.windows(2) {
                assert!(p.delta_g(w[1]).value <= p.delta_g(w[0]).value, "{kind} ΔG");
                assert!(p.delta_h(w[1]).value >= p.delta_h(w[0]).value, "{kind} ΔH");
            }
            assert_eq!(p.delta_h(0.0).value, 0.0);
        }
    }
}

/// Smallest surrogate excess among labels that would lower the true excess
/// below its value at surrogate minimisers.
fn measured_threshold(p: &GapProfile) -> f64 {
    let floor = p.delta_g(0.0).value;
    p.labels.iter().filter(|c| c.true_excess < floor).map(|c| c.surrogate_min).fold(f64::INFINITY, f64::min)
}

#[test]
fn inconsistency_persists_below_measured_threshold() {
    let labels = LabelPair::new(0, 0);
    let mut r_gen = rng::stream(7, "test", "persistence", 0);
    for kind in [SurrogateKind::Rg23, SurrogateKind::Glk23] {
        let r = if kind == SurrogateKind::Glk23 { 0.6 } else { 0.85 };
        for (side, alpha) in [(Side::One, 1.0 / r), (Side::Two, 1.0)] {
            let p = profile(kind, side, r, alpha);
            let at_zero = p.delta_g(0.0).value;
            assert!(at_zero > 1e-3, "{kind} {side:?}: no gap in the band");
            let m = measured_threshold(&p);
            assert!(m.is_finite() && m > GAP_TOL);
            assert_eq!(p.delta_g(0.9 * m).value, at_zero);
            assert!(p.delta_g(1.1 * m).value < at_zero);
            // Independent oracle: random logits with small surrogate excess
            // never reach a smaller true excess.
            let (p_s, p_t) = (r * alpha, 1.0);
            let mut hits = 0;
            for _ in 0..20000 {
                let spread = if r_gen.random::<bool>() { 0.5 } else { 6.0 };
                let s: Vec<f64> = (0..3).map(|_| r_gen.random_range(-spread..spread)).collect();
                let surr = excess_surrogate(kind, side, p_s, p_t, alpha, labels, &s).unwrap();
                if surr <= 0.9 * m {
                    hits += 1;
                    let t = excess_true(side, p_s, p_t, alpha, 3, labels, score_to_class(&s)).unwrap();
                    assert!(t >= at_zero - 1e-12, "{kind} {side:?}: s={s:?} surr={surr} true={t}");
                }
            }
            assert!(hits > 50, "{kind} {side:?}: oracle sampled only {hits} near-optimal points");
        }
    }
}

#[test]
fn band_floor_examples() {
    let grid = SimplexGrid::default_for(3);
    let glk = scan_band(SurrogateKind::Glk23, 3, 5.0 / 3.0, &[0.6], &grid).unwrap();
    assert!((glk[0].gap - 2.0 / 3.0).abs() <= 1e-6);
    let floor = inconsistency_floor(0.1, 5.0 / 3.0, true, true).unwrap();
    assert!((floor - 0.27778).abs() <= 1e-5);
    assert!(glk[0].gap >= floor);
    assert_eq!(glk[0].check, Some(true));

    let rg = scan_band(SurrogateKind::Rg23, 3, 1.0 / 0.85, &[0.85], &grid).unwrap();
    assert!((rg[0].gap - 0.17647).abs() <= 1e-5);
    assert_eq!(rg[0].relation, Relation::Agrees);
    assert_eq!(glk[0].relation, Relation::Agrees);
    assert!(band_lambda(SurrogateKind::Rg23, 3).unwrap() < 0.85);

    for alpha in [1.0, 5.0 / 3.0] {
        let ours = scan_band(SurrogateKind::Ours, 3, alpha, &[0.4, 0.6, 0.85], &grid).unwrap();
        for row in ours {
            assert!(row.gap.abs() <= 1e-6, "OURS r={} gap {}", row.r, row.gap);
        }
    }
}

#[test]
fn band_recipe_builds_point_masses() {
    let spec = DiscreteInstanceSpec::Band {
        k: 3,
        alpha: 5.0 / 3.0,
        recipe: BandRecipe { lambda: 0.5, delta: 0.1, ratios: vec![0.6] },
    };
    let g = gen_discrete_instance(&spec).unwrap();
    let p = g.instance.points()[0];
    assert!((p.p_s - 1.0).abs() < 1e-12 && (p.p_t - 1.0).abs() < 1e-12);
    assert!(g.in_band[0]);
    let empty = DiscreteInstanceSpec::Band {
        k: 3,
        alpha: 1.0,
        recipe: BandRecipe { lambda: 0.5, delta: 0.3, ratios: vec![0.6] },
    };
    assert!(gen_discrete_instance(&empty).is_err());
}
