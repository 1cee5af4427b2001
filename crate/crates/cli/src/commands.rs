use disdis::attack::{attack_targets, attacked_bounds, max_perturbation};
use disdis::bound::{
    calibrate as run_calibration, error_bound, prepare_splits, sample_correction, violation_rates, write_calibration_csv,
    BoundReport,
};
use disdis::consistency_lab::{gap_profile, scan_band, write_band_csv, write_gap_csv, GapRow, SimplexGrid};
use disdis::critic::{reference_logit_features, train_critic, CriticSide, FeatureMap, TrainConfig};
use disdis::data::{fmt_f64, gen_discrete_instance, gen_gaussian_shift, rng, save_csv};
use disdis::detect::{roc, write_roc_csv};
use disdis::discrepancy::{b_k, dd_surr_recast, dd_surrogate, dd_true, dd_true_recast, RecastSign};
use disdis::losses::{eval, LossKind};
use disdis::{FiniteShiftInstance, InstancePoint, Side, SurrogateKind};
use rand::Rng;
use serde::Serialize;

use crate::config::{self, AttackRunConfig, BoundConfig, ConsistencyConfig, DetectConfig, GenConfig, SelftestConfig};
use crate::output::RunDir;
use crate::{CliError, Common};

fn announce(dir: &RunDir) {
    println!("{}", dir.path().display());
}

pub fn gen(c: &Common) -> Result<(), CliError> {
    let mut cfg: GenConfig = config::load(c.config.as_deref())?;
    cfg.seed = c.seed.unwrap_or(cfg.seed);
    cfg.k = c.k.unwrap_or(cfg.k);
    let (src, tgt) = gen_gaussian_shift(&cfg.gaussian(), cfg.seed)?;
    let band = cfg.band().map(|spec| gen_discrete_instance(&spec)).transpose()?;
    let dir = RunDir::create(&c.out, "gen", &cfg)?;
    save_csv(&src, dir.path().join("source.csv"))?;
    save_csv(&tgt, dir.path().join("target.csv"))?;
    if let Some(b) = band {
        dir.json("instance.json", &b)?;
    }
    announce(&dir);
    Ok(())
}

pub fn consistency(c: &Common) -> Result<(), CliError> {
    let mut cfg: ConsistencyConfig = config::load(c.config.as_deref())?;
    cfg.seed = c.seed.unwrap_or(cfg.seed);
    if !c.kinds.is_empty() {
        cfg.kinds = c.kinds.clone();
    }
    if let Some(k) = c.k {
        cfg.k_values = vec![k];
    }
    let mut band = Vec::new();
    let mut gaps = Vec::new();
    for &kind in &cfg.kinds {
        for &k in &cfg.k_values {
            let grid = match cfg.grid_resolution {
                Some(res) => SimplexGrid::new(k, res, SimplexGrid::default_for(k).refine_steps)?,
                None => SimplexGrid::default_for(k),
            };
            for &r in &cfg.r_values {
                let alpha = cfg.alpha.unwrap_or(1.0 / r);
                let row = scan_band(kind, k, alpha, &[r], &grid)?.remove(0);
                let side = Side::active(r * alpha, 1.0)?;
                let profile = gap_profile(kind, side, k, r, alpha, true, &grid)?;
                for &eps in &cfg.epsilons {
                    for (name, estimate) in [("delta_g", profile.delta_g(eps)), ("delta_h", profile.delta_h(eps))] {
                        gaps.push(GapRow {
                            functional: name.into(),
                            profile_kind: kind,
                            side,
                            k,
                            alpha,
                            r,
                            relation: row.relation,
                            estimate,
                        });
                    }
                }
                band.push(row);
            }
        }
    }
    let dir = RunDir::create(&c.out, "consistency", &cfg)?;
    dir.csv("band.csv", |w| write_band_csv(&band, w))?;
    dir.csv("gaps.csv", |w| write_gap_csv(&gaps, w))?;
    announce(&dir);
    let failed: Vec<String> =
        band.iter().filter(|r| r.check == Some(false)).map(|r| format!("{} K={} r={}", r.kind, r.k, r.r)).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("band checks failed: {}", failed.join(", "))))
    }
}

fn bound_config(c: &Common) -> Result<BoundConfig, CliError> {
    let mut cfg: BoundConfig = config::load(c.config.as_deref())?;
    cfg.seed = c.seed.unwrap_or(cfg.seed);
    cfg.k = c.k.unwrap_or(cfg.k);
    if !c.kinds.is_empty() {
        cfg.kinds = c.kinds.clone();
    }
    Ok(cfg)
}

#[derive(Serialize)]
struct TrainSummary {
    kind: SurrogateKind,
    selected_restart: usize,
    train_dd: f64,
    test_dd: f64,
}

pub fn train(c: &Common) -> Result<(), CliError> {
    let cfg = bound_config(c)?;
    let sc = cfg.scenario();
    let sp = prepare_splits(&sc.data, &sc.reference, sc.train_fraction, cfg.seed)?;
    let features = |d: &disdis::Dataset| match cfg.feature_map {
        FeatureMap::RawInput => Ok(d.clone()),
        FeatureMap::ReferenceLogits => reference_logit_features(&sp.reference, d),
    };
    let (src_f, tgt_f) = (features(&sp.src_train)?, features(&sp.tgt_train)?);
    let (ref_s, ref_t) = (sp.reference.predict_all(&sp.src_train), sp.reference.predict_all(&sp.tgt_train));
    let mut trained = Vec::new();
    for &kind in &cfg.kinds {
        let tc = TrainConfig { seed: rng::child_seed(cfg.seed, "bound", "critic", 0), ..sc.critic.clone() };
        let (critic, trace) = train_critic(
            CriticSide::new(&src_f, &ref_s)?,
            CriticSide::new(&tgt_f, &ref_t)?,
            sc.data.k,
            kind,
            cfg.feature_map,
            &tc,
        )?;
        trained.push((kind, critic, trace));
    }
    let dir = RunDir::create(&c.out, "train", &cfg)?;
    dir.json("reference.json", &sp.reference)?;
    let mut summary = Vec::new();
    for (kind, critic, trace) in &trained {
        dir.json(&format!("critic_{kind}.json"), critic)?;
        let mut csv = String::from("epoch,objective,dd_true\n");
        for s in &trace.epochs {
            csv += &format!("{},{},{}\n", s.epoch, fmt_f64(s.objective), fmt_f64(s.dd_true));
        }
        dir.bytes(&format!("trace_{kind}.csv"), csv.as_bytes())?;
        let test = error_bound(&sp.src_test, &sp.tgt_test, &sp.reference, critic, 0.05)?;
        summary.push(TrainSummary {
            kind: *kind,
            selected_restart: trace.selected,
            train_dd: trace.restart_dd[trace.selected].unwrap_or(f64::NAN),
            test_dd: test.empirical_dd,
        });
    }
    dir.json("summary.json", &summary)?;
    announce(&dir);
    Ok(())
}

#[derive(Serialize)]
struct BoundEntry {
    kind: SurrogateKind,
    report: BoundReport,
    identity_holds: bool,
}

pub fn bound(c: &Common) -> Result<(), CliError> {
    let cfg = bound_config(c)?;
    let rows = run_calibration(&cfg.scenario(), &cfg.kinds, &cfg.deltas, &[cfg.seed])?;
    let entries: Vec<BoundEntry> = rows
        .into_iter()
        .map(|r| {
            let rep = r.report;
            let identity_holds = rep.bound == rep.source_test_error + rep.empirical_dd + rep.sample_correction;
            BoundEntry { kind: r.kind, report: rep, identity_holds }
        })
        .collect();
    let dir = RunDir::create(&c.out, "bound", &cfg)?;
    dir.json("bound.json", &entries)?;
    announce(&dir);
    if entries.iter().all(|e| e.identity_holds) {
        Ok(())
    } else {
        Err(CliError::Check("bound identity does not hold".into()))
    }
}

#[derive(Serialize)]
struct ViolationSummary {
    kind: SurrogateKind,
    delta: f64,
    violation_rate: f64,
    seeds: u64,
}

pub fn calibrate(c: &Common) -> Result<(), CliError> {
    let cfg = bound_config(c)?;
    if cfg.seeds == 0 {
        return Err(CliError::config("seeds must be >= 1"));
    }
    let seeds: Vec<u64> = (cfg.seed..cfg.seed + cfg.seeds).collect();
    let rows = run_calibration(&cfg.scenario(), &cfg.kinds, &cfg.deltas, &seeds)?;
    let summary: Vec<ViolationSummary> = violation_rates(&rows)
        .into_iter()
        .map(|(kind, delta, violation_rate)| ViolationSummary { kind, delta, violation_rate, seeds: cfg.seeds })
        .collect();
    let dir = RunDir::create(&c.out, "calibrate", &cfg)?;
    dir.csv("calibration.csv", |w| write_calibration_csv(&rows, w))?;
    dir.json("summary.json", &summary)?;
    announce(&dir);
    Ok(())
}

#[derive(Serialize)]
struct AttackSummary {
    fraction: f64,
    scenarios: u64,
    /// Scenarios in which each kind's held-out discrepancy was the largest,
    /// ties counting for every tied kind.
    wins: Vec<(SurrogateKind, u64)>,
    max_perturbation: f64,
    budget_respected: bool,
}

pub fn attack(c: &Common) -> Result<(), CliError> {
    let mut cfg: AttackRunConfig = config::load(c.config.as_deref())?;
    cfg.seed = c.seed.unwrap_or(cfg.seed);
    cfg.k = c.k.unwrap_or(cfg.k);
    if !c.kinds.is_empty() {
        cfg.kinds = c.kinds.clone();
    }
    let data = cfg.data();
    let mut trace = String::from("fraction,seed,step,gap,bound,trueErr,skipped\n");
    let mut scores = String::from("fraction,seed,kind,dd,bound,trueErr\n");
    let mut summary = Vec::new();
    for &fraction in &cfg.fractions {
        let mut wins: Vec<(SurrogateKind, u64)> = cfg.kinds.iter().map(|&k| (k, 0)).collect();
        let mut worst = 0.0f64;
        for seed in cfg.seed..cfg.seed + cfg.scenarios {
            let sp = prepare_splits(&data, &TrainConfig::reference(), cfg.train_fraction, seed)?;
            let tc = cfg.critic(seed);
            let out = attack_targets(
                &sp.src_train,
                &sp.src_test,
                &sp.tgt_train,
                &sp.tgt_test,
                &sp.reference,
                cfg.attack_kind,
                &tc,
                &cfg.attack(fraction, seed),
            )?;
            worst = worst
                .max(max_perturbation(&out.target_train, &sp.tgt_train))
                .max(max_perturbation(&out.target_test, &sp.tgt_test));
            for t in &out.trace {
                trace += &format!(
                    "{},{seed},{},{},{},{},{}\n",
                    fmt_f64(fraction),
                    t.step,
                    fmt_f64(t.gap),
                    fmt_f64(t.bound),
                    fmt_f64(t.true_err),
                    t.skipped
                );
            }
            let reports =
                attacked_bounds(&sp.src_train, &sp.src_test, &sp.reference, &out, &cfg.kinds, cfg.feature_map, &tc, cfg.delta)?;
            let best = reports.iter().map(|(_, r)| r.empirical_dd).fold(f64::NEG_INFINITY, f64::max);
            for (kind, r) in &reports {
                scores += &format!(
                    "{},{seed},{kind},{},{},{}\n",
                    fmt_f64(fraction),
                    fmt_f64(r.empirical_dd),
                    fmt_f64(r.bound),
                    r.true_target_error.map(fmt_f64).unwrap_or_default()
                );
                if r.empirical_dd >= best {
                    wins.iter_mut().filter(|w| w.0 == *kind).for_each(|w| w.1 += 1);
                }
            }
        }
        summary.push(AttackSummary {
            fraction,
            scenarios: cfg.scenarios,
            wins,
            max_perturbation: worst,
            budget_respected: worst <= cfg.epsilon + 1e-12,
        });
    }
    let dir = RunDir::create(&c.out, "attack", &cfg)?;
    dir.bytes("trace.csv", trace.as_bytes())?;
    dir.bytes("scores.csv", scores.as_bytes())?;
    dir.json("summary.json", &summary)?;
    announce(&dir);
    if summary.iter().all(|s| s.budget_respected) {
        Ok(())
    } else {
        Err(CliError::Check("perturbation budget exceeded".into()))
    }
}

#[derive(Serialize)]
struct AucEntry {
    kind: SurrogateKind,
    #[serde(rename = "N")]
    n: usize,
    auc: f64,
    ci_low: f64,
    ci_high: f64,
}

pub fn detect(c: &Common) -> Result<(), CliError> {
    let mut cfg: DetectConfig = config::load(c.config.as_deref())?;
    cfg.seed = c.seed.unwrap_or(cfg.seed);
    cfg.k = c.k.unwrap_or(cfg.k);
    if !c.kinds.is_empty() {
        cfg.kinds = c.kinds.clone();
    }
    let setup = cfg.scenario().setup(cfg.seed)?;
    let mut reports = Vec::new();
    for &n in &cfg.sample_sizes {
        for &kind in &cfg.kinds {
            reports.push(roc(&setup, kind, &cfg.detection(n), cfg.repeats)?);
        }
    }
    let dir = RunDir::create(&c.out, "detect", &cfg)?;
    for r in &reports {
        dir.csv(&format!("roc_{}_N{}.csv", r.kind, r.n), |w| write_roc_csv(&r.points, w))?;
    }
    let aucs: Vec<AucEntry> = reports
        .iter()
        .map(|r| AucEntry { kind: r.kind, n: r.n, auc: r.auc, ci_low: r.ci_low, ci_high: r.ci_high })
        .collect();
    dir.json("auc.json", &aucs)?;
    announce(&dir);
    Ok(())
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn random_instance(r: &mut impl Rng, k: usize) -> Result<FiniteShiftInstance, CliError> {
    let m = r.random_range(1..6);
    let mut pts: Vec<InstancePoint> = (0..m)
        .map(|_| InstancePoint {
            p_s: r.random::<f64>(),
            p_t: r.random::<f64>(),
            y1: r.random_range(0..k),
            y2: r.random_range(0..k),
        })
        .collect();
    pts.push(InstancePoint { p_s: 1.0, p_t: 1.0, y1: 0, y2: 0 });
    let (ts, tt) = pts.iter().fold((0.0, 0.0), |(s, t), p| (s + p.p_s, t + p.p_t));
    for p in &mut pts {
        p.p_s /= ts;
        p.p_t /= tt;
    }
    Ok(FiniteShiftInstance::new(k, r.random_range(0.2..4.0), pts)?)
}

fn selftest_checks(seed: u64) -> Result<Vec<Check>, CliError> {
    let mut checks = Vec::new();

    let worst = (3..=10usize)
        .map(|k| b_k(k, k as f64 / (2.0 * k as f64 - 2.0)).map(|v| (v - 1.0).abs()))
        .collect::<disdis::Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    checks.push(Check { name: "margin root crosses one", passed: worst <= 1e-12, detail: format!("max error {worst:e}") });

    let mut r = rng::stream(seed, "selftest", "binary", 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let s = [r.random_range(-10.0..10.0), r.random_range(-10.0..10.0)];
        let y = r.random_range(0..2);
        let ours = eval(LossKind::OursDis, y, &s);
        worst = worst.max((ours - eval(LossKind::RgDis, y, &s)).abs()).max((ours - eval(LossKind::GlkDis, y, &s)).abs());
    }
    checks.push(Check { name: "binary losses coincide", passed: worst <= 1e-10, detail: format!("max gap {worst:e}") });

    let mut r = rng::stream(seed, "selftest", "recast", 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = r.random_range(2..6);
        let inst = random_instance(&mut r, k)?;
        let labels: Vec<usize> = (0..inst.len()).map(|_| r.random_range(0..k)).collect();
        let logits: Vec<Vec<f64>> =
            (0..inst.len()).map(|_| (0..k).map(|_| r.random_range(-8.0..8.0)).collect()).collect();
        let dd = dd_true(&inst, &labels)?;
        worst = worst.max((dd_true_recast(&inst, &labels, RecastSign::Forward)? - dd).abs());
        for kind in [SurrogateKind::Rg23, SurrogateKind::Glk23, SurrogateKind::Ours] {
            let direct = dd_surrogate(&inst, &logits, kind)?;
            worst = worst.max((dd_surr_recast(&inst, &logits, kind)? - direct).abs() / direct.abs().max(1.0));
        }
    }
    checks.push(Check { name: "recast identities", passed: worst <= 1e-12, detail: format!("max error {worst:e}") });

    let corr = sample_correction(1000, 1000, 0.05)?;
    checks.push(Check {
        name: "sample correction",
        passed: (corr - 0.086541).abs() <= 1e-6,
        detail: format!("value {corr}"),
    });

    let grid = SimplexGrid::default_for(3);
    let glk = scan_band(SurrogateKind::Glk23, 3, 5.0 / 3.0, &[0.6], &grid)?.remove(0);
    checks.push(Check {
        name: "inconsistent surrogate leaves a gap",
        passed: (glk.gap - 2.0 / 3.0).abs() <= 1e-6 && glk.check == Some(true),
        detail: format!("gap {}", glk.gap),
    });
    let ours = scan_band(SurrogateKind::Ours, 3, 5.0 / 3.0, &[0.6, 0.85], &grid)?;
    let worst = ours.iter().map(|r| r.gap.abs()).fold(0.0, f64::max);
    checks.push(Check { name: "consistent surrogate has no gap", passed: worst <= 1e-6, detail: format!("max gap {worst:e}") });
    Ok(checks)
}

pub fn selftest(c: &Common) -> Result<(), CliError> {
    let mut cfg: SelftestConfig = config::load(c.config.as_deref())?;
    cfg.seed = c.seed.unwrap_or(cfg.seed);
    let checks = selftest_checks(cfg.seed)?;
    for ch in &checks {
        println!("{} {}: {}", if ch.passed { "PASS" } else { "FAIL" }, ch.name, ch.detail);
    }
    let dir = RunDir::create(&c.out, "selftest", &cfg)?;
    dir.json("selftest.json", &checks)?;
    announce(&dir);
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Check(format!("{failed} selftest checks failed")))
    }
}
