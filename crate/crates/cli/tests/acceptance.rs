//! Acceptance criteria, one test each. Every test writes a single
//! `criterion N PASS|FAIL` line straight to stdout so the lines survive test
//! output capture.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use disdis::attack::{attack_targets, attacked_bounds, max_perturbation, AttackConfig};
use disdis::bound::{calibrate, prepare_splits, sample_correction, violation_rates, BoundReport, CalibrationScenario};
use disdis::consistency_lab::{band_lambda, brute_min, epsilon_star, gap_profile, inconsistency_floor, scan_band, SimplexGrid};
use disdis::critic::{FeatureMap, TrainConfig};
use disdis::data::{rng, GaussianShiftSpec};
use disdis::detect::{roc, DetectionConfig, DetectionScenario};
use disdis::discrepancy::{
    b_k, dd_surr_recast, dd_surr_recast_terms, dd_surrogate, dd_true, dd_true_recast, dd_true_recast_terms,
    pointwise_opt, surrogate_pseudo_value, LabelPair, PseudoWeights, RecastSign, Relation,
};
use disdis::losses::{eval, hessian_diag_bound, loss_grad, LossKind};
use disdis::{FiniteShiftInstance, InstancePoint, Side, SurrogateKind};
use rand::Rng;

const KINDS: [SurrogateKind; 3] = [SurrogateKind::Rg23, SurrogateKind::Glk23, SurrogateKind::Ours];

fn verdict(n: u32, pass: bool, started: Instant, detail: impl AsRef<str>) {
    let line = format!(
        "criterion {n:>2} {} ({:.1} s): {}\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64(),
        detail.as_ref()
    );
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(pass, "{}", line.trim_end());
}

#[test]
fn criterion_01_margin_root() {
    let t = Instant::now();
    let worst = (3..=10usize)
        .map(|k| (b_k(k, k as f64 / (2.0 * k as f64 - 2.0)).unwrap() - 1.0).abs())
        .fold(0.0, f64::max);
    let fast = t.elapsed().as_secs_f64() < 1.0;
    verdict(1, worst <= 1e-12 && fast, t, format!("max |b_K - 1| = {worst:e} over K = 3..10"));
}

#[test]
fn criterion_02_closed_forms_match_brute_force() {
    let t = Instant::now();
    let rs = [0.1, 0.3, 0.5, 0.6, 0.75, 0.85, 1.0, 1.5, 3.0];
    let (mut worst_v, mut worst_q, mut cases) = (0.0f64, 0.0f64, 0);
    for kind in KINDS {
        for k in 3..=5 {
            let grid = SimplexGrid::default_for(k);
            for r in rs {
                for agree in [true, false] {
                    let w = PseudoWeights { w1: r, w2: 1.0 };
                    let labels = if agree { LabelPair::new(0, 0) } else { LabelPair::new(0, 1) };
                    let opt = pointwise_opt(kind, k, w, agree).unwrap();
                    let found = brute_min(|s| surrogate_pseudo_value(kind, w, labels, s), |_| true, &grid).unwrap();
                    worst_v = worst_v.max((found.value - opt.value).abs());
                    if let Some(q) = &opt.q {
                        let e = q.iter().zip(found.q.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                        worst_q = worst_q.max(e);
                    }
                    cases += 1;
                }
            }
        }
    }
    let pass = worst_v <= 1e-6 && worst_q <= 1e-4 && t.elapsed().as_secs() < 120;
    verdict(2, pass, t, format!("{cases} cases, max value error {worst_v:e}, max argmin error {worst_q:e}"));
}

#[test]
fn criterion_03_gradients_and_hessian_bounds() {
    let t = Instant::now();
    let mut r = rng::stream(3, "acceptance", "gradients", 0);
    let (mut fd_err, mut dom_slack, mut sum_err) = (0.0f64, f64::INFINITY, 0.0f64);
    let smooth = [LossKind::Ce, LossKind::RgDis, LossKind::GlkDis, LossKind::OursDis];
    for kind in smooth {
        for _ in 0..1000 {
            let k = r.random_range(2..=8);
            let s: Vec<f64> = (0..k).map(|_| r.random_range(-10.0..10.0)).collect();
            let y = r.random_range(0..k);
            let g = loss_grad(kind, y, &s).unwrap();
            sum_err = sum_err.max(g.iter().sum::<f64>().abs());
            let bound = (kind != LossKind::RgDis).then(|| hessian_diag_bound(kind, y, &s).unwrap());
            for c in 0..k {
                let h = 1e-5;
                let mut a = s.clone();
                let mut b = s.clone();
                a[c] += h;
                b[c] -= h;
                let fd = (eval(kind, y, &a) - eval(kind, y, &b)) / (2.0 * h);
                fd_err = fd_err.max((fd - g[c]).abs() / g[c].abs().max(1.0));
                if let Some(bound) = &bound {
                    let hd = (loss_grad(kind, y, &a).unwrap()[c] - loss_grad(kind, y, &b).unwrap()[c]) / (2.0 * h);
                    dom_slack = dom_slack.min(bound[c] - hd);
                }
            }
        }
    }
    let pass = fd_err <= 1e-4 && dom_slack >= -1e-6 && sum_err <= 1e-10 && t.elapsed().as_secs() < 30;
    verdict(
        3,
        pass,
        t,
        format!("max relative FD error {fd_err:e}, min Hessian slack {dom_slack:e}, max gradient sum {sum_err:e}"),
    );
}

#[test]
fn criterion_04_binary_equivalence() {
    let t = Instant::now();
    let mut r = rng::stream(4, "acceptance", "binary", 0);
    let (mut rg, mut glk) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let s = [r.random_range(-30.0..30.0), r.random_range(-30.0..30.0)];
        let y = r.random_range(0..2);
        let ours = eval(LossKind::OursDis, y, &s);
        rg = rg.max((ours - eval(LossKind::RgDis, y, &s)).abs());
        glk = glk.max((ours - eval(LossKind::GlkDis, y, &s)).abs());
    }
    let pass = rg <= 1e-10 && glk <= 1e-10 && t.elapsed().as_secs() < 5;
    verdict(4, pass, t, format!("max |OURS - RG| = {rg:e}, max |OURS - GLK| = {glk:e}"));
}

fn random_instance(r: &mut impl Rng) -> FiniteShiftInstance {
    let k = r.random_range(2..=5);
    let m = r.random_range(1..=8);
    let mut pts: Vec<InstancePoint> = (0..m)
        .map(|_| {
            let (a, b) = (r.random::<f64>(), r.random::<f64>());
            let (p_s, p_t) = match r.random_range(0..4) {
                0 => (a, 0.0),
                1 => (0.0, b),
                _ => (a, b),
            };
            InstancePoint { p_s, p_t, y1: r.random_range(0..k), y2: r.random_range(0..k) }
        })
        .collect();
    pts.push(InstancePoint { p_s: 1.0, p_t: 1.0, y1: 0, y2: 0 });
    let (ts, tt) = pts.iter().fold((0.0, 0.0), |(s, t), p| (s + p.p_s, t + p.p_t));
    for p in &mut pts {
        p.p_s /= ts;
        p.p_t /= tt;
    }
    FiniteShiftInstance::new(k, r.random_range(0.1..5.0), pts).unwrap()
}

#[test]
fn criterion_05_recast_identities() {
    let t = Instant::now();
    let mut r = rng::stream(5, "acceptance", "recast", 0);
    let (mut worst, mut overlaps) = (0.0f64, 0usize);
    for _ in 0..100 {
        let inst = random_instance(&mut r);
        let k = inst.k();
        let labels: Vec<usize> = (0..inst.len()).map(|_| r.random_range(0..k)).collect();
        let logits: Vec<Vec<f64>> = (0..inst.len()).map(|_| (0..k).map(|_| r.random_range(-8.0..8.0)).collect()).collect();
        let dd = dd_true(&inst, &labels).unwrap();
        worst = worst.max((dd_true_recast(&inst, &labels, RecastSign::Forward).unwrap() - dd).abs());
        worst = worst.max((dd_true_recast(&inst, &labels, RecastSign::Minimize).unwrap() + dd).abs());
        let terms = dd_true_recast_terms(&inst, &labels, RecastSign::Forward).unwrap();
        overlaps += terms.iter().filter(|(a, b)| *a != 0.0 && *b != 0.0).count();
        for kind in KINDS {
            let direct = dd_surrogate(&inst, &logits, kind).unwrap();
            worst = worst.max((dd_surr_recast(&inst, &logits, kind).unwrap() - direct).abs() / direct.abs().max(1.0));
            let terms = dd_surr_recast_terms(&inst, &logits, kind).unwrap();
            overlaps += terms.iter().filter(|(a, b)| *a != 0.0 && *b != 0.0).count();
        }
    }
    let pass = worst <= 1e-12 && overlaps == 0 && t.elapsed().as_secs() < 30;
    verdict(5, pass, t, format!("max recast error {worst:e}, points active on both sides: {overlaps}"));
}

#[test]
fn criterion_06_inconsistency_floor() {
    let t = Instant::now();
    let grid = SimplexGrid::default_for(3);
    let glk = scan_band(SurrogateKind::Glk23, 3, 5.0 / 3.0, &[0.6], &grid).unwrap().remove(0);
    let glk_floor = inconsistency_floor(0.1, 5.0 / 3.0, true, true).unwrap();
    let rg = scan_band(SurrogateKind::Rg23, 3, 1.0 / 0.85, &[0.85], &grid).unwrap().remove(0);
    let rg_expected = 1.0 / 0.85 - 1.0;
    let pass = (glk.gap - 2.0 / 3.0).abs() <= 1e-6
        && (glk_floor - 0.27778).abs() <= 1e-5
        && glk.gap >= glk_floor
        && (rg.gap - rg_expected).abs() <= 1e-6
        && rg.gap > 0.0
        && t.elapsed().as_secs() < 10;
    verdict(
        6,
        pass,
        t,
        format!("GLK23 gap {:.6} >= floor {glk_floor:.5}; RG23 gap {:.6} (expected {rg_expected:.6})", glk.gap, rg.gap),
    );
}

#[test]
fn criterion_07_ours_is_consistent() {
    let t = Instant::now();
    let (mut worst_band, mut worst_g, mut cells, mut ties) = (0.0f64, 0.0f64, 0, 0);
    for k in 3..=5 {
        let grid = SimplexGrid::default_for(k);
        for r in [0.4, 0.6, 0.75, 0.85, 0.95] {
            for alpha in [1.0, 5.0 / 3.0, 1.0 / r] {
                let row = scan_band(SurrogateKind::Ours, k, alpha, &[r], &grid).unwrap().remove(0);
                worst_band = worst_band.max(row.gap.abs());
                let side = Side::active(r * alpha, 1.0).unwrap();
                let p = gap_profile(SurrogateKind::Ours, side, k, r, alpha, true, &grid).unwrap();
                if matches!(row.relation, Relation::Tie | Relation::Ambiguous) {
                    ties += 1;
                }
                worst_g = worst_g.max(p.delta_g(0.0).value.abs());
                cells += 1;
            }
        }
    }
    let pass = worst_band <= 1e-6 && worst_g <= 1e-6 && t.elapsed().as_secs() < 120;
    verdict(7, pass, t, format!("{cells} cells ({ties} with tied optima), max gap {worst_band:e}, max ΔG(0) {worst_g:e}"));
}

#[test]
fn criterion_08_epsilon_star_persistence() {
    let t = Instant::now();
    let delta = 0.1;
    let mut failures = Vec::new();
    let mut cells = 0;
    for kind in [SurrogateKind::Glk23, SurrogateKind::Rg23] {
        for k in 3..=5 {
            let r = band_lambda(kind, k).unwrap() + delta;
            let grid = SimplexGrid::default_for(k);
            for (side, alpha) in [(Side::One, 1.0 / r), (Side::Two, 1.0)] {
                let p = gap_profile(kind, side, k, r, alpha, true, &grid).unwrap();
                let eps = epsilon_star(kind, side, k, delta, alpha).unwrap();
                let (at_zero, at_eps) = (p.delta_g(0.0).value, p.delta_g(0.9 * eps).value);
                cells += 1;
                if (at_eps - at_zero).abs() > 1e-3 {
                    failures.push(format!("{kind} K={k} side {}: ΔG(0)={at_zero:.4}, ΔG(0.9ε*)={at_eps:.4}", side.index()));
                }
            }
        }
    }
    let pass = failures.is_empty() && t.elapsed().as_secs() < 120;
    let detail = if pass {
        format!("{cells} cells persist at 0.9 ε*")
    } else {
        format!("{}/{cells} cells drop below ΔG(0): {}", failures.len(), failures.join("; "))
    };
    verdict(8, pass, t, detail);
}

#[test]
fn criterion_09_bound_arithmetic() {
    let t = Instant::now();
    let corr = sample_correction(1000, 1000, 0.05).unwrap();
    let rep = BoundReport::from_terms(0.125, 0.0625, 0.05, 1000, 1000, Some(0.2)).unwrap();
    let identity = rep.bound == rep.source_test_error + rep.empirical_dd + rep.sample_correction;
    let oracle = ((1000.0 + 4.0 * 1000.0) * (1.0f64 / 0.05).ln() / (2.0 * 1000.0 * 1000.0)).sqrt();
    let pass = identity && (corr - 0.086541).abs() <= 1e-6 && (corr - oracle).abs() <= 1e-15 && t.elapsed().as_secs_f64() < 1.0;
    verdict(9, pass, t, format!("correction {corr:.8}, identity {identity}"));
}

#[test]
fn criterion_10_calibration() {
    let t = Instant::now();
    let seeds: Vec<u64> = (0..200).collect();
    let rows = calibrate(&CalibrationScenario::default(), &[SurrogateKind::Ours, SurrogateKind::Rg23], &[0.05], &seeds)
        .unwrap();
    let rates: BTreeMap<&str, f64> = violation_rates(&rows).into_iter().map(|(k, _, v)| (k.name(), v)).collect();
    let (ours, rg) = (rates["OURS"], rates["RG23"]);
    let pass = ours <= 0.15 && ours <= rg + 0.02 && t.elapsed().as_secs() < 600;
    verdict(10, pass, t, format!("violation rate at δ=0.05 over 200 seeds: OURS {ours:.3}, RG23 {rg:.3}"));
}

#[test]
fn criterion_11_adversarial_robustness() {
    let t = Instant::now();
    let data = GaussianShiftSpec::translated(3, 2, 2.0, 1.0, 1000, 1000);
    let (mut wins, mut total, mut worst) = (0usize, 0usize, 0.0f64);
    let mut per_fraction = Vec::new();
    let mut every_fraction = true;
    let mut budget_ok = true;
    for fraction in [0.0, 0.25, 0.5] {
        let mut w = 0;
        for seed in 0..20u64 {
            let sp = prepare_splits(&data, &TrainConfig::reference(), 0.5, seed).unwrap();
            let tc = TrainConfig { seed, batch_size: Some(64), ..TrainConfig::default() };
            let cfg = AttackConfig { fraction, seed, feature_map: FeatureMap::ReferenceLogits, ..AttackConfig::default() };
            let out = attack_targets(
                &sp.src_train,
                &sp.src_test,
                &sp.tgt_train,
                &sp.tgt_test,
                &sp.reference,
                SurrogateKind::Ours,
                &tc,
                &cfg,
            )
            .unwrap();
            let m = max_perturbation(&out.target_train, &sp.tgt_train).max(max_perturbation(&out.target_test, &sp.tgt_test));
            worst = worst.max(m);
            budget_ok &= m <= cfg.epsilon + 1e-12;
            let reports =
                attacked_bounds(&sp.src_train, &sp.src_test, &sp.reference, &out, &KINDS, cfg.feature_map, &tc, cfg.delta)
                    .unwrap();
            let dd = |k: SurrogateKind| reports.iter().find(|r| r.0 == k).unwrap().1.empirical_dd;
            if dd(SurrogateKind::Ours) >= dd(SurrogateKind::Rg23).max(dd(SurrogateKind::Glk23)) {
                w += 1;
            }
        }
        per_fraction.push(format!("f={fraction}: {w}/20"));
        every_fraction &= w as f64 / 20.0 >= 0.6;
        wins += w;
        total += 20;
    }
    let rate = wins as f64 / total as f64;
    let pass = rate >= 0.6 && every_fraction && budget_ok && t.elapsed().as_secs() < 1200;
    verdict(
        11,
        pass,
        t,
        format!("OURS highest in {wins}/{total} ({}), max perturbation {worst:.6e} vs ε {:.6e}", per_fraction.join(", "), 4.0 / 255.0),
    );
}

#[test]
fn criterion_12_detection() {
    let t = Instant::now();
    let setup = DetectionScenario::default().setup(0).unwrap();
    let mut lines = Vec::new();
    let mut pass = true;
    let (mut sum_glk, mut sum_ours) = (0.0, 0.0);
    for n in [10, 20, 50] {
        let cfg = DetectionConfig { n_target: n, null_runs: 200, bootstrap: 1000, ..DetectionConfig::default() };
        let glk = roc(&setup, SurrogateKind::Glk23, &cfg, 200).unwrap();
        let ours = roc(&setup, SurrogateKind::Ours, &cfg, 200).unwrap();
        for r in [&glk, &ours] {
            pass &= r.ci_low <= r.auc && r.auc <= r.ci_high;
        }
        pass &= ours.auc >= glk.auc - 0.02;
        sum_glk += glk.auc;
        sum_ours += ours.auc;
        lines.push(format!(
            "N={n} GLK23 {:.3} [{:.3}, {:.3}] OURS {:.3} [{:.3}, {:.3}]",
            glk.auc, glk.ci_low, glk.ci_high, ours.auc, ours.ci_low, ours.ci_high
        ));
    }
    pass &= sum_ours / 3.0 >= sum_glk / 3.0 - 0.02;
    let binary = DetectionScenario {
        data: GaussianShiftSpec::translated(2, 2, 2.0, 2.0, 2000, 1000),
        ..DetectionScenario::default()
    }
    .setup(0)
    .unwrap();
    let cfg = DetectionConfig { n_target: 20, null_runs: 100, bootstrap: 200, ..DetectionConfig::default() };
    let a = roc(&binary, SurrogateKind::Glk23, &cfg, 50).unwrap();
    let b = roc(&binary, SurrogateKind::Ours, &cfg, 50).unwrap();
    let identical = a.negatives == b.negatives && a.positives == b.positives && a.auc == b.auc;
    pass &= identical && t.elapsed().as_secs() < 900;
    verdict(12, pass, t, format!("{}; K=2 statistics identical: {identical}", lines.join("; ")));
}

fn run_cli(out: &Path, threads: usize, args: &[&str]) {
    let status = Command::new(env!("CARGO_BIN_EXE_disdis"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("DISDIS_THREADS", threads.to_string())
        .stdout(std::process::Stdio::null())
        .status()
        .unwrap();
    assert!(status.success(), "disdis {args:?} failed with {status}");
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

#[test]
fn criterion_13_determinism() {
    let t = Instant::now();
    let cfg_dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = cfg_dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p.to_string_lossy().into_owned()
    };
    let gen = write("gen.json", r#"{"n_source": 200, "n_target": 200, "band_ratios": [0.6, 0.9, 1.5]}"#);
    let cons = write("consistency.json", r#"{"r_values": [0.6, 0.85], "epsilons": [0.0, 0.005]}"#);
    let bound = write("bound.json", r#"{"n_source": 300, "n_target": 300, "restarts": 4, "seeds": 3, "deltas": [0.05, 0.5]}"#);
    let attack = write(
        "attack.json",
        r#"{"n_source": 300, "n_target": 300, "restarts": 4, "scenarios": 1, "steps": 3, "fractions": [0.5]}"#,
    );
    let detect = write(
        "detect.json",
        r#"{"k": 3, "n_source": 800, "n_shifted": 300, "n_reference": 400, "n_critic_source": 100, "sample_sizes": [10], "null_runs": 100, "repeats": 30, "bootstrap": 100}"#,
    );
    let commands: Vec<Vec<&str>> = vec![
        vec!["gen", "--config", &gen],
        vec!["consistency", "--config", &cons],
        vec!["train", "--config", &bound],
        vec!["bound", "--config", &bound],
        vec!["calibrate", "--config", &bound],
        vec!["attack", "--config", &attack],
        vec!["detect", "--config", &detect],
        vec!["selftest"],
    ];
    let runs: Vec<(usize, tempfile::TempDir)> = [1, 4, 1].into_iter().map(|n| (n, tempfile::tempdir().unwrap())).collect();
    for (threads, dir) in &runs {
        for args in &commands {
            let mut a = args.clone();
            a.extend(["--seed", "11"]);
            run_cli(dir.path(), *threads, &a);
        }
    }
    let base = snapshot(runs[0].1.path());
    let mut differing = Vec::new();
    for (threads, dir) in &runs[1..] {
        let other = snapshot(dir.path());
        if other.keys().ne(base.keys()) {
            differing.push(format!("file set differs at {threads} threads"));
        }
        for (name, bytes) in &base {
            if other.get(name) != Some(bytes) {
                differing.push(format!("{name} at {threads} threads"));
            }
        }
    }
    let commands_seen: std::collections::BTreeSet<&str> =
        base.keys().filter_map(|k| k.split(['/', '\\']).next()).collect();
    let pass = differing.is_empty() && commands_seen.len() == commands.len();
    let detail = if differing.is_empty() {
        format!("{} files from {} commands byte-identical across reruns at 1 and 4 threads", base.len(), commands_seen.len())
    } else {
        format!("differences: {}", differing.join(", "))
    };
    verdict(13, pass, t, detail);
}
