//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cobe::apps::{accuracy, cluster_pipeline, nmi, sir, ClusterConfig, SIR_CAP_DB};
use cobe::bench::{correlation_bound_case, run_linked_bss, run_projection, LinkedBssConfig, ProjectionBenchConfig};
use cobe::cifa::{cnfe, split, CnfeConfig};
use cobe::cobe::{cobe, CobeConfig};
use cobe::cobec::{cobec, procrustes_basis, CobecConfig};
use cobe::linalg::max_principal_angle;
use cobe::multiblock::scenarios::{cluster_samples, overlay_mixtures, ClusterScenario, OverlaySpec, PERIODIC_SOURCES};
use cobe::multiblock::{generate_synthetic, SyntheticSpec};
use cobe::preprocess::{preprocess, RankChoice};
use cobe::rng;
use nalgebra::DVector;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn exact_recovery() -> Outcome {
    let t = Instant::now();
    let mut exact = 0;
    let mut worst = 0.0f64;
    for seed in 0..30 {
        let (mb, truth) = generate_synthetic(&SyntheticSpec::uniform(200, 5, 30, 3, 8, seed)).unwrap();
        let f = preprocess(&mb, &RankChoice::Revealing).unwrap();
        let fit = cobe(&f, &CobeConfig::default().with_epsilon(1e-6).with_seed(seed)).unwrap();
        if fit.count() == 3 {
            exact += 1;
            worst = worst.max(max_principal_angle(&fit.a_bar, &truth.common_basis));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        exact == 30 && worst < 1e-6 && secs < 5.0,
        format!("{exact}/30 runs with c=3, max angle {worst:.2e} rad, {secs:.2} s"),
    )
}

fn cobe_cobec_agreement() -> Outcome {
    let mut agree = 0;
    let mut worst = 0.0f64;
    for seed in 0..30 {
        let (mb, _) = generate_synthetic(&SyntheticSpec::uniform(200, 5, 30, 3, 8, seed)).unwrap();
        let f = preprocess(&mb, &RankChoice::Revealing).unwrap();
        let seq = cobe(&f, &CobeConfig::default().with_seed(seed)).unwrap();
        let alt = cobec(&f, &CobecConfig::new(3).with_seed(seed)).unwrap();
        let angle = max_principal_angle(&seq.a_bar, &alt.a_bar);
        worst = worst.max(angle);
        agree += usize::from(seq.count() == 3 && angle < 1e-6);
    }
    outcome(agree == 30, format!("{agree}/30 seeds, max angle {worst:.2e} rad"))
}

fn procrustes_optimality() -> Outcome {
    let mut g = rng::stream(2024, 0);
    let mut worst_rel = 0.0f64;
    let mut beaten = 0;
    for _ in 0..20 {
        let rows = g.random_range(5..40);
        let c = g.random_range(1..=rows.min(6));
        let p = rng::gaussian_matrix(rows, c, &mut g);
        let a = procrustes_basis(&p).unwrap();
        let value = (p.transpose() * &a).trace();
        // nalgebra's bidiagonal SVD is an independent oracle for Σσ
        let nuclear: f64 = p.clone().svd(false, false).singular_values.sum();
        worst_rel = worst_rel.max((value - nuclear).abs() / nuclear);
        for _ in 0..1000 {
            let q = rng::gaussian_matrix(rows, c, &mut g).qr().q();
            if (p.transpose() * q).trace() > value * (1.0 + 1e-12) {
                beaten += 1;
            }
        }
    }
    outcome(
        worst_rel < 1e-8 && beaten == 0,
        format!("max relative gap to nuclear norm {worst_rel:.2e}, {beaten} of 20000 competitors better"),
    )
}

fn correlation_bound() -> Outcome {
    let levels = [0.01, 0.1, 0.3];
    let mut violations = 0;
    let mut applied = 0;
    let mut slack = f64::INFINITY;
    for i in 0..100 {
        let case = correlation_bound_case(levels[i % 3], 500 + i as u64).unwrap();
        applied += usize::from(case.applies());
        violations += usize::from(case.violated());
        if case.applies() {
            slack = slack.min(case.min_corr - case.bound);
        }
    }
    outcome(
        violations == 0 && applied == 100,
        format!("{violations} violations in {applied}/100 applicable instances, min margin {slack:.3}"),
    )
}

/// Shared by criteria 5 and 6: 50 runs at 20 dB.
fn linked_runs(snr: f64, runs: u64) -> (Vec<cobe::bench::LinkedBssRun>, f64) {
    let mut cfg = LinkedBssConfig::default();
    cfg.scenario.snr_db = Some(snr);
    let t = Instant::now();
    let out = (0..runs)
        .map(|i| run_linked_bss(&cfg, rng::run_seed(1, i)).unwrap().0)
        .collect();
    (out, t.elapsed().as_secs_f64())
}

fn linked_bss_table(runs: &[cobe::bench::LinkedBssRun], secs: f64) -> Outcome {
    let col = |get: fn(&cobe::bench::LinkedBssRun) -> &Vec<f64>, k: usize| {
        mean(&runs.iter().map(|r| get(r)[k]).collect::<Vec<_>>())
    };
    let mut ok = secs < 60.0;
    let mut rows = Vec::new();
    for k in 0..PERIODIC_SOURCES {
        let (a, b, p) = (col(|r| &r.sir_cobe, k), col(|r| &r.sir_cobec, k), col(|r| &r.sir_pca, k));
        ok &= a - p >= 3.0 && (a - b).abs() < 1.0;
        rows.push(format!("s{}: {a:.1}/{b:.1}/{p:.1}", k + 1));
    }
    outcome(
        ok,
        format!("mean SIR dB COBE/COBEc/PCA {}, {} runs in {secs:.1} s", rows.join(", "), runs.len()),
    )
}

fn gap_detection(at20: &[cobe::bench::LinkedBssRun]) -> Outcome {
    let rate = |runs: &[cobe::bench::LinkedBssRun]| {
        runs.iter().filter(|r| r.detected == PERIODIC_SOURCES).count() as f64 / runs.len() as f64
    };
    let r10 = rate(&linked_runs(10.0, 50).0);
    let r20 = rate(at20);
    let r30 = rate(&linked_runs(30.0, 50).0);
    outcome(
        r20 >= 0.9 && r30 >= 0.95,
        format!("count 4 detected in {:.0}% / {:.0}% / {:.0}% of runs at 10 / 20 / 30 dB", r10 * 100.0, r20 * 100.0, r30 * 100.0),
    )
}

fn projection_equivalence() -> Outcome {
    let sizes = [50, 100, 200];
    let cfg = ProjectionBenchConfig::default();
    let mut good = [0usize; 3];
    let mut worst = [1.0f64; 3];
    let mut full_secs = 0.0;
    let mut proj_secs = 0.0;
    for seed in 0..50 {
        let (runs, secs) = run_projection(&cfg, &sizes, seed).unwrap();
        full_secs += secs[0];
        proj_secs += secs[1];
        for (i, r) in runs.iter().enumerate() {
            let min = r.span_correlations.iter().copied().fold(1.0, f64::min);
            worst[i] = worst[i].min(if r.accepted == cfg.common { min } else { 0.0 });
            good[i] += usize::from(r.accepted == cfg.common && min > 0.99);
        }
    }
    outcome(
        good.iter().all(|&g| g >= 48) && proj_secs < full_secs,
        format!(
            "runs with all columns > 0.99 at I_P=50/100/200: {}/{}/{} of 50 (min {:.4}/{:.4}/{:.4}); wall-clock {proj_secs:.2} s projected (I_P=50) vs {full_secs:.2} s full",
            good[0], good[1], good[2], worst[0], worst[1], worst[2]
        ),
    )
}

fn cnfe_overlay() -> Outcome {
    let mut monotone = 0;
    let mut worst = 0.0f64;
    let mut ok = true;
    for seed in 0..20 {
        let data = overlay_mixtures(&OverlaySpec {
            seed,
            ..OverlaySpec::default()
        })
        .unwrap();
        let f = preprocess(&data.blocks, &RankChoice::Revealing).unwrap();
        let basis = cobe(&f, &CobeConfig::default().with_seed(seed)).unwrap();
        if basis.count() != 2 {
            ok = false;
            continue;
        }
        let d = split(&f, &basis.a_bar).unwrap();
        let fit = cnfe(
            &d,
            &CnfeConfig {
                r: 2,
                seed,
                ..CnfeConfig::default()
            },
        )
        .unwrap();
        let mono = fit
            .objective_trace
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-9 * w[0].max(1.0));
        monotone += usize::from(mono);
        ok &= fit.f_bar.iter().all(|&x| x >= 0.0);
        for n in 0..d.len() {
            worst = worst.max(fit.relative_error(&d, n));
        }
    }
    outcome(
        ok && monotone == 20 && worst < 1e-3,
        format!("{monotone}/20 runs monotone, max relative error {worst:.2e}"),
    )
}

fn clustering_benefit() -> Outcome {
    let counts = [0usize, 2, 3];
    let mut acc = [Vec::new(), Vec::new(), Vec::new()];
    for seed in 0..20 {
        let spec = ClusterScenario {
            seed,
            ..ClusterScenario::default()
        };
        let data = cluster_samples(&spec);
        for (i, &c) in counts.iter().enumerate() {
            let cfg = ClusterConfig {
                n_groups: spec.clusters,
                k: spec.clusters,
                c,
                seed,
                ..ClusterConfig::default()
            };
            let (_, report) = cluster_pipeline(&data.samples, Some(&data.labels), &cfg).unwrap();
            acc[i].push(report.accuracy.unwrap());
        }
    }
    let (a0, a2, a3) = (mean(&acc[0]), mean(&acc[1]), mean(&acc[2]));
    outcome(
        a2 - a0 >= 10.0 && (a3 - a2).abs() < 5.0,
        format!("mean accuracy {a0:.1}% without removal, {a2:.1}% with c=2, {a3:.1}% with c=3"),
    )
}

fn metric_tables() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let s = DVector::from_fn(200, |i, _| (i as f64 * 0.17).sin() + 0.3 * (i as f64 * 0.05).cos());
    check("sir perfect", sir(&s, &s).unwrap() == SIR_CAP_DB);
    check("sir negated", sir(&s, &(-&s)).unwrap() == SIR_CAP_DB);
    let mut g = rng::stream(77, 0);
    let n = 20_000;
    let raw = rng::gaussian_vector(n, &mut g);
    let std = |v: &DVector<f64>| {
        let c = v.add_scalar(-v.mean());
        let sd = (c.norm_squared() / v.len() as f64).sqrt();
        c / sd
    };
    let sn = std(&raw);
    let e = rng::gaussian_vector(n, &mut g);
    let e = &e * (0.01 * sn.norm_squared() / e.norm_squared()).sqrt();
    let hat = std(&(&sn + &e));
    let direct = 10.0 * (sn.norm_squared() / (&sn - &hat).norm_squared()).log10();
    let got = sir(&sn, &(&sn + &e)).unwrap();
    check("sir 1% interference", (got - 20.0).abs() < 0.5 && (got - direct).abs() < 1e-9);

    let truth = [0, 0, 1, 1, 2, 2];
    check("accuracy identity", accuracy(&truth, &truth).unwrap() == 100.0);
    check("accuracy relabelled", accuracy(&[2, 2, 0, 0, 1, 1], &truth).unwrap() == 100.0);
    check(
        "accuracy one miss",
        (accuracy(&[0, 0, 1, 2, 2, 2], &truth).unwrap() - 83.33).abs() < 0.01,
    );
    check("nmi identity", (nmi(&truth, &truth).unwrap().percent - 100.0).abs() < 1e-9);
    check(
        "nmi permuted",
        (nmi(&[1, 1, 2, 2, 0, 0], &truth).unwrap().percent - 100.0).abs() < 1e-9,
    );
    let t: Vec<usize> = (0..10_000).map(|_| g.random_range(0..4)).collect();
    let p: Vec<usize> = (0..10_000).map(|_| g.random_range(0..4)).collect();
    check("nmi independent", nmi(&p, &t).unwrap().percent < 5.0);
    check("nmi degenerate", nmi(&[0; 6], &truth).unwrap().degenerate);
    let detail = if failures.is_empty() {
        "10 sir/accuracy/nmi examples hold".to_string()
    } else {
        format!("failed: {}", failures.join(", "))
    };
    outcome(failures.is_empty(), detail)
}

fn cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_cobe"))
        .args(args)
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

/// Every file in `dir`, with the `timings` object removed from report.json.
fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            let mut bytes = std::fs::read(&p).unwrap();
            if name == "report.json" {
                let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
                v.as_object_mut().unwrap().remove("timings");
                bytes = serde_json::to_vec(&v).unwrap();
            }
            (name, bytes)
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let config = root.join("run.toml");
    std::fs::write(
        &config,
        "seed = 11\n\
         [generate]\nrows = 80\nblocks = 3\ncols = 12\ncommon = 2\nrank = 5\nsnr_db = 25.0\n\
         [cobe]\nauto = true\nepsilon = 0.5\n\
         [bench.linked.scenario]\nrows = 1500\nblocks = 4\ncols = 20\n\
         [cluster.scenario]\nper_cluster = 20\n\
         [classify.scenario]\nper_class = 16\n",
    )
    .unwrap();
    let cfg = config.to_str().unwrap();
    let data = root.join("data");
    if !cli(&["generate", "--config", cfg, "--out", data.to_str().unwrap()]) {
        return outcome(false, "generate failed");
    }
    let input = data.to_str().unwrap();
    let commands: [(&str, Vec<&str>); 8] = [
        ("generate", vec![]),
        ("cobe", vec!["--input", input]),
        ("cobe", vec!["--input", input, "--c", "2", "--format", "json"]),
        ("split", vec!["--input", input, "--c", "2"]),
        ("cnfe", vec!["--input", input, "--c", "2"]),
        ("bench-linked-bss", vec!["--runs", "2"]),
        ("cluster-demo", vec!["--runs", "2"]),
        ("classify-demo", vec!["--runs", "3"]),
    ];
    let mut identical = 0;
    let mut failed = Vec::new();
    for (i, (cmd, extra)) in commands.iter().enumerate() {
        let mut snaps = Vec::new();
        for rep in 0..2 {
            let out = root.join(format!("{cmd}-{i}-{rep}"));
            let mut args = vec![*cmd, "--config", cfg, "--out", out.to_str().unwrap()];
            args.extend(extra.iter().copied());
            if !cli(&args) {
                failed.push(format!("{cmd} exited non-zero"));
                break;
            }
            snaps.push(snapshot(&out));
        }
        if snaps.len() == 2 && snaps[0] == snaps[1] {
            identical += 1;
        } else if snaps.len() == 2 {
            failed.push(format!("{cmd} output differs"));
        }
    }
    outcome(
        identical == commands.len(),
        format!("{identical}/{} invocations byte-identical{}", commands.len(), if failed.is_empty() { String::new() } else { format!("; {}", failed.join(", ")) }),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("{} criterion {n:>2} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "exact recovery", exact_recovery());
    report(2, "COBE/COBEc agreement", cobe_cobec_agreement());
    report(3, "Procrustes optimality", procrustes_optimality());
    report(4, "correlation bound", correlation_bound());
    let (at20, secs) = linked_runs(20.0, 50);
    report(5, "linked BSS comparison", linked_bss_table(&at20, secs));
    report(6, "gap detection", gap_detection(&at20));
    report(7, "projection equivalence", projection_equivalence());
    report(8, "CNFE", cnfe_overlay());
    report(9, "clustering benefit", clustering_benefit());
    report(10, "metric units", metric_tables());
    report(11, "determinism", determinism());
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria pass", results.len());
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
