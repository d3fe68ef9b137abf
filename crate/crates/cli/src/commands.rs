use std::path::{Path, PathBuf};
use std::time::Instant;

use cobe::apps::{classify, cluster_pipeline, train_classifier, TrainConfig, MIN_CLASS_SAMPLES};
use cobe::bench::{run_linked_bss, LinkedBssRun};
use cobe::cifa::{cnfe, split, CifaDecomposition, CnfeConfig};
use cobe::cobe::{cobe, CobeConfig, CommonBasis};
use cobe::cobec::{cobec, CobecConfig};
use cobe::multiblock::scenarios::{class_samples, cluster_samples, PERIODIC_SOURCES};
use cobe::multiblock::{generate_synthetic, read_multiblock, write_multiblock, MultiBlock};
use cobe::preprocess::{preprocess, OrthoFactor};
use cobe::rng;
use cobe::scaling::{projected_common, CommonSolver, ProjectionPlan};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::report::{matrix_rows, mean_std, write_file, write_matrix, Report, Table};
use crate::CliError;

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
}

impl Context {
    fn input(&self) -> Result<&Path, CliError> {
        self.cfg
            .input
            .as_deref()
            .ok_or_else(|| CliError::Usage("this command needs --input DIR (or `input` in the config)".into()))
    }

    fn blocks(&self) -> Result<MultiBlock, CliError> {
        Ok(read_multiblock(self.input()?)?)
    }

    fn cobe_config(&self) -> CobeConfig {
        let s = &self.cfg.cobe;
        CobeConfig {
            epsilon: s.epsilon,
            max_components: s.max_components.unwrap_or(usize::MAX),
            auto_stop: s.auto,
            seed: self.cfg.seed,
            ..CobeConfig::default()
        }
    }

    fn cobec_config(&self, c: usize) -> CobecConfig {
        CobecConfig {
            max_iter: self.cfg.cobe.cobec_max_iter,
            ..CobecConfig::new(c).with_seed(self.cfg.seed)
        }
    }

    /// COBEc when a count is configured, COBE otherwise.
    fn common_basis(&self, factors: &[OrthoFactor]) -> Result<(CommonBasis, &'static str), CliError> {
        Ok(match self.cfg.cobe.c {
            Some(c) => (cobec(factors, &self.cobec_config(c))?, "cobec"),
            None => (cobe(factors, &self.cobe_config())?, "cobe"),
        })
    }
}

fn timed<T>(report: &mut Report, stage: &str, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    report.time(stage, t.elapsed().as_secs_f64());
    out
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, |x| json!(x))
}

pub fn generate(ctx: &Context) -> Result<Report, CliError> {
    let spec = ctx.cfg.generate.spec(ctx.cfg.seed);
    let mut report = Report::new("generate", &ctx.cfg);
    let (mb, truth) = timed(&mut report, "generate", || generate_synthetic(&spec))?;
    write_multiblock(&ctx.out, &mb)?;
    let doc = json!({
        "spec": spec,
        "common_basis": matrix_rows(&truth.common_basis),
        "individual_bases": truth.individual_bases.iter().map(matrix_rows).collect::<Vec<_>>(),
        "mixings": truth.mixings.iter().map(matrix_rows).collect::<Vec<_>>(),
    });
    write_file(&ctx.out.join("truth.json"), &(doc.to_string() + "\n"))?;
    report.metric("blocks", mb.len());
    report.metric("rows", mb.shared_rows());
    report.metric("cols", mb.col_counts());
    report.metric("common", spec.common);
    Ok(report)
}

fn write_loadings(ctx: &Context, mb: &MultiBlock, a_bar: &DMatrix<f64>) -> Result<(), CliError> {
    write_matrix(&ctx.out, "a_bar", a_bar, ctx.cfg.format)?;
    for (n, y) in mb.matrices().enumerate() {
        write_matrix(&ctx.out, &format!("b_bar_{n:03}"), &y.tr_mul(a_bar), ctx.cfg.format)?;
    }
    Ok(())
}

pub fn run_cobe(ctx: &Context) -> Result<Report, CliError> {
    let mb = ctx.blocks()?;
    let mut report = Report::new("cobe", &ctx.cfg);
    let s = &ctx.cfg.cobe;
    let n = mb.len() as f64;
    let (basis, solver) = if let Some(i_p) = s.project {
        let out = timed(&mut report, "solve", || -> Result<_, CliError> {
            let plan = ProjectionPlan::gaussian(mb.shared_rows(), i_p, rng::run_seed(ctx.cfg.seed, 1))?;
            let solver = match s.c {
                Some(c) => CommonSolver::Cobec(ctx.cobec_config(c)),
                None => CommonSolver::Cobe(ctx.cobe_config()),
            };
            Ok(projected_common(&mb, &plan, &s.rank, &solver, s.verify_tol.unwrap_or(s.epsilon))?)
        })?;
        report.metric("projected_rows", i_p);
        report.metric("projected_count", out.projected.count());
        report.metric("verification", &out.verification);
        report.metric("accepted", &out.accepted);
        let name = if s.c.is_some() { "projected-cobec" } else { "projected-cobe" };
        (out.basis, name)
    } else {
        let factors = timed(&mut report, "preprocess", || preprocess(&mb, &s.rank))?;
        report.metric("ranks", factors.iter().map(OrthoFactor::rank).collect::<Vec<_>>());
        timed(&mut report, "solve", || ctx.common_basis(&factors))?
    };
    report.metric("solver", solver);
    report.metric("common_count", basis.count());
    report.metric("residuals", &basis.residuals);
    report.metric("stop", basis.diagnostics.stop);
    report.metric("orthogonality_error", basis.diagnostics.orthogonality_error);
    report.metric("reorthogonalized", basis.diagnostics.reorthogonalized);

    let mut curve = Table::new(&["f", "f_over_n", "accepted"]);
    let candidates = if basis.diagnostics.candidate_residuals.is_empty() {
        &basis.residuals
    } else {
        &basis.diagnostics.candidate_residuals
    };
    for (k, f) in candidates.iter().enumerate() {
        curve.push(format!("{}", k + 1), vec![json!(f), json!(f / n), json!(k < basis.count())]);
    }
    report.table("f_curve", curve);
    write_loadings(ctx, &mb, &basis.a_bar)?;
    Ok(report)
}

fn decompose(ctx: &Context, report: &mut Report) -> Result<(Vec<OrthoFactor>, CifaDecomposition), CliError> {
    let mb = ctx.blocks()?;
    let factors = timed(report, "preprocess", || preprocess(&mb, &ctx.cfg.cobe.rank))?;
    let (basis, solver) = timed(report, "solve", || ctx.common_basis(&factors))?;
    report.metric("solver", solver);
    report.metric("common_count", basis.count());
    report.metric("residuals", &basis.residuals);
    let decomp = timed(report, "split", || split(&factors, &basis.a_bar))?;
    Ok((factors, decomp))
}

pub fn run_split(ctx: &Context) -> Result<Report, CliError> {
    let mut report = Report::new("split", &ctx.cfg);
    let (factors, d) = decompose(ctx, &mut report)?;
    report.metric("rank_deficient", &d.rank_deficient);
    let mut blocks = Table::new(&["rank", "individual_rank", "common_energy", "reconstruction_error"]);
    let f = ctx.cfg.format;
    write_matrix(&ctx.out, "a_bar", &d.common_basis, f)?;
    for (n, factor) in factors.iter().enumerate() {
        let cleaned = factor.cleaned();
        let total = cleaned.norm_squared();
        let common = d.common_space[n].norm_squared();
        let err = (&cleaned - &d.common_space[n] - &d.individual_space[n]).norm();
        blocks.push(
            format!("{n}"),
            vec![
                json!(factor.rank()),
                json!(d.individual_basis[n].ncols()),
                json!(if total > 0.0 { common / total } else { 0.0 }),
                json!(err),
            ],
        );
        write_matrix(&ctx.out, &format!("b_bar_{n:03}"), &d.common_coeffs[n], f)?;
        write_matrix(&ctx.out, &format!("individual_basis_{n:03}"), &d.individual_basis[n], f)?;
        write_matrix(&ctx.out, &format!("individual_coeffs_{n:03}"), &d.individual_coeffs[n], f)?;
    }
    report.table("blocks", blocks);
    Ok(report)
}

pub fn run_cnfe(ctx: &Context) -> Result<Report, CliError> {
    let mut report = Report::new("cnfe", &ctx.cfg);
    let (_, d) = decompose(ctx, &mut report)?;
    let c = d.common_basis.ncols();
    if c == 0 {
        return Err(cobe::Error::InvalidInput("no common components to factorise".into()).into());
    }
    let s = &ctx.cfg.cnfe;
    let cfg = CnfeConfig {
        r: s.r.unwrap_or(c),
        max_iter: s.max_iter,
        tol: s.tol,
        mode: s.mode,
        seed: ctx.cfg.seed,
    };
    let fit = timed(&mut report, "cnfe", || cnfe(&d, &cfg))?;
    report.metric("r", cfg.r);
    report.metric("iterations", fit.iterations);
    report.metric("objective", fit.objective_trace.last().copied().unwrap_or(0.0));
    let mut blocks = Table::new(&["relative_error"]);
    for n in 0..d.len() {
        blocks.push(format!("{n}"), vec![json!(fit.relative_error(&d, n))]);
        write_matrix(&ctx.out, &format!("m_bar_{n:03}"), &fit.m_bars[n], ctx.cfg.format)?;
    }
    report.table("blocks", blocks);
    let mut trace = Table::new(&["objective"]);
    for (i, v) in fit.objective_trace.iter().enumerate() {
        trace.push(format!("{}", i + 1), vec![json!(v)]);
    }
    report.table("objective_trace", trace);
    write_matrix(&ctx.out, "f_bar", &fit.f_bar, ctx.cfg.format)?;
    Ok(report)
}

/// `log10(f_{c+1} / f_c)` at the true count.
fn gap_magnitude(run: &LinkedBssRun) -> Option<f64> {
    let f = &run.f_values;
    (f.len() > PERIODIC_SOURCES && f[PERIODIC_SOURCES - 1] > 0.0)
        .then(|| (f[PERIODIC_SOURCES] / f[PERIODIC_SOURCES - 1]).log10())
}

pub fn bench_linked_bss(ctx: &Context) -> Result<Report, CliError> {
    let b = &ctx.cfg.bench;
    if b.runs == 0 {
        return Err(CliError::Usage("--runs must be positive".into()));
    }
    let mut report = Report::new("bench-linked-bss", &ctx.cfg);
    let sweep = |report: &mut Report, snr: Option<f64>| -> Result<Vec<LinkedBssRun>, CliError> {
        let mut cfg = b.linked.clone();
        if snr.is_some() {
            cfg.scenario.snr_db = snr;
        }
        let mut runs = Vec::with_capacity(b.runs);
        for i in 0..b.runs {
            let (run, t) = run_linked_bss(&cfg, rng::run_seed(ctx.cfg.seed, i as u64))?;
            report.time("preprocess", t.preprocess);
            report.time("cobe", t.cobe);
            report.time("cobec", t.cobec);
            report.time("pca", t.pca);
            runs.push(run);
        }
        Ok(runs)
    };
    let runs = sweep(&mut report, None)?;

    let mut columns: Vec<String> = (1..=PERIODIC_SOURCES).map(|k| format!("sir{k}")).collect();
    if b.runs > 1 {
        columns.extend((1..=PERIODIC_SOURCES).map(|k| format!("std{k}")));
    }
    let mut sir = Table::new(&columns.iter().map(String::as_str).collect::<Vec<_>>());
    let pick: [(&str, fn(&LinkedBssRun) -> &Vec<f64>); 3] = [
        ("COBE", |r| &r.sir_cobe),
        ("COBEc", |r| &r.sir_cobec),
        ("PCA", |r| &r.sir_pca),
    ];
    for (name, get) in pick {
        let stats: Vec<(f64, Option<f64>)> = (0..PERIODIC_SOURCES)
            .map(|k| mean_std(&runs.iter().map(|r| get(r)[k]).collect::<Vec<_>>()))
            .collect();
        let mut row: Vec<Value> = stats.iter().map(|s| json!(s.0)).collect();
        if b.runs > 1 {
            row.extend(stats.iter().map(|s| opt(s.1)));
        }
        sir.push(name, row);
    }
    report.table("sir", sir);

    let mut per_run = Table::new(&["seed", "detected", "gap_log10"]);
    for (i, r) in runs.iter().enumerate() {
        per_run.push(format!("{i}"), vec![json!(r.seed), json!(r.detected), opt(gap_magnitude(r))]);
    }
    report.table("runs", per_run);
    let rate = |runs: &[LinkedBssRun]| {
        runs.iter().filter(|r| r.detected == PERIODIC_SOURCES).count() as f64 / runs.len() as f64
    };
    let mean_gap = |runs: &[LinkedBssRun]| {
        let g: Vec<f64> = runs.iter().filter_map(gap_magnitude).collect();
        (!g.is_empty()).then(|| mean_std(&g).0)
    };
    report.metric("runs", b.runs);
    report.metric("detection_rate", rate(&runs));
    report.metric("mean_gap_log10", mean_gap(&runs));

    if !b.snr_sweep.is_empty() {
        let mut gap = Table::new(&["snr_db", "detection_rate", "gap_log10"]);
        for &snr in &b.snr_sweep {
            let runs = sweep(&mut report, Some(snr))?;
            gap.push(format!("{snr}"), vec![json!(snr), json!(rate(&runs)), opt(mean_gap(&runs))]);
        }
        report.table("gap", gap);
    }
    Ok(report)
}

/// Samples as columns of each block; the label is the block index.
fn labelled_from_blocks(mb: &MultiBlock) -> (Vec<DVector<f64>>, Vec<usize>) {
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (n, y) in mb.matrices().enumerate() {
        for col in y.column_iter() {
            samples.push(col.into_owned());
            labels.push(n);
        }
    }
    (samples, labels)
}

pub fn cluster_demo(ctx: &Context) -> Result<Report, CliError> {
    let s = &ctx.cfg.cluster;
    if s.runs == 0 {
        return Err(CliError::Usage("--runs must be positive".into()));
    }
    let mut report = Report::new("cluster-demo", &ctx.cfg);
    let input = ctx.cfg.input.as_ref().map(|p| read_multiblock(p)).transpose()?;
    let mut base = ctx.cfg.cluster_config();
    if let (Some(mb), None) = (&input, s.k) {
        base.k = mb.len();
        base.n_groups = s.n_groups.unwrap_or(mb.len());
    }
    let counts = [0, base.c, base.c + 1];
    let mut acc = vec![Vec::new(); counts.len()];
    let mut nmi = vec![Vec::new(); counts.len()];
    for r in 0..s.runs {
        let seed = rng::run_seed(ctx.cfg.seed, r as u64);
        let (samples, truth) = match &input {
            Some(mb) => labelled_from_blocks(mb),
            None => {
                let d = cluster_samples(&cobe::multiblock::scenarios::ClusterScenario {
                    seed,
                    ..s.scenario.clone()
                });
                (d.samples, d.labels)
            }
        };
        for (i, &c) in counts.iter().enumerate() {
            let cfg = cobe::apps::ClusterConfig { c, seed, ..base.clone() };
            let (labels, rep) = timed(&mut report, "pipeline", || cluster_pipeline(&samples, Some(&truth), &cfg))?;
            acc[i].push(rep.accuracy.unwrap_or(f64::NAN));
            nmi[i].push(rep.nmi.map_or(f64::NAN, |m| m.percent));
            if r == 0 && c == base.c {
                write_embedding(&ctx.out, &rep.embedding, &labels, &truth)?;
            }
        }
    }
    let mut table = Table::new(&["c", "accuracy", "accuracy_std", "nmi", "nmi_std"]);
    for (i, &c) in counts.iter().enumerate() {
        let (am, asd) = mean_std(&acc[i]);
        let (nm, nsd) = mean_std(&nmi[i]);
        let label = if c == 0 { "without-removal".to_string() } else { format!("removal-c{c}") };
        table.push(label, vec![json!(c), json!(am), opt(asd), json!(nm), opt(nsd)]);
    }
    report.table("clustering", table);
    report.metric("k", base.k);
    report.metric("n_groups", base.n_groups);
    report.metric("runs", s.runs);
    report.metric("accuracy_gain", mean_std(&acc[1]).0 - mean_std(&acc[0]).0);
    Ok(report)
}

fn write_embedding(dir: &Path, embedding: &[Vec<f64>], labels: &[usize], truth: &[usize]) -> Result<(), CliError> {
    let dims = embedding.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["sample".to_string(), "truth".to_string(), "cluster".to_string()];
    header.extend((1..=dims).map(|d| format!("x{d}")));
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(&header).map_err(io)?;
    for (t, point) in embedding.iter().enumerate() {
        let mut rec = vec![t.to_string(), truth[t].to_string(), labels[t].to_string()];
        rec.extend(point.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    write_file(&dir.join("embedding.csv"), &String::from_utf8_lossy(&bytes))
}

pub fn classify_demo(ctx: &Context) -> Result<Report, CliError> {
    let s = &ctx.cfg.classify;
    if s.runs == 0 {
        return Err(CliError::Usage("--runs must be positive".into()));
    }
    if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
        return Err(cobe::Error::InvalidInput(format!(
            "train_fraction must be in (0, 1), got {}",
            s.train_fraction
        ))
        .into());
    }
    let mut report = Report::new("classify-demo", &ctx.cfg);
    let input = ctx.cfg.input.as_ref().map(|p| read_multiblock(p)).transpose()?;
    let mut overall = Vec::with_capacity(s.runs);
    let mut per_class: Vec<Vec<f64>> = Vec::new();
    let mut ties = 0usize;
    for r in 0..s.runs {
        let seed = rng::run_seed(ctx.cfg.seed, r as u64);
        let classes: Vec<Vec<DVector<f64>>> = match &input {
            Some(mb) => mb.matrices().map(|y| y.column_iter().map(|c| c.into_owned()).collect()).collect(),
            None => {
                let d = class_samples(&cobe::multiblock::scenarios::ClassScenario {
                    seed,
                    ..s.scenario.clone()
                });
                let k = d.labels.iter().max().map_or(0, |m| m + 1);
                let mut by = vec![Vec::new(); k];
                for (x, &l) in d.samples.into_iter().zip(&d.labels) {
                    by[l].push(x);
                }
                by
            }
        };
        per_class.resize(classes.len(), Vec::new());
        let mut train = Vec::with_capacity(classes.len());
        let mut test = Vec::new();
        for (k, xs) in classes.iter().enumerate() {
            let mut g = rng::stream(seed, 1000 + k as u64);
            let order = rng::permutation(xs.len(), &mut g);
            let n_train = ((xs.len() as f64 * s.train_fraction).round() as usize)
                .max(MIN_CLASS_SAMPLES)
                .min(xs.len().saturating_sub(1));
            train.push(order[..n_train].iter().map(|&i| xs[i].clone()).collect::<Vec<_>>());
            test.extend(order[n_train..].iter().map(|&i| (xs[i].clone(), k)));
        }
        let cfg = TrainConfig {
            c_fraction: s.c_fraction,
            method: s.method,
            seed,
        };
        let model = timed(&mut report, "train", || train_classifier(&train, &cfg))?;
        let mut hits = vec![(0usize, 0usize); classes.len()];
        timed(&mut report, "classify", || {
            for (x, k) in &test {
                let c = classify(x, &model);
                ties += usize::from(c.tie);
                hits[*k].1 += 1;
                hits[*k].0 += usize::from(c.label == *k);
            }
        });
        let correct: usize = hits.iter().map(|h| h.0).sum();
        overall.push(100.0 * correct as f64 / test.len().max(1) as f64);
        for (k, h) in hits.iter().enumerate() {
            per_class[k].push(100.0 * h.0 as f64 / h.1.max(1) as f64);
        }
    }
    let mut table = Table::new(&["mean", "std"]);
    let (m, sd) = mean_std(&overall);
    table.push("overall", vec![json!(m), opt(sd)]);
    for (k, v) in per_class.iter().enumerate() {
        let (m, sd) = mean_std(v);
        table.push(format!("class-{k}"), vec![json!(m), opt(sd)]);
    }
    report.table("accuracy", table);
    report.metric("runs", s.runs);
    report.metric("train_fraction", s.train_fraction);
    report.metric("ties", ties);
    Ok(report)
}
