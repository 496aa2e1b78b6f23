use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{Context, Result};
use log::{info, warn};
use nalgebra::DMatrix;
use serde_json::{json, Value};
use spatialgl::gibbs::GibbsConfig;
use spatialgl::harness::{
    run_sim_study_1, run_sim_study_2, simulate_problem, StudyOneConfig, StudyTwoConfig,
};
use spatialgl::io::{
    fmt_f64, load_matrix, residualize, standardize_phenotypes, write_matrix, ExpectedShape,
    Standardization,
};
use spatialgl::pipeline::{
    best_by_waic, fit_gibbs, fit_vb, lambda2_grid_waic, prepare, regularization_path,
    rho_grid_waic, spatial_for, FitSettings, GridFit, Lambda2Choice, DEFAULT_RHO_GRID,
};
use spatialgl::report::{chain_stats, default_names, emit_results, RunResults, SummaryTable};
use spatialgl::rng::derive_seed;
use spatialgl::selection::{fdr_threshold, CoefficientPosterior};
use spatialgl::tuning::waic;
use spatialgl::vb::VBConfig;
use spatialgl::{default_neighborhood, Dataset, Error};

use crate::config::Resolver;
use crate::{Common, DataArgs, FitArgs, SimulateArgs, StudyArgs, StudyTwoArgs, TuneArgs};

const THREADS_VAR: &str = "SPATIALGL_THREADS";

fn invalid(name: &'static str, msg: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        msg: msg.into(),
    }
}

/// Caps the global rayon pool when `SPATIALGL_THREADS` is set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        invalid(
            "SPATIALGL_THREADS",
            format!("expected a positive integer, got {raw:?}"),
        )
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Gibbs,
    Vb,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gibbs" => Ok(Mode::Gibbs),
            "vb" => Ok(Mode::Vb),
            _ => Err(format!("unknown mode {s:?} (expected gibbs or vb)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Gibbs => "gibbs",
            Mode::Vb => "vb",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lambda2Arg(pub Lambda2Choice);

impl FromStr for Lambda2Arg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "moment" {
            return Ok(Lambda2Arg(Lambda2Choice::Moment));
        }
        match s.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(Lambda2Arg(Lambda2Choice::Value(v))),
            _ => Err(format!(
                "lambda2 must be a positive number or `moment`, got {s:?}"
            )),
        }
    }
}

impl fmt::Display for Lambda2Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Lambda2Choice::Moment => f.write_str("moment"),
            Lambda2Choice::Value(v) => write!(f, "{v}"),
        }
    }
}

struct DataPaths {
    y: PathBuf,
    x: PathBuf,
    a: Option<PathBuf>,
    confounders: Option<PathBuf>,
    header: bool,
    standardize: bool,
}

struct Loaded {
    dataset: Dataset,
    a: DMatrix<f64>,
    snp_names: Vec<String>,
    phenotype_names: Vec<String>,
    standardization: Option<Standardization>,
}

fn existing(key: &'static str, path: String) -> Result<PathBuf, Error> {
    let p = PathBuf::from(path);
    if !p.is_file() {
        return Err(invalid(key, format!("{} does not exist", p.display())));
    }
    Ok(p)
}

fn required<T>(key: &'static str, v: Option<T>) -> Result<T, Error> {
    v.ok_or_else(|| invalid(key, "is required"))
}

fn resolve_data(r: &mut Resolver, args: &DataArgs) -> Result<DataPaths, Error> {
    let y = required("y", r.get_opt("y", args.y.clone())?)?;
    let x = required("x", r.get_opt("x", args.x.clone())?)?;
    let a = r.get_opt("a", args.a.clone())?;
    let confounders = r.get_opt("confounders", args.confounders.clone())?;
    let header = r.flag("header", args.header, false)?;
    let standardize = !r.flag("no_standardize", args.no_standardize, false)?;
    Ok(DataPaths {
        y: existing("y", y)?,
        x: existing("x", x)?,
        a: a.map(|p| existing("a", p)).transpose()?,
        confounders: confounders
            .map(|p| existing("confounders", p))
            .transpose()?,
        header,
        standardize,
    })
}

fn load_data(paths: &DataPaths) -> Result<Loaded, Error> {
    let y = load_matrix(&paths.y, ExpectedShape::any(), paths.header)?;
    let x = load_matrix(&paths.x, ExpectedShape::any(), paths.header)?;
    let phenotype_names = y.names;
    // Shape checks (odd c, subject counts) before any transformation.
    let raw = Dataset::new(y.data, x.data)?;
    let (n, c) = raw.y.shape();
    let mut y = raw.y;
    if let Some(p) = &paths.confounders {
        let z = load_matrix(p, ExpectedShape::rows(n), paths.header)?;
        y = residualize(&y, &z.data)?;
    }
    let standardization = if paths.standardize {
        let (ys, t) = standardize_phenotypes(&y)?;
        y = ys;
        Some(t)
    } else {
        None
    };
    let a = match &paths.a {
        Some(p) => load_matrix(p, ExpectedShape::exact(c / 2, c / 2), paths.header)?.data,
        None => default_neighborhood(&y)?,
    };
    let dataset = Dataset::new(y, raw.x)?;
    Ok(Loaded {
        snp_names: x.names.unwrap_or_else(|| default_names("snp", dataset.d())),
        phenotype_names: phenotype_names.unwrap_or_else(|| default_names("ph", c)),
        dataset,
        a,
        standardization,
    })
}

fn output_dir(r: &mut Resolver, common: &Common) -> Result<PathBuf, Error> {
    Ok(PathBuf::from(required(
        "out",
        r.get_opt("out", common.out.clone())?,
    )?))
}

fn check_unit_interval(key: &'static str, v: f64) -> Result<(), Error> {
    if !(v > 0.0 && v < 1.0) {
        return Err(invalid(key, format!("{v} is outside (0, 1)")));
    }
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut f =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

fn write_manifest(
    dir: &Path,
    command: &str,
    r: &Resolver,
    seed: u64,
    start: Instant,
) -> Result<()> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": r.resolved(),
        "threads": rayon::current_num_threads(),
        "wall_time_seconds": start.elapsed().as_secs_f64(),
    });
    write_json(&dir.join("manifest.json"), &manifest)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn fit(args: FitArgs) -> Result<()> {
    let start = Instant::now();
    let mut r = Resolver::new(args.common.config.as_deref())?;
    let paths = resolve_data(&mut r, &args.data)?;
    let mode = required("mode", r.get_opt("mode", args.mode)?)?;
    let rho = r.get_opt("rho", args.rho)?;
    let rho_grid = r.list("rho_grid", args.rho_grid, &DEFAULT_RHO_GRID)?;
    let lambda2 = r.get("lambda2", args.lambda2, Lambda2Arg(Lambda2Choice::Moment))?;
    let alpha = r.get("alpha", args.alpha, 0.05)?;
    let c_star = r.get("c_star", args.c_star, 0.044)?;
    let iters = r.get("iters", args.iters, 10_000)?;
    let burnin = r.get("burnin", args.burnin, 5_000)?;
    let thin = r.get("thin", args.thin, 1)?;
    let level = r.get("level", args.level, 0.95)?;
    let path_grid = r.list("path_grid", args.path_grid, &[])?;
    let out = output_dir(&mut r, &args.common)?;
    let seed = r.get("seed", args.common.seed, 1)?;
    r.reject_unknown()?;

    check_unit_interval("alpha", alpha)?;
    check_unit_interval("level", level)?;
    if !(c_star > 0.0 && c_star.is_finite()) {
        return Err(Error::NonPositiveCStar(c_star).into());
    }
    if let Some(rho) = rho {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::RhoOutOfRange(rho).into());
        }
    }
    if path_grid.iter().any(|&v| !(v > 0.0)) {
        return Err(invalid("path_grid", "values must be positive").into());
    }
    let gibbs_cfg = GibbsConfig::new(iters, burnin, thin, derive_seed(seed, 2))?;
    let vb_cfg = VBConfig {
        seed: derive_seed(seed, 4),
        ..VBConfig::default()
    };

    let data = load_data(&paths)?;
    let ds = &data.dataset;
    info!("loaded n = {}, c = {}, d = {}", ds.n(), ds.c(), ds.d());
    let settings = FitSettings {
        lambda2: lambda2.0,
        ridge_seed: derive_seed(seed, 1),
        ..FitSettings::default()
    };
    let prep = prepare(ds, &settings)?;
    let hyper = prep.hyper;
    let w0 = &prep.ridge.w_ridge;
    info!("lambda2 = {}", hyper.lambda2);

    let mut details = json!({
        "mode": mode.to_string(),
        "lambda2": hyper.lambda2,
        "c_star": c_star,
        "level": level,
        "ridge_penalties": prep.ridge.ridge_penalties.as_slice(),
    });
    let (chosen_rho, sd, intervals, tail, waic_report, elbo_trace, stats);
    match mode {
        Mode::Vb => {
            chosen_rho = rho.unwrap_or(0.95);
            let spatial = spatial_for(&data.a, chosen_rho)?;
            let post = fit_vb(ds, &spatial, &hyper, w0, &vb_cfg)?;
            if !post.converged {
                warn!("VB stopped at max_iter without meeting the convergence rule");
            }
            details["converged"] = json!(post.converged);
            sd = post.posterior_sd();
            intervals = post.credible_intervals(level)?;
            tail = post.tail_probabilities(c_star)?;
            waic_report = None;
            elbo_trace = post.elbo_trace.clone();
            stats = Vec::new();
        }
        Mode::Gibbs => {
            let output = match rho {
                Some(rho) => {
                    chosen_rho = rho;
                    let spatial = spatial_for(&data.a, rho)?;
                    fit_gibbs(ds, &spatial, &hyper, w0, &vb_cfg, &gibbs_cfg)?.1
                }
                None => {
                    let mut fits =
                        rho_grid_waic(ds, &data.a, &rho_grid, &hyper, w0, &vb_cfg, &gibbs_cfg)?;
                    let best = best_by_waic(&fits);
                    details["rho_grid"] = grid_json(&fits);
                    chosen_rho = fits[best].value;
                    fits.swap_remove(best).output
                }
            };
            sd = output.posterior_sd();
            intervals = output.credible_intervals(level)?;
            tail = output.tail_probabilities(c_star)?;
            waic_report = if output.len() >= 100 {
                Some(waic(&output.loglik_draws)?)
            } else {
                warn!(
                    "only {} retained draws; WAIC needs at least 100 and is omitted",
                    output.len()
                );
                None
            };
            elbo_trace = Vec::new();
            stats = chain_stats(&output, &data.snp_names, &data.phenotype_names);
        }
    }
    details["rho"] = json!(chosen_rho);
    info!("rho = {chosen_rho}");

    let path = if path_grid.is_empty() {
        Vec::new()
    } else {
        let spatial = spatial_for(&data.a, chosen_rho)?;
        regularization_path(ds, &spatial, &path_grid, &hyper, w0, &vb_cfg, c_star, alpha)?
    };
    let selection = fdr_threshold(&tail, alpha)?;
    info!("selected {} coefficients", selection.selected.len());
    let summary = SummaryTable::build(
        &data.snp_names,
        &data.phenotype_names,
        &sd,
        &intervals,
        &tail,
        &selection,
    )?;
    let results = RunResults {
        snp_names: data.snp_names,
        phenotype_names: data.phenotype_names,
        summary,
        selection,
        standardization: data.standardization,
        waic: waic_report,
        elbo_trace,
        path,
        chain_stats: stats,
        details,
    };
    emit_results(&results, &out)
        .with_context(|| format!("writing results to {}", out.display()))?;
    write_manifest(&out, "fit", &r, seed, start)
}

fn grid_json(fits: &[GridFit]) -> Value {
    fits.iter()
        .map(|f| json!({"value": f.value, "waic": f.waic.waic}))
        .collect()
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let start = Instant::now();
    let mut r = Resolver::new(args.common.config.as_deref())?;
    let n = r.get("n", args.n, 100)?;
    let c = r.get("c", args.c, 6)?;
    let d = r.get("d", args.d, 30)?;
    let rho = r.get("rho", args.rho, 0.8)?;
    let kappa = r.get("kappa", args.kappa, 0.8)?;
    let lambda2 = r.get("lambda2", args.lambda2, 60.0)?;
    let out = output_dir(&mut r, &args.common)?;
    let seed = r.get("seed", args.common.seed, 1)?;
    r.reject_unknown()?;

    let sim = simulate_problem(n, c, d, rho, kappa, lambda2, seed)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let sigma = DMatrix::from_fn(2, 2, |i, j| sim.sigma[(i, j)]);
    for (name, m) in [
        ("y.csv", &sim.dataset.y),
        ("x.csv", &sim.dataset.x),
        ("a.csv", &sim.a),
        ("w_true.csv", &sim.w_true),
        ("sigma.csv", &sigma),
    ] {
        let path = out.join(name);
        write_matrix(&path, m, None).with_context(|| format!("writing {}", path.display()))?;
    }
    write_manifest(&out, "simulate", &r, seed, start)
}

struct StudyCommon {
    n: usize,
    c: usize,
    d: usize,
    replicates: usize,
    gibbs: GibbsConfig,
    out: PathBuf,
    seed: u64,
}

fn resolve_study(
    r: &mut Resolver,
    args: &StudyArgs,
    default_seed: u64,
) -> Result<StudyCommon, Error> {
    let defaults = GibbsConfig::default();
    let n = r.get("n", args.n, 100)?;
    let c = r.get("c", args.c, 6)?;
    let d = r.get("d", args.d, 30)?;
    let replicates = r.get("replicates", args.replicates, 50)?;
    let iters = r.get("iters", args.iters, defaults.n_iter)?;
    let burnin = r.get("burnin", args.burnin, defaults.burn_in)?;
    let out = output_dir(r, &args.common)?;
    let seed = r.get("seed", args.common.seed, default_seed)?;
    Ok(StudyCommon {
        n,
        c,
        d,
        replicates,
        gibbs: GibbsConfig::new(iters, burnin, 1, 0)?,
        out,
        seed,
    })
}

pub fn sim_study_1(args: StudyArgs) -> Result<()> {
    let start = Instant::now();
    let mut r = Resolver::new(args.common.config.as_deref())?;
    let defaults = StudyOneConfig::default();
    let s = resolve_study(&mut r, &args, defaults.seed)?;
    r.reject_unknown()?;
    let cfg = StudyOneConfig {
        n: s.n,
        c: s.c,
        d: s.d,
        replicates: s.replicates,
        gibbs: s.gibbs,
        seed: s.seed,
        ..defaults
    };
    let report = run_sim_study_1(&cfg)?;
    fs::create_dir_all(&s.out).with_context(|| format!("creating {}", s.out.display()))?;
    write_text(&s.out.join("table.csv"), &report.table())?;
    let mut value = serde_json::to_value(&report)?;
    value["mse_win_rate"] = json!(report.mse_win_rate());
    write_json(&s.out.join("report.json"), &value)?;
    print!("{}", report.table());
    write_manifest(&s.out, "sim-study-1", &r, s.seed, start)
}

pub fn sim_study_2(args: StudyTwoArgs) -> Result<()> {
    let start = Instant::now();
    let mut r = Resolver::new(args.study.common.config.as_deref())?;
    let defaults = StudyTwoConfig::default();
    let s = resolve_study(&mut r, &args.study, defaults.seed)?;
    let alpha = r.get("alpha", args.alpha, defaults.alpha)?;
    let grid = r.list("c_star_grid", args.c_star_grid, &defaults.c_star_grid)?;
    r.reject_unknown()?;
    check_unit_interval("alpha", alpha)?;
    let cfg = StudyTwoConfig {
        n: s.n,
        c: s.c,
        d: s.d,
        replicates: s.replicates,
        effect_rows: spatialgl::harness::scaled_effect_rows(s.d),
        c_star_grid: grid,
        alpha,
        gibbs: s.gibbs,
        seed: s.seed,
        ..defaults
    };
    let report = run_sim_study_2(&cfg)?;
    fs::create_dir_all(&s.out).with_context(|| format!("creating {}", s.out.display()))?;
    write_text(&s.out.join("table.csv"), &report.table())?;
    write_json(&s.out.join("report.json"), &serde_json::to_value(&report)?)?;
    print!("{}", report.table());
    write_manifest(&s.out, "sim-study-2", &r, s.seed, start)
}

fn write_grid(w: &mut impl Write, name: &str, fits: &[GridFit]) -> std::io::Result<()> {
    for f in fits {
        writeln!(
            w,
            "{name},{},{},{},{}",
            fmt_f64(f.value),
            fmt_f64(f.waic.waic),
            fmt_f64(f.waic.lppd_term),
            fmt_f64(f.waic.penalty_term)
        )?;
    }
    Ok(())
}

fn write_subject_terms(w: &mut impl Write, name: &str, fits: &[GridFit]) -> std::io::Result<()> {
    for f in fits {
        for (l, (lppd, pen)) in f.waic.per_subject.iter().enumerate() {
            writeln!(
                w,
                "{name},{},{},{},{}",
                fmt_f64(f.value),
                l + 1,
                fmt_f64(*lppd),
                fmt_f64(*pen)
            )?;
        }
    }
    Ok(())
}

pub fn tune(args: TuneArgs) -> Result<()> {
    let start = Instant::now();
    let mut r = Resolver::new(args.common.config.as_deref())?;
    let paths = resolve_data(&mut r, &args.data)?;
    let rho_grid = r.list("rho_grid", args.rho_grid, &DEFAULT_RHO_GRID)?;
    let lambda2_grid = r.list("lambda2_grid", args.lambda2_grid, &[])?;
    let per_subject = r.flag("waic", args.waic, false)?;
    let lambda2 = r.get("lambda2", args.lambda2, Lambda2Arg(Lambda2Choice::Moment))?;
    let iters = r.get("iters", args.iters, 10_000)?;
    let burnin = r.get("burnin", args.burnin, 5_000)?;
    let out = output_dir(&mut r, &args.common)?;
    let seed = r.get("seed", args.common.seed, 1)?;
    r.reject_unknown()?;
    if lambda2_grid.iter().any(|&v| !(v > 0.0)) {
        return Err(invalid("lambda2_grid", "values must be positive").into());
    }
    let gibbs_cfg = GibbsConfig::new(iters, burnin, 1, derive_seed(seed, 2))?;
    let vb_cfg = VBConfig {
        seed: derive_seed(seed, 4),
        ..VBConfig::default()
    };

    let data = load_data(&paths)?;
    let ds = &data.dataset;
    let settings = FitSettings {
        lambda2: lambda2.0,
        ridge_seed: derive_seed(seed, 1),
        ..FitSettings::default()
    };
    let prep = prepare(ds, &settings)?;
    let w0 = &prep.ridge.w_ridge;
    let rho_fits = rho_grid_waic(ds, &data.a, &rho_grid, &prep.hyper, w0, &vb_cfg, &gibbs_cfg)?;
    let best_rho = rho_fits[best_by_waic(&rho_fits)].value;
    info!("rho = {best_rho} by WAIC");
    let lambda2_fits = if lambda2_grid.is_empty() {
        Vec::new()
    } else {
        let spatial = spatial_for(&data.a, best_rho)?;
        lambda2_grid_waic(
            ds,
            &spatial,
            &lambda2_grid,
            &prep.hyper,
            w0,
            &vb_cfg,
            &gibbs_cfg,
        )?
    };

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut f = BufWriter::new(File::create(out.join("tune.csv")).context("writing tune.csv")?);
    writeln!(f, "parameter,value,waic,lppd_term,penalty_term")?;
    write_grid(&mut f, "rho", &rho_fits)?;
    write_grid(&mut f, "lambda2", &lambda2_fits)?;
    f.flush()?;
    if per_subject {
        let mut f = BufWriter::new(File::create(out.join("waic_subjects.csv"))?);
        writeln!(f, "parameter,value,subject,lppd,penalty")?;
        write_subject_terms(&mut f, "rho", &rho_fits)?;
        write_subject_terms(&mut f, "lambda2", &lambda2_fits)?;
        f.flush()?;
    }
    let best_lambda2 = if lambda2_fits.is_empty() {
        prep.hyper.lambda2
    } else {
        lambda2_fits[best_by_waic(&lambda2_fits)].value
    };
    let report = json!({
        "rho": best_rho,
        "lambda2": best_lambda2,
        "start_lambda2": prep.hyper.lambda2,
        "rho_grid": grid_json(&rho_fits),
        "lambda2_grid": grid_json(&lambda2_fits),
    });
    write_json(&out.join("report.json"), &report)?;
    println!("rho = {best_rho}, lambda2 = {best_lambda2}");
    write_manifest(&out, "tune", &r, seed, start)
}
