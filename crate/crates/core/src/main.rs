use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use fieldcast::eval::REFERENCE_IMPORTANCES;
use fieldcast::features::{FeatureMaps, FEATURE_NAMES};
use fieldcast::forest::load_forest;
use fieldcast::geometry::place_pair;
use fieldcast::linmodel::LinearModel;
use fieldcast::pipeline::{stage_eval, stage_phantoms, stage_solve, RunConfig};
use fieldcast::vvol::{load_labels, save_volume};
use fieldcast::{Axis, ElectrodeLayout, Error, GridMeta, Result, ScalarField, Unit};

/// Voxel-grid electric field estimation: phantoms, reference solves and
/// surrogate evaluation.
///
/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
#[derive(Parser)]
#[command(name = "fieldcast", version)]
struct Cli {
    /// Run configuration (JSON); flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed for phantoms, subsampling and forests.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (for `predict`: the output volume).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the phantom cohort.
    Phantom(PhantomArgs),
    /// Place AP and LR electrode pairs and compute reference fields.
    Solve(SolveArgs),
    /// Leave-one-phantom-out evaluation of forest and linear models.
    Eval(EvalArgs),
    /// Print a forest model's feature importances.
    Importance(ImportanceArgs),
    /// Apply a saved model to a label volume and electrode layout.
    Predict(PredictArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Number of phantoms.
    #[arg(long)]
    cohort_size: Option<usize>,
    /// Grid dimensions, e.g. 48,48,48.
    #[arg(long, value_parser = parse_dims)]
    dims: Option<[usize; 3]>,
    /// Isotropic voxel spacing in mm.
    #[arg(long)]
    spacing: Option<f64>,
    /// Disable per-phantom shape jitter.
    #[arg(long)]
    no_jitter: bool,
}

#[derive(Args)]
struct SolveArgs {
    /// Solve only this phantom index.
    #[arg(long)]
    phantom: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Trees per forest.
    #[arg(long)]
    trees: Option<usize>,
    /// Minimum rows per leaf.
    #[arg(long)]
    min_samples_leaf: Option<usize>,
}

#[derive(Args)]
struct ImportanceArgs {
    /// Forest model file.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    /// Forest (.vforest) or linear (JSON) model file.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Label volume (VVOL1).
    #[arg(long, value_name = "FILE")]
    volume: PathBuf,
    /// Electrode layout JSON; omit to place one with --axis.
    #[arg(long, value_name = "FILE")]
    layout: Option<PathBuf>,
    /// Placement axis when no layout is given.
    #[arg(long, default_value = "AP")]
    axis: Axis,
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| format!("bad dimension {t:?}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated dimensions".to_string())
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

enum Model {
    Forest(fieldcast::forest::ForestModel),
    Linear(LinearModel),
}

fn load_model(path: &Path) -> Result<Model> {
    let mut head = [0u8; 8];
    let n = std::fs::File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    if &head[..n] == b"VFOREST1" {
        Ok(Model::Forest(load_forest(path)?))
    } else {
        Ok(Model::Linear(LinearModel::load(path)?))
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = config(&cli)?;
    match cli.command {
        Command::Phantom(a) => {
            if let Some(n) = a.cohort_size {
                cfg.cohort_size = n;
            }
            if let Some(d) = a.dims {
                cfg.phantom.meta = GridMeta::new(d, cfg.phantom.meta.spacing)?;
            }
            if let Some(s) = a.spacing {
                cfg.phantom.meta = GridMeta::new(cfg.phantom.meta.dims, [s; 3])?;
            }
            if a.no_jitter {
                cfg.phantom.jitter = Default::default();
            }
            let paths = stage_phantoms(&cfg)?;
            println!("wrote {} phantoms to {}", paths.len(), cfg.run_dir().phantoms().display());
        }
        Command::Solve(a) => {
            for (case, log) in stage_solve(&cfg, a.phantom)? {
                println!(
                    "{case}: {} iterations, residual {:.2e}, {:.3} s",
                    log.iterations, log.final_residual, log.wall_seconds
                );
            }
        }
        Command::Eval(a) => {
            if let Some(t) = a.trees {
                cfg.forest.n_trees = t;
            }
            if let Some(m) = a.min_samples_leaf {
                cfg.forest.min_samples_leaf = m;
            }
            let out = stage_eval(&cfg)?;
            for agg in &out.report.aggregates {
                println!("{}: mean per-case MAE {:.4} V/cm over {} cases", agg.model, agg.mean, agg.n_cases);
            }
            println!("report written to {}", cfg.run_dir().eval().display());
        }
        Command::Importance(a) => {
            let m = load_forest(&a.model)?;
            let mut order: Vec<usize> = (0..FEATURE_NAMES.len()).collect();
            order.sort_by(|&i, &j| m.importances[j].total_cmp(&m.importances[i]).then(i.cmp(&j)));
            println!("{:<8} {:>10} {:>12}", "feature", "importance", "literature");
            for i in order {
                println!("{:<8} {:>10.3} {:>12.2}", FEATURE_NAMES[i], m.importances[i], REFERENCE_IMPORTANCES[i]);
            }
            println!("{:<8} {:>10.3}", "sum", m.importances.iter().sum::<f64>());
            if m.importance_uniform {
                println!("note: no tree split; importances are uniform by convention");
            }
        }
        Command::Predict(a) => {
            let out = cli
                .out
                .clone()
                .ok_or_else(|| Error::Invalid("predict needs --out for the output volume".into()))?;
            let table = cfg.table()?;
            let model = load_model(&a.model)?;
            let volume = load_labels(&a.volume)?;
            let layout = match &a.layout {
                Some(p) => {
                    let l = ElectrodeLayout::load(p)?;
                    l.validate(&volume)?;
                    l
                }
                None => place_pair(&volume, a.axis, cfg.patch_radius_mm)?,
            };
            let t = Instant::now();
            let x = FeatureMaps::compute(&volume, &table, &layout)?.matrix();
            let pred = match &model {
                Model::Forest(f) => f.predict(&x),
                Model::Linear(l) => l.predict(&x),
            };
            let secs = t.elapsed().as_secs_f64();
            save_volume(&out, &ScalarField::new(*volume.meta(), pred, Unit::VoltPerCm)?)?;
            println!("predicted {} voxels in {secs:.3} s -> {}", x.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
