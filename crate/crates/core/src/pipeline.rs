//! Stage-oriented runs over a run directory:
//!
//! ```text
//! <out>/config.json
//! <out>/phantoms/phantom_000.vvol, manifest.json
//! <out>/cases/p000_AP/{phi.vvol, efield.vvol, layout.json, solve_log.json}
//! <out>/eval/{report.txt, report.csv, importances.csv, report.json, manifest.json}
//! <out>/eval/models/fold_p000.vforest, fold_p000_linear.json
//! <out>/eval/predictions/p000_AP_{forest,linear}.vvol
//! <out>/eval/errors/p000_AP_{forest,linear}.vvol
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{error_map, render_report, run_loocv, EvalCase, EvalOutput, EvalSettings, ReportFormat, NEAR_THRESHOLD_MM};
use crate::features::CaseId;
use crate::forest::{save_forest, ForestParams};
use crate::geometry::{place_pair, Axis, ElectrodeLayout, DEFAULT_PATCH_RADIUS_MM};
use crate::linmodel::LinearGuards;
use crate::oracle::{field_magnitude, solve_logged, SolveLog, SolveParams};
use crate::phantom::{cohort_specs, make_phantom, PhantomSpec};
use crate::tissue::TissueTable;
use crate::volume::{LabelVolume, ScalarField};
use crate::vvol::{load_labels, load_scalar, save_volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// `None` uses the built-in table.
    pub tissue_table: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Base spec of every phantom, including the grid.
    pub phantom: PhantomSpec,
    pub cohort_size: usize,
    pub patch_radius_mm: f64,
    pub solve: SolveParams,
    pub forest: ForestParams,
    /// `None` clamps distances at half the smallest voxel spacing.
    pub guards: Option<LinearGuards>,
    pub seed: u64,
    pub near_threshold_mm: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            tissue_table: None,
            out_dir: PathBuf::from("run"),
            phantom: PhantomSpec::default(),
            cohort_size: 8,
            patch_radius_mm: DEFAULT_PATCH_RADIUS_MM,
            solve: SolveParams::default(),
            forest: ForestParams::default(),
            guards: None,
            seed: 0,
            near_threshold_mm: NEAR_THRESHOLD_MM,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.solve.validate()?;
        self.forest.validate()?;
        if let Some(g) = &self.guards {
            g.validate()?;
        }
        if self.cohort_size == 0 {
            return Err(Error::Invalid("cohort_size must be >= 1".into()));
        }
        if !(self.patch_radius_mm >= 0.0) {
            return Err(Error::Invalid("patch_radius_mm must be >= 0".into()));
        }
        if !(self.near_threshold_mm.is_finite() && self.near_threshold_mm > 0.0) {
            return Err(Error::Invalid("near_threshold_mm must be > 0".into()));
        }
        Ok(())
    }

    pub fn table(&self) -> Result<TissueTable> {
        let t = match &self.tissue_table {
            Some(p) => TissueTable::load(p)?,
            None => TissueTable::default(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn guards(&self) -> LinearGuards {
        self.guards.unwrap_or_else(|| LinearGuards::for_grid(&self.phantom.meta))
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            forest: self.forest,
            guards: self.guards(),
            near_threshold_mm: self.near_threshold_mm,
            seed: self.seed,
        }
    }

    pub fn run_dir(&self) -> RunDir {
        RunDir(self.out_dir.clone())
    }
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn config(&self) -> PathBuf {
        self.0.join("config.json")
    }
    pub fn phantoms(&self) -> PathBuf {
        self.0.join("phantoms")
    }
    pub fn phantom(&self, p: usize) -> PathBuf {
        self.phantoms().join(format!("phantom_{p:03}.vvol"))
    }
    pub fn case(&self, c: CaseId) -> PathBuf {
        self.0.join("cases").join(c.to_string())
    }
    pub fn efield(&self, c: CaseId) -> PathBuf {
        self.case(c).join("efield.vvol")
    }
    pub fn phi(&self, c: CaseId) -> PathBuf {
        self.case(c).join("phi.vvol")
    }
    pub fn layout(&self, c: CaseId) -> PathBuf {
        self.case(c).join("layout.json")
    }
    pub fn solve_log(&self, c: CaseId) -> PathBuf {
        self.case(c).join("solve_log.json")
    }
    pub fn eval(&self) -> PathBuf {
        self.0.join("eval")
    }
    pub fn forest_model(&self, held_out: usize) -> PathBuf {
        self.eval().join("models").join(format!("fold_p{held_out:03}.vforest"))
    }
    pub fn linear_model(&self, held_out: usize) -> PathBuf {
        self.eval().join("models").join(format!("fold_p{held_out:03}_linear.json"))
    }
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn echo_config(cfg: &RunConfig) -> Result<()> {
    mkdir(&cfg.out_dir)?;
    cfg.save(&cfg.run_dir().config())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PhantomEntry {
    pub file: String,
    pub spec: PhantomSpec,
    pub label_counts: Vec<usize>,
}

/// Generate the cohort; returns the volume paths.
pub fn stage_phantoms(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    echo_config(cfg)?;
    let dir = cfg.run_dir();
    mkdir(&dir.phantoms())?;
    let mut entries = Vec::new();
    let mut paths = Vec::new();
    for (p, spec) in cohort_specs(cfg.cohort_size, &cfg.phantom, cfg.seed).iter().enumerate() {
        let vol = make_phantom(spec).map_err(Error::in_case(format!("phantom {p}")))?;
        let path = dir.phantom(p);
        save_volume(&path, &vol)?;
        entries.push(PhantomEntry {
            file: path.file_name().unwrap().to_string_lossy().into_owned(),
            spec: spec.realize(),
            label_counts: vol.label_counts().to_vec(),
        });
        paths.push(path);
    }
    write_json(
        &dir.phantoms().join("manifest.json"),
        &serde_json::json!({ "config": cfg, "phantoms": entries }),
    )?;
    Ok(paths)
}

/// Place both layouts on one phantom and solve each.
pub fn solve_phantom(
    cfg: &RunConfig,
    table: &TissueTable,
    phantom: usize,
    volume: &LabelVolume,
) -> Result<Vec<(CaseId, ElectrodeLayout, ScalarField, SolveLog)>> {
    let dir = cfg.run_dir();
    let mut out = Vec::new();
    for axis in Axis::BOTH {
        let case = CaseId::new(phantom, axis);
        let run = || -> Result<_> {
            let layout = place_pair(volume, axis, cfg.patch_radius_mm)?;
            let (sol, log) = solve_logged(volume, table, &layout, &cfg.solve)?;
            let e = field_magnitude(&sol, volume.meta())?;
            mkdir(&dir.case(case))?;
            save_volume(&dir.phi(case), &sol.phi)?;
            save_volume(&dir.efield(case), &e)?;
            layout.save(&dir.layout(case))?;
            write_json(&dir.solve_log(case), &log)?;
            Ok((case, layout, e, log))
        };
        out.push(run().map_err(Error::in_case(case))?);
    }
    Ok(out)
}

/// Solve every phantom, or only `only`. Phantom files must exist.
pub fn stage_solve(cfg: &RunConfig, only: Option<usize>) -> Result<Vec<(CaseId, SolveLog)>> {
    cfg.validate()?;
    let table = cfg.table()?;
    let dir = cfg.run_dir();
    let phantoms: Vec<usize> = match only {
        Some(p) if p >= cfg.cohort_size => {
            return Err(Error::UnknownCase(format!("phantom {p} (cohort size {})", cfg.cohort_size)))
        }
        Some(p) => vec![p],
        None => (0..cfg.cohort_size).collect(),
    };
    let missing: Vec<String> = phantoms
        .iter()
        .map(|&p| dir.phantom(p))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing));
    }
    echo_config(cfg)?;
    let mut logs = Vec::new();
    for p in phantoms {
        let vol = load_labels(&dir.phantom(p))?;
        for (case, _, _, log) in solve_phantom(cfg, &table, p, &vol)? {
            logs.push((case, log));
        }
    }
    Ok(logs)
}

fn all_cases(cfg: &RunConfig) -> Vec<CaseId> {
    (0..cfg.cohort_size)
        .flat_map(|p| Axis::BOTH.map(|a| CaseId::new(p, a)))
        .collect()
}

/// Every file the eval stage reads that does not exist.
pub fn missing_eval_inputs(cfg: &RunConfig) -> Vec<PathBuf> {
    let dir = cfg.run_dir();
    let mut need: Vec<PathBuf> = (0..cfg.cohort_size).map(|p| dir.phantom(p)).collect();
    for c in all_cases(cfg) {
        need.extend([dir.efield(c), dir.layout(c), dir.solve_log(c)]);
    }
    need.retain(|p| !p.is_file());
    need
}

/// Run leave-one-out on the solved cohort and write every eval artifact.
pub fn stage_eval(cfg: &RunConfig) -> Result<EvalOutput> {
    cfg.validate()?;
    let missing = missing_eval_inputs(cfg);
    if !missing.is_empty() {
        return Err(Error::MissingInputs(missing.iter().map(|p| p.display().to_string()).collect()));
    }
    let table = cfg.table()?;
    let dir = cfg.run_dir();
    let volumes: Vec<LabelVolume> = (0..cfg.cohort_size)
        .map(|p| load_labels(&dir.phantom(p)))
        .collect::<Result<_>>()?;
    let cases = all_cases(cfg);
    let mut layouts = Vec::new();
    let mut golds = Vec::new();
    let mut solve_seconds = Vec::new();
    for &c in &cases {
        layouts.push(ElectrodeLayout::load(&dir.layout(c))?);
        golds.push(load_scalar(&dir.efield(c))?);
        solve_seconds.push(read_json::<SolveLog>(&dir.solve_log(c))?.wall_seconds);
    }
    let inputs: Vec<EvalCase> = cases
        .iter()
        .enumerate()
        .map(|(k, &c)| EvalCase {
            id: c,
            volume: &volumes[c.phantom],
            layout: &layouts[k],
            gold: &golds[k],
            solve_seconds: Some(solve_seconds[k]),
        })
        .collect();
    let out = run_loocv(&inputs, &table, &cfg.eval_settings())?;
    write_eval(cfg, &out, &volumes, &cases, &golds)?;
    Ok(out)
}

fn write_eval(
    cfg: &RunConfig,
    out: &EvalOutput,
    volumes: &[LabelVolume],
    cases: &[CaseId],
    golds: &[ScalarField],
) -> Result<()> {
    echo_config(cfg)?;
    let dir = cfg.run_dir();
    let eval = dir.eval();
    for sub in ["models", "predictions", "errors"] {
        mkdir(&eval.join(sub))?;
    }
    let report = &out.report;
    write_text(&eval.join("report.txt"), &render_report(report, ReportFormat::Text))?;
    write_text(&eval.join("report.csv"), &render_report(report, ReportFormat::Csv))?;
    write_text(&eval.join("importances.csv"), &render_report(report, ReportFormat::ImportanceCsv))?;
    write_json(&eval.join("report.json"), report)?;

    let mut folds = Vec::new();
    for f in &out.folds {
        save_forest(&f.forest, &dir.forest_model(f.held_out))?;
        f.linear.save(&dir.linear_model(f.held_out))?;
        folds.push(serde_json::json!({
            "held_out": f.held_out,
            "train_cases": f.train_cases.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            "forest": format!("models/fold_p{:03}.vforest", f.held_out),
            "linear": format!("models/fold_p{:03}_linear.json", f.held_out),
        }));
    }
    for p in &out.predictions {
        let k = cases.iter().position(|&c| c == p.case).expect("prediction for a known case");
        let mask = volumes[p.case.phantom].non_air_mask();
        for (name, pred) in [("forest", &p.forest), ("linear", &p.linear)] {
            let stem = format!("{}_{name}.vvol", p.case);
            save_volume(&eval.join("predictions").join(&stem), pred)?;
            save_volume(&eval.join("errors").join(&stem), &error_map(pred, &golds[k], &mask)?)?;
        }
    }
    write_json(
        &eval.join("manifest.json"),
        &serde_json::json!({
            "config": cfg,
            "mask": report.mask,
            "cases": cases.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
            "folds": folds,
            "files": ["report.txt", "report.csv", "importances.csv", "report.json"],
        }),
    )
}
