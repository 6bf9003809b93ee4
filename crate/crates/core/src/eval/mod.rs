//! Leave-one-phantom-out evaluation of the forest and linear surrogates.

mod metrics;
mod report;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_features, split_loocv, CaseId, FeatureDataset, FeatureMaps, N_FEATURES};
use crate::forest::{fit_forest, ForestModel, ForestParams, TrainingData};
use crate::geometry::{csf_distance, ElectrodeLayout};
use crate::linmodel::{fit_linear, LinearGuards, LinearModel};
use crate::seed;
use crate::tissue::TissueTable;
use crate::volume::{LabelVolume, ScalarField, Unit};

pub use metrics::{case_metrics, error_map, CaseMetrics, NEAR_THRESHOLD_MM};
pub use report::{parse_report_csv, render_report, CsvRecord, ReportFormat};

/// Literature reference importances in feature order.
pub const REFERENCE_IMPORTANCES: [f64; N_FEATURES] = [0.05, 0.05, 0.65, 0.10, 0.15];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Forest,
    Linear,
}

impl ModelKind {
    pub const BOTH: [ModelKind; 2] = [ModelKind::Forest, ModelKind::Linear];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Forest => "forest",
            ModelKind::Linear => "linear",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forest" => Ok(ModelKind::Forest),
            "linear" => Ok(ModelKind::Linear),
            _ => Err(Error::Invalid(format!("unknown model kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case: CaseId,
    pub model: ModelKind,
    #[serde(flatten)]
    pub metrics: CaseMetrics,
    pub predict_seconds: f64,
}

/// Summary of per-case MAE over cases; `sd` is the sample SD and is absent
/// for a single case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub model: ModelKind,
    pub n_cases: usize,
    pub mean: f64,
    pub sd: Option<f64>,
    pub min: f64,
    pub max: f64,
}

impl Aggregate {
    pub fn of(model: ModelKind, maes: &[f64]) -> Option<Self> {
        if maes.is_empty() {
            return None;
        }
        let n = maes.len();
        let mean = maes.iter().sum::<f64>() / n as f64;
        let sd = (n > 1).then(|| (maes.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Some(Aggregate {
            model,
            n_cases: n,
            mean,
            sd,
            min: maes.iter().cloned().fold(f64::INFINITY, f64::min),
            max: maes.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Importances of the forest trained with `held_out` left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldImportance {
    pub held_out: usize,
    pub importances: [f64; N_FEATURES],
    pub uniform: bool,
    pub oob_mse: Option<f64>,
    pub train_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseTiming {
    pub case: CaseId,
    pub solve_seconds: Option<f64>,
    /// Feature maps for the case, from labels and layout.
    pub feature_seconds: f64,
    pub forest_predict_seconds: f64,
    pub linear_predict_seconds: f64,
    pub voxels: usize,
}

impl CaseTiming {
    pub fn surrogate_seconds(&self) -> f64 {
        self.feature_seconds + self.forest_predict_seconds
    }

    /// Oracle time over surrogate time.
    pub fn speedup(&self) -> Option<f64> {
        self.solve_seconds.map(|s| s / self.surrogate_seconds())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub forest: ForestParams,
    pub guards: LinearGuards,
    pub near_threshold_mm: f64,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            forest: ForestParams::default(),
            guards: LinearGuards::default(),
            near_threshold_mm: NEAR_THRESHOLD_MM,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub settings: EvalSettings,
    /// Which voxels metrics are computed over.
    pub mask: String,
    pub results: Vec<CaseResult>,
    pub aggregates: Vec<Aggregate>,
    pub importances: Vec<FoldImportance>,
    pub timing: Vec<CaseTiming>,
}

impl EvalReport {
    pub fn result(&self, case: CaseId, model: ModelKind) -> Option<&CaseResult> {
        self.results.iter().find(|r| r.case == case && r.model == model)
    }

    pub fn aggregate(&self, model: ModelKind) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.model == model)
    }

    pub fn cases(&self) -> Vec<CaseId> {
        let mut c: Vec<CaseId> = self.results.iter().map(|r| r.case).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Importances of the fold that held out `case`.
    pub fn importance_for(&self, case: CaseId) -> Option<&FoldImportance> {
        self.importances.iter().find(|f| f.held_out == case.phantom)
    }
}

/// One phantom under one layout with its gold field.
#[derive(Debug, Clone)]
pub struct EvalCase<'a> {
    pub id: CaseId,
    pub volume: &'a LabelVolume,
    pub layout: &'a ElectrodeLayout,
    pub gold: &'a ScalarField,
    pub solve_seconds: Option<f64>,
}

pub struct FoldModels {
    pub held_out: usize,
    pub train_cases: Vec<CaseId>,
    pub forest: ForestModel,
    pub linear: LinearModel,
}

pub struct CasePredictions {
    pub case: CaseId,
    pub forest: ScalarField,
    pub linear: ScalarField,
}

pub struct EvalOutput {
    pub report: EvalReport,
    pub folds: Vec<FoldModels>,
    pub predictions: Vec<CasePredictions>,
}

/// Seed of the forest for the fold holding out `held_out`.
pub fn fold_seed(master: u64, held_out: usize) -> u64 {
    seed::derive(seed::derive(master, 0xF0_4E57), held_out as u64)
}

/// Train on every phantom but one and evaluate both models on the held-out
/// phantom's cases, for each phantom in turn. Cases are processed in case
/// order; metrics are computed over non-air voxels.
pub fn run_loocv(cases: &[EvalCase<'_>], table: &TissueTable, settings: &EvalSettings) -> Result<EvalOutput> {
    settings.forest.validate()?;
    settings.guards.validate()?;
    let mut order: Vec<usize> = (0..cases.len()).collect();
    order.sort_by_key(|&i| cases[i].id);
    if order.windows(2).any(|w| cases[w[0]].id == cases[w[1]].id) {
        return Err(Error::Invalid("duplicate case id".into()));
    }
    let cases: Vec<&EvalCase> = order.iter().map(|&i| &cases[i]).collect();
    let mut phantoms: Vec<usize> = cases.iter().map(|c| c.id.phantom).collect();
    phantoms.dedup();
    if phantoms.len() < 2 {
        return Err(Error::Invalid("leave-one-out needs at least two phantoms".into()));
    }

    // full feature datasets, sharing one CSF distance map per phantom
    let mut datasets: Vec<FeatureDataset> = Vec::with_capacity(cases.len());
    let mut d_e_maps: Vec<ScalarField> = Vec::with_capacity(cases.len());
    let mut d_c_cache: Option<(usize, ScalarField)> = None;
    for c in &cases {
        c.layout.validate(c.volume)?;
        let d_c = match &d_c_cache {
            Some((p, f)) if *p == c.id.phantom => f.clone(),
            _ => {
                let f = csf_distance(c.volume)?;
                d_c_cache = Some((c.id.phantom, f.clone()));
                f
            }
        };
        let maps = FeatureMaps::with_csf_distance(c.volume, table, c.layout, d_c)?;
        datasets.push(extract_features(c.id, c.volume, &maps, c.gold)?);
        d_e_maps.push(maps.d_e);
    }

    let mut results = Vec::new();
    let mut importances = Vec::new();
    let mut timing = Vec::new();
    let mut folds = Vec::new();
    let mut predictions = Vec::new();
    for &held_out in &phantoms {
        let split = split_loocv(&datasets, held_out, settings.seed)?;
        let train = TrainingData::from_datasets(&split.train)?;
        let forest = fit_forest(&train, &settings.forest, fold_seed(settings.seed, held_out))?;
        let linear = fit_linear(&train, &settings.guards)?;
        importances.push(FoldImportance {
            held_out,
            importances: forest.importances,
            uniform: forest.importance_uniform,
            oob_mse: forest.oob_mse,
            train_rows: train.len(),
        });
        drop(train);

        for (k, c) in cases.iter().enumerate().filter(|(_, c)| c.id.phantom == held_out) {
            let meta = *c.volume.meta();
            // surrogate path from labels and layout alone
            let t = Instant::now();
            let maps = FeatureMaps::compute(c.volume, table, c.layout)?;
            let x = maps.matrix();
            let feature_seconds = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let pf = forest.predict(&x);
            let forest_seconds = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let pl = linear.predict(&x);
            let linear_seconds = t.elapsed().as_secs_f64();

            let mask = c.volume.non_air_mask();
            let pf = ScalarField::new(meta, pf, Unit::VoltPerCm)?;
            let pl = ScalarField::new(meta, pl, Unit::VoltPerCm)?;
            for (model, pred, secs) in [
                (ModelKind::Forest, &pf, forest_seconds),
                (ModelKind::Linear, &pl, linear_seconds),
            ] {
                results.push(CaseResult {
                    case: c.id,
                    model,
                    metrics: case_metrics(pred, c.gold, &d_e_maps[k], &mask, settings.near_threshold_mm)?,
                    predict_seconds: secs,
                });
            }
            timing.push(CaseTiming {
                case: c.id,
                solve_seconds: c.solve_seconds,
                feature_seconds,
                forest_predict_seconds: forest_seconds,
                linear_predict_seconds: linear_seconds,
                voxels: meta.len(),
            });
            predictions.push(CasePredictions {
                case: c.id,
                forest: pf,
                linear: pl,
            });
        }
        folds.push(FoldModels {
            held_out,
            train_cases: split.train_case_ids(),
            forest,
            linear,
        });
    }

    let aggregates = ModelKind::BOTH
        .iter()
        .filter_map(|&m| {
            let maes: Vec<f64> = results.iter().filter(|r| r.model == m).map(|r| r.metrics.mae).collect();
            Aggregate::of(m, &maes)
        })
        .collect();
    Ok(EvalOutput {
        report: EvalReport {
            settings: *settings,
            mask: "non-air voxels".into(),
            results,
            aggregates,
            importances,
            timing,
        },
        folds,
        predictions,
    })
}
