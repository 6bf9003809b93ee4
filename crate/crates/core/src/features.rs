//! Per-voxel feature rows: conductivity, permittivity, distance to the
//! nearest electrode, distance to CSF, distance to the electrode midline,
//! and the reference field magnitude as target.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{csf_distance, distance_to_segment, electrode_distance, Axis, ElectrodeLayout};
use crate::seed;
use crate::tissue::TissueTable;
use crate::volume::{LabelVolume, ScalarField, Tissue, MAX_LABEL};

pub const N_FEATURES: usize = 5;
pub const FEATURE_NAMES: [&str; N_FEATURES] = ["sigma", "eps", "d_e", "d_c", "d_l"];

/// Index of `d_e` in a feature vector.
pub const D_E: usize = 2;

/// One phantom under one electrode layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CaseId {
    pub phantom: usize,
    pub axis: Axis,
}

impl CaseId {
    pub fn new(phantom: usize, axis: Axis) -> Self {
        CaseId { phantom, axis }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{:03}_{}", self.phantom, self.axis)
    }
}

impl FromStr for CaseId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownCase(s.to_string());
        let rest = s.strip_prefix('p').ok_or_else(bad)?;
        let (num, axis) = rest.split_once('_').ok_or_else(bad)?;
        Ok(CaseId {
            phantom: num.parse().map_err(|_| bad())?,
            axis: axis.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRow {
    pub sigma: f64,
    pub eps: f64,
    pub d_e: f64,
    pub d_c: f64,
    pub d_l: f64,
    /// V/cm
    pub target_e: f64,
    pub voxel_index: u32,
    pub tissue: u8,
}

impl FeatureRow {
    #[inline]
    pub fn features(&self) -> [f64; N_FEATURES] {
        [self.sigma, self.eps, self.d_e, self.d_c, self.d_l]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub case: CaseId,
    pub rows: Vec<FeatureRow>,
}

impl FeatureDataset {
    pub fn features(&self) -> Vec<[f64; N_FEATURES]> {
        self.rows.iter().map(FeatureRow::features).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target_e).collect()
    }

    pub fn tissue_counts(&self) -> [usize; MAX_LABEL as usize + 1] {
        let mut counts = [0; MAX_LABEL as usize + 1];
        for r in &self.rows {
            counts[r.tissue as usize] += 1;
        }
        counts
    }
}

/// Feature maps of one case, on the volume's grid.
#[derive(Debug, Clone)]
pub struct FeatureMaps {
    pub sigma: ScalarField,
    pub eps: ScalarField,
    pub d_e: ScalarField,
    pub d_c: ScalarField,
    pub d_l: ScalarField,
}

impl FeatureMaps {
    pub fn compute(volume: &LabelVolume, table: &TissueTable, layout: &ElectrodeLayout) -> Result<Self> {
        let d_c = csf_distance(volume)?;
        Self::with_csf_distance(volume, table, layout, d_c)
    }

    /// As [`FeatureMaps::compute`] with a precomputed CSF distance map, which
    /// depends only on the volume and can be shared between layouts.
    pub fn with_csf_distance(
        volume: &LabelVolume,
        table: &TissueTable,
        layout: &ElectrodeLayout,
        d_c: ScalarField,
    ) -> Result<Self> {
        let meta = volume.meta();
        d_c.meta().ensure_same(meta)?;
        let (sigma, eps) = table.lookup_properties(volume)?;
        let d_e = electrode_distance(meta, layout)?;
        let (a, b) = layout.midline();
        let d_l = distance_to_segment(meta, a, b)?;
        Ok(FeatureMaps {
            sigma,
            eps,
            d_e,
            d_c,
            d_l,
        })
    }

    /// Feature vector of every voxel, in voxel order.
    pub fn matrix(&self) -> Vec<[f64; N_FEATURES]> {
        (0..self.sigma.values().len())
            .map(|i| {
                [
                    self.sigma.get(i),
                    self.eps.get(i),
                    self.d_e.get(i),
                    self.d_c.get(i),
                    self.d_l.get(i),
                ]
            })
            .collect()
    }
}

/// One row per voxel (air included) pairing the features with the gold |E|.
pub fn extract_features(
    case: CaseId,
    volume: &LabelVolume,
    maps: &FeatureMaps,
    gold: &ScalarField,
) -> Result<FeatureDataset> {
    let meta = volume.meta();
    gold.meta().ensure_same(meta)?;
    maps.sigma.meta().ensure_same(meta)?;
    let rows = (0..meta.len())
        .map(|i| FeatureRow {
            sigma: maps.sigma.get(i),
            eps: maps.eps.get(i),
            d_e: maps.d_e.get(i),
            d_c: maps.d_c.get(i),
            d_l: maps.d_l.get(i),
            target_e: gold.get(i),
            voxel_index: i as u32,
            tissue: volume.label(i),
        })
        .collect();
    Ok(FeatureDataset { case, rows })
}

/// Keep every tissue row and a uniform sample of the air rows, sized to the
/// rounded mean count of the non-air labels present.
pub fn subsample_air(dataset: &FeatureDataset, seed: u64) -> FeatureDataset {
    let counts = dataset.tissue_counts();
    let present: Vec<usize> = counts[1..].iter().copied().filter(|&c| c > 0).collect();
    let air: Vec<usize> = (0..dataset.rows.len())
        .filter(|&i| dataset.rows[i].tissue == Tissue::Air.code())
        .collect();
    if present.is_empty() {
        return dataset.clone();
    }
    let target = (present.iter().sum::<usize>() as f64 / present.len() as f64).round() as usize;
    if air.len() <= target {
        return dataset.clone();
    }
    let mut rng = seed::rng(seed);
    let mut keep = vec![true; dataset.rows.len()];
    for &i in &air {
        keep[i] = false;
    }
    for k in index::sample(&mut rng, air.len(), target).into_iter() {
        keep[air[k]] = true;
    }
    FeatureDataset {
        case: dataset.case,
        rows: dataset
            .rows
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(r, _)| *r)
            .collect(),
    }
}

/// Seed for air subsampling of one case.
pub fn subsample_seed(master: u64, case: CaseId) -> u64 {
    seed::derive(master, (case.phantom as u64) << 1 | (case.axis == Axis::LR) as u64)
}

#[derive(Debug, Clone)]
pub struct LoocvSplit {
    pub held_out: usize,
    /// Air-subsampled cases of every other phantom.
    pub train: Vec<FeatureDataset>,
    /// Every case of the held-out phantom, complete.
    pub test: Vec<FeatureDataset>,
}

impl LoocvSplit {
    pub fn train_case_ids(&self) -> Vec<CaseId> {
        self.train.iter().map(|d| d.case).collect()
    }

    pub fn test_case_ids(&self) -> Vec<CaseId> {
        self.test.iter().map(|d| d.case).collect()
    }
}

/// Hold out every case of phantom `held_out`.
pub fn split_loocv(cases: &[FeatureDataset], held_out: usize, seed: u64) -> Result<LoocvSplit> {
    let mut phantoms: Vec<usize> = cases.iter().map(|c| c.case.phantom).collect();
    phantoms.sort_unstable();
    phantoms.dedup();
    if !phantoms.contains(&held_out) {
        return Err(Error::UnknownCase(format!("phantom {held_out}")));
    }
    if phantoms.len() < 2 {
        return Err(Error::Invalid("leave-one-out needs at least two phantoms".into()));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in cases {
        if c.case.phantom == held_out {
            test.push(c.clone());
        } else {
            train.push(subsample_air(c, subsample_seed(seed, c.case)));
        }
    }
    Ok(LoocvSplit { held_out, train, test })
}

// ---------------------------------------------------------------------------
// columnar file

const FEAT_MAGIC: &str = "VFEAT1";

#[derive(Debug, Serialize, Deserialize)]
struct Column {
    name: String,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatHeader {
    magic: String,
    case_id: String,
    rows: usize,
    columns: Vec<Column>,
}

const REAL_COLUMNS: [&str; 6] = ["sigma", "eps", "d_e", "d_c", "d_l", "target_E"];

/// Columnar binary: a JSON header line, then each column contiguous,
/// little-endian. Real columns are `f32`, `voxel_index` is `u32`, `tissue`
/// is `u8`.
pub fn write_dataset<W: Write>(mut w: W, dataset: &FeatureDataset) -> Result<()> {
    let mut columns: Vec<Column> = REAL_COLUMNS
        .iter()
        .map(|n| Column {
            name: n.to_string(),
            dtype: "f32".into(),
        })
        .collect();
    columns.push(Column {
        name: "voxel_index".into(),
        dtype: "u32".into(),
    });
    columns.push(Column {
        name: "tissue".into(),
        dtype: "u8".into(),
    });
    let header = FeatHeader {
        magic: FEAT_MAGIC.into(),
        case_id: dataset.case.to_string(),
        rows: dataset.rows.len(),
        columns,
    };
    let io = |e| Error::io("<stream>", e);
    let mut buf = serde_json::to_vec(&header)?;
    buf.push(b'\n');
    let real = |r: &FeatureRow, k: usize| -> f64 { [r.sigma, r.eps, r.d_e, r.d_c, r.d_l, r.target_e][k] };
    for k in 0..REAL_COLUMNS.len() {
        for r in &dataset.rows {
            buf.extend_from_slice(&(real(r, k) as f32).to_le_bytes());
        }
    }
    for r in &dataset.rows {
        buf.extend_from_slice(&r.voxel_index.to_le_bytes());
    }
    buf.extend(dataset.rows.iter().map(|r| r.tissue));
    w.write_all(&buf).map_err(io)?;
    w.flush().map_err(io)
}

pub fn read_dataset<R: BufRead>(mut r: R) -> Result<FeatureDataset> {
    let io = |e| Error::io("<stream>", e);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line).map_err(io)?;
    if line.pop() != Some(b'\n') {
        return Err(Error::Header("missing feature header line".into()));
    }
    let header: FeatHeader = serde_json::from_slice(&line).map_err(|e| Error::Header(e.to_string()))?;
    if header.magic != FEAT_MAGIC {
        return Err(Error::Header(format!("bad magic {:?}", header.magic)));
    }
    let case: CaseId = header.case_id.parse()?;
    let n = header.rows;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(io)?;
    let expected = n * (REAL_COLUMNS.len() * 4 + 4 + 1);
    if payload.len() != expected {
        return Err(Error::PayloadLength {
            expected,
            found: payload.len(),
        });
    }
    let f32_at = |k: usize, i: usize| -> f64 {
        let o = (k * n + i) * 4;
        f32::from_le_bytes(payload[o..o + 4].try_into().unwrap()) as f64
    };
    let idx_base = REAL_COLUMNS.len() * n * 4;
    let tissue_base = idx_base + n * 4;
    let rows = (0..n)
        .map(|i| {
            let o = idx_base + i * 4;
            FeatureRow {
                sigma: f32_at(0, i),
                eps: f32_at(1, i),
                d_e: f32_at(2, i),
                d_c: f32_at(3, i),
                d_l: f32_at(4, i),
                target_e: f32_at(5, i),
                voxel_index: u32::from_le_bytes(payload[o..o + 4].try_into().unwrap()),
                tissue: payload[tissue_base + i],
            }
        })
        .collect();
    Ok(FeatureDataset { case, rows })
}

pub fn save_dataset(path: &Path, dataset: &FeatureDataset) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(BufWriter::new(f), dataset)
}

pub fn load_dataset(path: &Path) -> Result<FeatureDataset> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(f))
}

pub fn export_csv(path: &Path, dataset: &FeatureDataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Invalid(e.to_string()))?;
    let err = |e: csv::Error| Error::Invalid(e.to_string());
    w.write_record(["case", "voxel_index", "tissue", "sigma", "eps", "d_e", "d_c", "d_l", "target_E"])
        .map_err(err)?;
    let case = dataset.case.to_string();
    for r in &dataset.rows {
        w.write_record([
            case.clone(),
            r.voxel_index.to_string(),
            r.tissue.to_string(),
            r.sigma.to_string(),
            r.eps.to_string(),
            r.d_e.to_string(),
            r.d_c.to_string(),
            r.d_l.to_string(),
            r.target_e.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
