//! Voxel grids: metadata, tissue label volumes and real-valued scalar fields.
//!
//! All grids use x-fastest linear indexing, `x + nx * (y + ny * z)`. World
//! coordinates of a voxel center are `index * spacing` in millimetres.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub dims: [usize; 3],
    /// Millimetres per voxel along x, y, z.
    pub spacing: [f64; 3],
}

impl GridMeta {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let meta = GridMeta { dims, spacing };
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::Invalid(format!("grid dims must be >= 1, got {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Invalid(format!(
                "grid spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// World position (mm) of a voxel center.
    #[inline]
    pub fn position(&self, index: usize) -> [f64; 3] {
        let c = self.coords(index);
        [
            c[0] as f64 * self.spacing[0],
            c[1] as f64 * self.spacing[1],
            c[2] as f64 * self.spacing[2],
        ]
    }

    /// Linear index of the 6-neighbor of `index` one step along `axis` in
    /// direction `dir` (-1 or +1), or `None` past the grid boundary.
    #[inline]
    pub fn neighbor(&self, index: usize, axis: usize, dir: i8) -> Option<usize> {
        let c = self.coords(index);
        let stride = match axis {
            0 => 1,
            1 => self.dims[0],
            _ => self.dims[0] * self.dims[1],
        };
        if dir < 0 {
            (c[axis] > 0).then(|| index - stride)
        } else {
            (c[axis] + 1 < self.dims[axis]).then(|| index + stride)
        }
    }

    /// Physical center of the grid (mm).
    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|a| (self.dims[a] - 1) as f64 * self.spacing[a] / 2.0)
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub(crate) fn ensure_same(&self, other: &GridMeta) -> Result<()> {
        if self != other {
            return Err(Error::MetaMismatch(format!(
                "{:?}/{:?} vs {:?}/{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )));
        }
        Ok(())
    }
}

/// Tissue label codes stored in a [`LabelVolume`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Tissue {
    Air = 0,
    Skin = 1,
    Skull = 2,
    Csf = 3,
    WhiteMatter = 4,
    GreyMatter = 5,
    TumorEnhancing = 6,
    TumorNecrotic = 7,
    ResectionCavity = 8,
}

impl Tissue {
    pub const ALL: [Tissue; 9] = [
        Tissue::Air,
        Tissue::Skin,
        Tissue::Skull,
        Tissue::Csf,
        Tissue::WhiteMatter,
        Tissue::GreyMatter,
        Tissue::TumorEnhancing,
        Tissue::TumorNecrotic,
        Tissue::ResectionCavity,
    ];

    pub fn from_code(code: u8) -> Result<Self> {
        Tissue::ALL
            .get(code as usize)
            .copied()
            .ok_or(Error::UnknownLabel(code))
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Tissue::Air => "air",
            Tissue::Skin => "skin",
            Tissue::Skull => "skull",
            Tissue::Csf => "csf",
            Tissue::WhiteMatter => "white_matter",
            Tissue::GreyMatter => "grey_matter",
            Tissue::TumorEnhancing => "tumor_enhancing",
            Tissue::TumorNecrotic => "tumor_necrotic",
            Tissue::ResectionCavity => "resection_cavity",
        }
    }
}

pub const MAX_LABEL: u8 = Tissue::ResectionCavity as u8;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    meta: GridMeta,
    labels: Vec<u8>,
}

impl LabelVolume {
    pub fn new(meta: GridMeta, labels: Vec<u8>) -> Result<Self> {
        meta.validate()?;
        if labels.len() != meta.len() {
            return Err(Error::PayloadLength {
                expected: meta.len(),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > MAX_LABEL) {
            return Err(Error::UnknownLabel(bad));
        }
        Ok(LabelVolume { meta, labels })
    }

    pub fn filled(meta: GridMeta, tissue: Tissue) -> Result<Self> {
        LabelVolume::new(meta, vec![tissue.code(); meta.len()])
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, index: usize) -> u8 {
        self.labels[index]
    }

    #[inline]
    pub fn is_air(&self, index: usize) -> bool {
        self.labels[index] == Tissue::Air as u8
    }

    /// Non-air voxel with at least one 6-neighbor that is air or out of bounds.
    pub fn is_surface(&self, index: usize) -> bool {
        if self.is_air(index) {
            return false;
        }
        (0..3).any(|axis| {
            [-1i8, 1].iter().any(|&dir| match self.meta.neighbor(index, axis, dir) {
                None => true,
                Some(n) => self.is_air(n),
            })
        })
    }

    pub fn mask_of(&self, tissue: Tissue) -> Vec<bool> {
        self.labels.iter().map(|&l| l == tissue.code()).collect()
    }

    pub fn non_air_mask(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l != Tissue::Air.code()).collect()
    }

    /// Voxel counts per label code `0..=MAX_LABEL`.
    pub fn label_counts(&self) -> [usize; MAX_LABEL as usize + 1] {
        let mut counts = [0; MAX_LABEL as usize + 1];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    #[serde(rename = "V")]
    Volt,
    #[serde(rename = "V/cm")]
    VoltPerCm,
    #[serde(rename = "mm")]
    Millimetre,
    #[serde(rename = "1")]
    Dimensionless,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Unit::Volt => "V",
            Unit::VoltPerCm => "V/cm",
            Unit::Millimetre => "mm",
            Unit::Dimensionless => "1",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    meta: GridMeta,
    values: Vec<f64>,
    unit: Unit,
}

impl ScalarField {
    /// Fails if any value is NaN or infinite.
    pub fn new(meta: GridMeta, values: Vec<f64>, unit: Unit) -> Result<Self> {
        meta.validate()?;
        if values.len() != meta.len() {
            return Err(Error::PayloadLength {
                expected: meta.len(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(ScalarField { meta, values, unit })
    }

    pub fn zeros(meta: GridMeta, unit: Unit) -> Self {
        ScalarField {
            meta,
            values: vec![0.0; meta.len()],
            unit,
        }
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    #[inline]
    pub fn get(&self, index: usize) -> f64 {
        self.values[index]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_meta() {
        assert!(GridMeta::new([0, 1, 1], [1.0; 3]).is_err());
        assert!(GridMeta::new([1, 1, 1], [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn label_code_out_of_range() {
        let meta = GridMeta::new([2, 1, 1], [1.0; 3]).unwrap();
        assert!(matches!(LabelVolume::new(meta, vec![0, 9]), Err(Error::UnknownLabel(9))));
    }

    #[test]
    fn scalar_field_rejects_nan() {
        let meta = GridMeta::new([2, 1, 1], [1.0; 3]).unwrap();
        assert!(ScalarField::new(meta, vec![0.0, f64::NAN], Unit::Volt).is_err());
    }

    #[test]
    fn surface_predicate() {
        let meta = GridMeta::new([3, 3, 3], [1.0; 3]).unwrap();
        let vol = LabelVolume::filled(meta, Tissue::Skin).unwrap();
        let center = meta.index(1, 1, 1);
        assert!(!vol.is_surface(center));
        assert!(vol.is_surface(meta.index(0, 1, 1)));
    }

    proptest! {
        #[test]
        fn index_bijection(nx in 1usize..20, ny in 1usize..20, nz in 1usize..20, seed in any::<u64>()) {
            let meta = GridMeta::new([nx, ny, nz], [1.0; 3]).unwrap();
            let x = (seed as usize) % nx;
            let y = (seed as usize / 7) % ny;
            let z = (seed as usize / 131) % nz;
            let i = meta.index(x, y, z);
            prop_assert!(i < meta.len());
            prop_assert_eq!(meta.coords(i), [x, y, z]);
        }
    }
}
