use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{GridMeta, LabelVolume};

pub const DEFAULT_PATCH_RADIUS_MM: f64 = 15.0;

/// Array placement axis: anterior-posterior runs along grid y, left-right
/// along grid x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    AP,
    LR,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::AP, Axis::LR];

    pub fn grid_axis(self) -> usize {
        match self {
            Axis::LR => 0,
            Axis::AP => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::AP => "AP",
            Axis::LR => "LR",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AP" => Ok(Axis::AP),
            "LR" => Ok(Axis::LR),
            _ => Err(Error::Invalid(format!("unknown axis {s:?} (expected AP or LR)"))),
        }
    }
}

/// Two electrode patches on the head surface. `patch_a` sits at the
/// positive end of the placement axis, `patch_b` at the negative end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeLayout {
    pub axis: Axis,
    pub dims: [usize; 3],
    pub patch_radius_mm: f64,
    pub patch_a: Vec<usize>,
    pub patch_b: Vec<usize>,
    pub center_a: [f64; 3],
    pub center_b: [f64; 3],
}

fn centroid(meta: &GridMeta, voxels: &[usize]) -> [f64; 3] {
    let mut acc = [0.0; 3];
    for &i in voxels {
        let p = meta.position(i);
        for a in 0..3 {
            acc[a] += p[a];
        }
    }
    acc.map(|s| s / voxels.len() as f64)
}

impl ElectrodeLayout {
    /// Build a layout from explicit patches; centers are the patch
    /// centroids. Patch lists are sorted and deduplicated.
    pub fn from_patches(
        meta: &GridMeta,
        axis: Axis,
        mut patch_a: Vec<usize>,
        mut patch_b: Vec<usize>,
        patch_radius_mm: f64,
    ) -> Result<Self> {
        for p in [&mut patch_a, &mut patch_b] {
            p.sort_unstable();
            p.dedup();
            if p.is_empty() {
                return Err(Error::EmptyPatch);
            }
            if p.last().is_some_and(|&i| i >= meta.len()) {
                return Err(Error::Invalid("patch voxel outside the grid".into()));
            }
        }
        if patch_a.iter().any(|i| patch_b.binary_search(i).is_ok()) {
            return Err(Error::Invalid("electrode patches overlap".into()));
        }
        let center_a = centroid(meta, &patch_a);
        let center_b = centroid(meta, &patch_b);
        if center_a == center_b {
            return Err(Error::Invalid("electrode centers coincide".into()));
        }
        Ok(ElectrodeLayout {
            axis,
            dims: meta.dims,
            patch_radius_mm,
            patch_a,
            patch_b,
            center_a,
            center_b,
        })
    }

    pub fn midline(&self) -> ([f64; 3], [f64; 3]) {
        (self.center_a, self.center_b)
    }

    pub(crate) fn check_grid(&self, meta: &GridMeta) -> Result<()> {
        if self.dims != meta.dims {
            return Err(Error::MetaMismatch(format!(
                "layout built for {:?}, grid is {:?}",
                self.dims, meta.dims
            )));
        }
        Ok(())
    }

    /// Checks every invariant, including that all patch voxels are surface
    /// voxels of `volume`.
    pub fn validate(&self, volume: &LabelVolume) -> Result<()> {
        self.check_grid(volume.meta())?;
        let rebuilt = ElectrodeLayout::from_patches(
            volume.meta(),
            self.axis,
            self.patch_a.clone(),
            self.patch_b.clone(),
            self.patch_radius_mm,
        )?;
        if rebuilt.patch_a != self.patch_a || rebuilt.patch_b != self.patch_b {
            return Err(Error::Invalid("patch lists must be sorted and unique".into()));
        }
        if let Some(&bad) = self
            .patch_a
            .iter()
            .chain(&self.patch_b)
            .find(|&&i| !volume.is_surface(i))
        {
            return Err(Error::Invalid(format!("patch voxel {bad} is not on the head surface")));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Place an electrode pair on opposite sides of the head along `axis`.
///
/// A ray parallel to the axis through the head centroid finds the outermost
/// non-air voxel at each end; each patch is every surface voxel within
/// `patch_radius_mm` of its hit voxel.
pub fn place_pair(volume: &LabelVolume, axis: Axis, patch_radius_mm: f64) -> Result<ElectrodeLayout> {
    let meta = volume.meta();
    if !(patch_radius_mm >= 0.0) {
        return Err(Error::Invalid("patch radius must be >= 0".into()));
    }
    let head: Vec<usize> = (0..meta.len()).filter(|&i| !volume.is_air(i)).collect();
    if head.is_empty() {
        return Err(Error::Invalid("volume has no non-air voxels".into()));
    }
    let c = centroid(meta, &head);
    let ax = axis.grid_axis();
    let mut line = [0usize; 3];
    for a in 0..3 {
        line[a] = ((c[a] / meta.spacing[a]).round() as usize).min(meta.dims[a] - 1);
    }
    let at = |k: usize| {
        let mut p = line;
        p[ax] = k;
        meta.index(p[0], p[1], p[2])
    };
    let n = meta.dims[ax];
    let hit_a = (0..n).rev().map(at).find(|&i| !volume.is_air(i));
    let hit_b = (0..n).map(at).find(|&i| !volume.is_air(i));
    let (Some(hit_a), Some(hit_b)) = (hit_a, hit_b) else {
        return Err(Error::RayMiss(axis.as_str()));
    };

    let r2 = patch_radius_mm * patch_radius_mm;
    let gather = |hit: usize| -> Vec<usize> {
        let h = meta.position(hit);
        head.iter()
            .copied()
            .filter(|&i| {
                let p = meta.position(i);
                let d2 = (p[0] - h[0]).powi(2) + (p[1] - h[1]).powi(2) + (p[2] - h[2]).powi(2);
                d2 <= r2 && volume.is_surface(i)
            })
            .collect()
    };
    ElectrodeLayout::from_patches(meta, axis, gather(hit_a), gather(hit_b), patch_radius_mm)
}
