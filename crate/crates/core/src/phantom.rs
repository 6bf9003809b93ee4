//! Synthetic layered-head phantoms.
//!
//! A phantom is a stack of concentric ellipsoids centred on the grid: skin,
//! skull, CSF and grey matter shells around a white-matter core, with a
//! two-zone spherical tumor (enhancing rim, necrotic core) embedded in the
//! brain. Everything outside the outer ellipsoid is air.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::volume::{GridMeta, LabelVolume, Tissue};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Layers {
    pub skin_mm: f64,
    pub skull_mm: f64,
    pub csf_mm: f64,
    pub grey_mm: f64,
}

impl Layers {
    pub fn total(&self) -> f64 {
        self.skin_mm + self.skull_mm + self.csf_mm + self.grey_mm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TumorSpec {
    /// Offset of the tumor center from the head center (mm).
    pub center_offset_mm: [f64; 3],
    pub enhancing_radius_mm: f64,
    pub necrotic_radius_mm: f64,
}

/// Resection cavity (label 8); absent from default phantoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavitySpec {
    pub center_offset_mm: [f64; 3],
    pub radius_mm: f64,
}

/// Half-widths of the uniform perturbations applied per phantom.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Jitter {
    pub semi_axes_mm: f64,
    pub tumor_center_mm: f64,
    pub tumor_radius_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub meta: GridMeta,
    pub seed: u64,
    /// Outer head ellipsoid semi-axes along x (left-right), y
    /// (anterior-posterior) and z (inferior-superior).
    pub semi_axes_mm: [f64; 3],
    pub layers: Layers,
    pub tumor: TumorSpec,
    pub cavity: Option<CavitySpec>,
    pub jitter: Jitter,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            meta: GridMeta {
                dims: [48, 48, 48],
                spacing: [2.0, 2.0, 2.0],
            },
            seed: 0,
            semi_axes_mm: [34.0, 40.0, 34.0],
            layers: Layers {
                skin_mm: 3.0,
                skull_mm: 5.0,
                csf_mm: 3.0,
                grey_mm: 4.0,
            },
            tumor: TumorSpec {
                center_offset_mm: [5.0, 8.0, 0.0],
                enhancing_radius_mm: 7.0,
                necrotic_radius_mm: 3.5,
            },
            cavity: None,
            jitter: Jitter {
                semi_axes_mm: 3.0,
                tumor_center_mm: 3.0,
                tumor_radius_mm: 1.5,
            },
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        let bad = |msg: String| Err(Error::Invalid(msg));
        let l = &self.layers;
        if [l.skin_mm, l.skull_mm, l.csf_mm, l.grey_mm]
            .iter()
            .any(|&t| !(t.is_finite() && t > 0.0))
        {
            return bad("layer thicknesses must be positive".into());
        }
        let min_axis = self.semi_axes_mm.iter().copied().fold(f64::INFINITY, f64::min);
        if !(l.total() < min_axis) {
            return bad(format!(
                "layer thickness sum {} must be below the smallest semi-axis {}",
                l.total(),
                min_axis
            ));
        }
        let t = &self.tumor;
        if !(t.necrotic_radius_mm > 0.0 && t.necrotic_radius_mm < t.enhancing_radius_mm) {
            return bad("tumor radii must satisfy 0 < necrotic < enhancing".into());
        }
        let j = &self.jitter;
        if [j.semi_axes_mm, j.tumor_center_mm, j.tumor_radius_mm]
            .iter()
            .any(|&v| !(v.is_finite() && v >= 0.0))
        {
            return bad("jitter amplitudes must be finite and >= 0".into());
        }
        if let Some(c) = &self.cavity {
            if !(c.radius_mm > 0.0) {
                return bad("cavity radius must be positive".into());
            }
        }
        Ok(())
    }

    /// The spec with this phantom's jitter drawn from `seed` and applied; the
    /// returned spec has zero jitter.
    pub fn realize(&self) -> Self {
        let mut out = self.clone();
        out.jitter = Jitter::default();
        let j = self.jitter;
        if j == Jitter::default() {
            return out;
        }
        let mut rng = seed::rng(self.seed);
        let mut draw = |amp: f64| if amp > 0.0 { rng.gen_range(-amp..=amp) } else { 0.0 };
        for a in &mut out.semi_axes_mm {
            *a += draw(j.semi_axes_mm);
        }
        for c in &mut out.tumor.center_offset_mm {
            *c += draw(j.tumor_center_mm);
        }
        let r = self.tumor.enhancing_radius_mm + draw(j.tumor_radius_mm);
        // the necrotic core keeps its proportion of the enhancing radius
        out.tumor.necrotic_radius_mm *= r / self.tumor.enhancing_radius_mm;
        out.tumor.enhancing_radius_mm = r;
        out
    }
}

fn inside_ellipsoid(rel: [f64; 3], axes: [f64; 3]) -> bool {
    let s: f64 = (0..3).map(|i| (rel[i] / axes[i]).powi(2)).sum();
    s <= 1.0
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Shell label of a point relative to the head center, ignoring tumor and
/// cavity.
pub fn layer_label(rel: [f64; 3], semi_axes: [f64; 3], layers: &Layers) -> Tissue {
    let insets = [
        (0.0, Tissue::Skin),
        (layers.skin_mm, Tissue::Skull),
        (layers.skin_mm + layers.skull_mm, Tissue::Csf),
        (layers.skin_mm + layers.skull_mm + layers.csf_mm, Tissue::GreyMatter),
        (layers.total(), Tissue::WhiteMatter),
    ];
    let mut label = Tissue::Air;
    for (inset, tissue) in insets {
        let axes = semi_axes.map(|a| a - inset);
        if inside_ellipsoid(rel, axes) {
            label = tissue;
        } else {
            break;
        }
    }
    label
}

/// Generate one phantom. The spec's jitter is drawn from `spec.seed`.
pub fn make_phantom(spec: &PhantomSpec) -> Result<LabelVolume> {
    spec.validate()?;
    let real = spec.realize();
    real.validate()?;
    let meta = real.meta;
    let center = meta.center();
    let tumor_c: [f64; 3] = std::array::from_fn(|i| center[i] + real.tumor.center_offset_mm[i]);
    let enh2 = real.tumor.enhancing_radius_mm.powi(2);
    let nec2 = real.tumor.necrotic_radius_mm.powi(2);
    let cavity = real.cavity.map(|c| {
        (
            std::array::from_fn::<f64, 3, _>(|i| center[i] + c.center_offset_mm[i]),
            c.radius_mm.powi(2),
        )
    });

    let mut labels = Vec::with_capacity(meta.len());
    for i in 0..meta.len() {
        let p = meta.position(i);
        let rel: [f64; 3] = std::array::from_fn(|a| p[a] - center[a]);
        let base = layer_label(rel, real.semi_axes_mm, &real.layers);
        let brain = matches!(base, Tissue::GreyMatter | Tissue::WhiteMatter);
        let mut label = base;
        let d2 = dist2(p, tumor_c);
        if d2 <= enh2 {
            if !brain {
                return Err(Error::Invalid(format!(
                    "tumor reaches {} at voxel {i}; it must lie inside grey/white matter",
                    base.name()
                )));
            }
            label = if d2 <= nec2 {
                Tissue::TumorNecrotic
            } else {
                Tissue::TumorEnhancing
            };
        }
        if let Some((cc, r2)) = cavity {
            if dist2(p, cc) <= r2 {
                if !brain {
                    return Err(Error::Invalid(format!(
                        "resection cavity reaches {} at voxel {i}",
                        base.name()
                    )));
                }
                label = Tissue::ResectionCavity;
            }
        }
        labels.push(label.code());
    }
    LabelVolume::new(meta, labels)
}

/// Per-phantom specs of a cohort; seed `i` is derived from `master_seed`.
pub fn cohort_specs(n: usize, base: &PhantomSpec, master_seed: u64) -> Vec<PhantomSpec> {
    (0..n)
        .map(|i| PhantomSpec {
            seed: seed::derive(master_seed, i as u64),
            ..base.clone()
        })
        .collect()
}

pub fn make_cohort(n: usize, base: &PhantomSpec, master_seed: u64) -> Result<Vec<LabelVolume>> {
    if n == 0 {
        return Err(Error::Invalid("cohort size must be >= 1".into()));
    }
    cohort_specs(n, base, master_seed).iter().map(make_phantom).collect()
}
