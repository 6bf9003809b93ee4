//! Distance maps and electrode placement.

mod edt;
mod layout;

pub use edt::{distance_transform, squared_distance_transform};
pub use layout::{place_pair, Axis, ElectrodeLayout, DEFAULT_PATCH_RADIUS_MM};

use crate::error::{Error, Result};
use crate::volume::{GridMeta, LabelVolume, ScalarField, Tissue, Unit};

/// Euclidean distance from point `p` to the closed segment `[a, b]`.
#[inline]
pub fn point_segment_distance(p: [f64; 3], a: [f64; 3], b: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ap = [p[0] - a[0], p[1] - a[1], p[2] - a[2]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
    let t = ((ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2).clamp(0.0, 1.0);
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1], ap[2] - t * ab[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Per-voxel distance (mm) to the segment between two world points.
pub fn distance_to_segment(meta: &GridMeta, p0: [f64; 3], p1: [f64; 3]) -> Result<ScalarField> {
    if p0 == p1 {
        return Err(Error::DegenerateSegment);
    }
    let values = (0..meta.len())
        .map(|i| point_segment_distance(meta.position(i), p0, p1))
        .collect();
    ScalarField::new(*meta, values, Unit::Millimetre)
}

/// Distance (mm) to the nearest electrode voxel of either patch.
pub fn electrode_distance(meta: &GridMeta, layout: &ElectrodeLayout) -> Result<ScalarField> {
    layout.check_grid(meta)?;
    let mut mask = vec![false; meta.len()];
    for &i in layout.patch_a.iter().chain(&layout.patch_b) {
        mask[i] = true;
    }
    distance_transform(&mask, meta)
}

/// Distance (mm) to the nearest CSF voxel.
pub fn csf_distance(volume: &LabelVolume) -> Result<ScalarField> {
    let mask = volume.mask_of(Tissue::Csf);
    match distance_transform(&mask, volume.meta()) {
        Err(Error::EmptyMask) => Err(Error::NoCsf),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn segment_cases() {
        let meta = GridMeta::new([4, 5, 6], [1.0; 3]).unwrap();
        let d = distance_to_segment(&meta, [0.0, 0.0, 0.0], [0.0, 0.0, 10.0]).unwrap();
        assert_eq!(d.get(meta.index(0, 0, 5)), 0.0);
        assert!((d.get(meta.index(3, 4, 5)) - 5.0).abs() < 1e-12);
        assert!(matches!(
            distance_to_segment(&meta, [1.0; 3], [1.0; 3]),
            Err(Error::DegenerateSegment)
        ));
    }

    #[test]
    fn segment_matches_sampled_oracle() {
        // Oracle: minimum over a dense parametrisation of the segment, then
        // refined by ternary search on the (convex) squared distance.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let meta = GridMeta::new([10, 10, 10], [rng.gen_range(0.5..2.0), 1.0, rng.gen_range(0.5..2.0)]).unwrap();
            let a: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-2.0..15.0));
            let b: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-2.0..15.0));
            let d = distance_to_segment(&meta, a, b).unwrap();
            for i in (0..meta.len()).step_by(7) {
                let p = meta.position(i);
                let at = |t: f64| -> f64 {
                    (0..3).map(|k| (p[k] - (a[k] + t * (b[k] - a[k]))).powi(2)).sum::<f64>()
                };
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                for _ in 0..200 {
                    let m1 = lo + (hi - lo) / 3.0;
                    let m2 = hi - (hi - lo) / 3.0;
                    if at(m1) <= at(m2) {
                        hi = m2;
                    } else {
                        lo = m1;
                    }
                }
                let oracle = at(0.5 * (lo + hi)).min(at(0.0)).min(at(1.0)).sqrt();
                assert!((d.get(i) - oracle).abs() < 1e-7, "{} vs {oracle}", d.get(i));
            }
        }
    }

    #[test]
    fn csf_distance_requires_csf() {
        let meta = GridMeta::new([3, 3, 3], [1.0; 3]).unwrap();
        let v = LabelVolume::filled(meta, Tissue::Skin).unwrap();
        assert!(matches!(csf_distance(&v), Err(Error::NoCsf)));
    }

    #[test]
    fn single_csf_voxel_is_point_distance() {
        let meta = GridMeta::new([5, 4, 3], [1.0, 2.0, 0.5]).unwrap();
        let mut labels = vec![1u8; meta.len()];
        let src = meta.index(2, 1, 1);
        labels[src] = Tissue::Csf.code();
        let v = LabelVolume::new(meta, labels).unwrap();
        let d = csf_distance(&v).unwrap();
        let s = meta.position(src);
        for i in 0..meta.len() {
            let p = meta.position(i);
            let e = ((p[0] - s[0]).powi(2) + (p[1] - s[1]).powi(2) + (p[2] - s[2]).powi(2)).sqrt();
            assert!((d.get(i) - e).abs() < 1e-12);
        }
    }
}
