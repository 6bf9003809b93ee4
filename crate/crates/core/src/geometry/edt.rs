//! Exact Euclidean distance transform.
//!
//! Separable lower-envelope transform: squared distances are propagated one
//! axis at a time, each 1-D pass computing the lower envelope of the
//! parabolas `(x - x_q)^2 + f(q)` rooted at every voxel of the line. The
//! result is the exact squared distance to the nearest mask voxel center;
//! anisotropic spacing enters through the world positions `x_q = q * h`.

use crate::error::{Error, Result};
use crate::volume::{GridMeta, ScalarField, Unit};

/// 1-D squared-distance transform of `f` sampled at `q * h`.
///
/// `f` may contain `f64::INFINITY` for "no source on this line yet".
/// `v` and `z` are scratch buffers of length `n` and `n + 1`.
fn transform_line(f: &[f64], h: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        out.fill(f64::INFINITY);
        return;
    };
    let pos = |q: usize| q as f64 * h;
    let mut k = 0;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let xq = pos(q);
        let fq = f[q] + xq * xq;
        loop {
            let r = v[k];
            let xr = pos(r);
            let s = (fq - (f[r] + xr * xr)) / (2.0 * (xq - xr));
            if s <= z[k] {
                // q's parabola hides r's entirely
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let xp = pos(p);
        while z[k + 1] < xp {
            k += 1;
        }
        let d = xp - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Squared distances (mm^2) from every voxel center to the nearest `true`
/// voxel center.
pub fn squared_distance_transform(mask: &[bool], meta: &GridMeta) -> Result<Vec<f64>> {
    if mask.len() != meta.len() {
        return Err(Error::MetaMismatch(format!(
            "mask has {} voxels, grid has {}",
            mask.len(),
            meta.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }
    let mut d: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { f64::INFINITY }).collect();
    let [nx, ny, nz] = meta.dims;
    let longest = nx.max(ny).max(nz);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];

    for axis in 0..3 {
        let n = meta.dims[axis];
        let stride = match axis {
            0 => 1,
            1 => nx,
            _ => nx * ny,
        };
        // enumerate the start index of every line along `axis`
        let (outer_a, outer_b) = match axis {
            0 => (ny, nz),
            1 => (nx, nz),
            _ => (nx, ny),
        };
        for b in 0..outer_b {
            for a in 0..outer_a {
                let start = match axis {
                    0 => meta.index(0, a, b),
                    1 => meta.index(a, 0, b),
                    _ => meta.index(a, b, 0),
                };
                for (q, slot) in line[..n].iter_mut().enumerate() {
                    *slot = d[start + q * stride];
                }
                transform_line(&line[..n], meta.spacing[axis], &mut out[..n], &mut v[..n], &mut z[..n + 1]);
                for (q, &val) in out[..n].iter().enumerate() {
                    d[start + q * stride] = val;
                }
            }
        }
    }
    Ok(d)
}

/// Exact Euclidean distance (mm) to the nearest `true` voxel.
pub fn distance_transform(mask: &[bool], meta: &GridMeta) -> Result<ScalarField> {
    let d2 = squared_distance_transform(mask, meta)?;
    ScalarField::new(*meta, d2.into_iter().map(f64::sqrt).collect(), Unit::Millimetre)
}
