//! Multilinear baseline: least squares on reciprocal and linear transforms
//! of the five features.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::N_FEATURES;
use crate::forest::TrainingData;
use crate::volume::GridMeta;

pub const N_BASIS: usize = 7;
pub const BASIS_NAMES: [&str; N_BASIS] = ["1", "1/sigma", "1/eps", "1/d_e", "1/d_e^2", "d_c", "d_l"];

/// Below this pivot a scaled column counts as linearly dependent.
const RANK_TOL: f64 = 1e-10;

const REFINE_STEPS: usize = 2;

/// Apply the Householder reflector `I - 2 v v^T / vtv` to `target`.
fn reflect(v: &[f64], vtv: f64, target: &mut [f64]) {
    let dot: f64 = v.iter().zip(target.iter()).map(|(a, b)| a * b).sum();
    let f = 2.0 * dot / vtv;
    target.iter_mut().zip(v).for_each(|(t, v)| *t -= f * v);
}

/// Floors that keep the reciprocal terms finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearGuards {
    pub clamp_mm: f64,
    pub sigma_floor: f64,
    pub eps_floor: f64,
}

impl Default for LinearGuards {
    fn default() -> Self {
        LinearGuards {
            clamp_mm: 1.0,
            sigma_floor: 1e-9,
            eps_floor: 1.0,
        }
    }
}

impl LinearGuards {
    /// Default guards with the distance clamp at half the smallest spacing.
    pub fn for_grid(meta: &GridMeta) -> Self {
        LinearGuards {
            clamp_mm: 0.5 * meta.min_spacing(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clamp_mm > 0.0 && self.sigma_floor > 0.0 && self.eps_floor > 0.0)
            || ![self.clamp_mm, self.sigma_floor, self.eps_floor].iter().all(|v| v.is_finite())
        {
            return Err(Error::Invalid("linear guards must be finite and > 0".into()));
        }
        Ok(())
    }
}

#[inline]
pub fn lin_basis(x: &[f64; N_FEATURES], g: &LinearGuards) -> [f64; N_BASIS] {
    let [sigma, eps, d_e, d_c, d_l] = *x;
    let d = d_e.max(g.clamp_mm);
    [
        1.0,
        1.0 / sigma.max(g.sigma_floor),
        1.0 / eps.max(g.eps_floor),
        1.0 / d,
        1.0 / (d * d),
        d_c,
        d_l,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: [f64; N_BASIS],
    pub guards: LinearGuards,
}

impl LinearModel {
    /// Prediction before the nonnegativity clamp.
    #[inline]
    pub fn predict_raw(&self, x: &[f64; N_FEATURES]) -> f64 {
        lin_basis(x, &self.guards)
            .iter()
            .zip(&self.coefficients)
            .map(|(b, a)| a * b)
            .sum()
    }

    #[inline]
    pub fn predict_one(&self, x: &[f64; N_FEATURES]) -> f64 {
        self.predict_raw(x).max(0.0)
    }

    pub fn predict(&self, rows: &[[f64; N_FEATURES]]) -> Vec<f64> {
        rows.iter().map(|x| self.predict_one(x)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: LinearModel = serde_json::from_str(&text).map_err(|e| Error::CorruptModel(e.to_string()))?;
        if !m.coefficients.iter().all(|c| c.is_finite()) {
            return Err(Error::CorruptModel("non-finite coefficient".into()));
        }
        m.guards.validate().map_err(|e| Error::CorruptModel(e.to_string()))?;
        Ok(m)
    }
}

pub fn predict_linear(model: &LinearModel, rows: &[[f64; N_FEATURES]]) -> Vec<f64> {
    model.predict(rows)
}

/// Ordinary least squares by Householder QR on unit-norm columns.
pub fn fit_linear(data: &TrainingData, guards: &LinearGuards) -> Result<LinearModel> {
    guards.validate()?;
    let n = data.len();
    if n < N_BASIS {
        return Err(Error::Invalid(format!("linear fit needs at least {N_BASIS} rows, got {n}")));
    }
    // column-major design matrix
    let mut a = vec![0.0; n * N_BASIS];
    for (i, x) in data.x.iter().enumerate() {
        for (j, b) in lin_basis(x, guards).into_iter().enumerate() {
            a[j * n + i] = b;
        }
    }
    let mut scale = [0.0; N_BASIS];
    for j in 0..N_BASIS {
        let col = &mut a[j * n..(j + 1) * n];
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        scale[j] = norm;
        if norm > 0.0 {
            col.iter_mut().for_each(|v| *v /= norm);
        }
    }
    let mut diag = [0.0; N_BASIS];
    let mut vtv = [0.0; N_BASIS];
    let mut dependent = Vec::new();
    for k in 0..N_BASIS {
        let (_, rest) = a.split_at_mut(k * n);
        let (col, later) = rest.split_at_mut(n);
        let x = &mut col[k..];
        let alpha = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if alpha < RANK_TOL || scale[k] == 0.0 {
            dependent.push(BASIS_NAMES[k]);
            continue;
        }
        // v = x + sign(x0) alpha e1, stored in place of x
        let r_kk = if x[0] >= 0.0 { -alpha } else { alpha };
        x[0] -= r_kk;
        vtv[k] = x.iter().map(|v| v * v).sum::<f64>();
        diag[k] = r_kk;
        for j in 0..N_BASIS - k - 1 {
            reflect(&col[k..], vtv[k], &mut later[j * n + k..(j + 1) * n]);
        }
    }
    if !dependent.is_empty() {
        return Err(Error::RankDeficient { columns: dependent });
    }

    // minimise |y - A z| in scaled coordinates from the stored factors
    let solve = |mut rhs: Vec<f64>| -> [f64; N_BASIS] {
        for k in 0..N_BASIS {
            reflect(&a[k * n + k..(k + 1) * n], vtv[k], &mut rhs[k..]);
        }
        let mut z = [0.0; N_BASIS];
        for k in (0..N_BASIS).rev() {
            let mut s = rhs[k];
            for j in k + 1..N_BASIS {
                s -= a[j * n + k] * z[j];
            }
            z[k] = s / diag[k];
        }
        z
    };
    let mut z = solve(data.y.clone());
    // refinement against the residual recovers digits lost to rows with
    // very large targets
    for _ in 0..REFINE_STEPS {
        let c: [f64; N_BASIS] = std::array::from_fn(|j| z[j] / scale[j]);
        let r = data
            .x
            .iter()
            .zip(&data.y)
            .map(|(x, y)| y - lin_basis(x, guards).iter().zip(&c).map(|(b, c)| b * c).sum::<f64>())
            .collect();
        let dz = solve(r);
        z.iter_mut().zip(dz).for_each(|(z, d)| *z += d);
    }
    let coefficients: [f64; N_BASIS] = std::array::from_fn(|j| z[j] / scale[j]);
    if !coefficients.iter().all(|c| c.is_finite()) {
        return Err(Error::RankDeficient {
            columns: BASIS_NAMES.to_vec(),
        });
    }
    Ok(LinearModel {
        coefficients,
        guards: *guards,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn spread(n: usize, seed: u64) -> Vec<[f64; N_FEATURES]> {
        let mut rng = seed::rng(seed);
        (0..n)
            .map(|_| {
                [
                    rng.gen_range(0.05..2.0),
                    rng.gen_range(1.0..50.0),
                    rng.gen_range(1.0..30.0),
                    rng.gen_range(0.0..20.0),
                    rng.gen_range(0.0..40.0),
                ]
            })
            .collect()
    }

    fn rss(m: &LinearModel, d: &TrainingData) -> f64 {
        d.x.iter().zip(&d.y).map(|(x, y)| (m.predict_raw(x) - y).powi(2)).sum()
    }

    const PLANTED: [f64; N_BASIS] = [0.3, 0.8, -2.0, 1.5, 4.0, -0.02, 0.01];

    #[test]
    fn basis_examples() {
        let g = LinearGuards {
            clamp_mm: 0.5,
            ..Default::default()
        };
        assert_eq!(lin_basis(&[0.5, 2.0, 2.0, 3.0, 4.0], &g), [1.0, 2.0, 0.5, 0.5, 0.25, 3.0, 4.0]);
        let b = lin_basis(&[0.5, 2.0, 0.0, 3.0, 4.0], &g);
        assert_eq!((b[3], b[4]), (2.0, 4.0));
        let air = lin_basis(&[0.0, 1.0, 5.0, 1.0, 1.0], &LinearGuards::default());
        assert!((air[1] - 1e9).abs() < 1e-6);
        assert!(air.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn recovers_planted_coefficients_with_air_rows() {
        let mut x = spread(600, 2);
        // air: sigma floored, so the 1/sigma term dominates the target
        for r in x.iter_mut().step_by(3) {
            r[0] = 0.0;
            r[1] = 1.0;
        }
        let g = LinearGuards::default();
        let y = x.iter().map(|r| lin_basis(r, &g).iter().zip(&PLANTED).map(|(b, a)| a * b).sum()).collect();
        let d = TrainingData::new(x, y).unwrap();
        let m = fit_linear(&d, &g).unwrap();
        for (got, want) in m.coefficients.iter().zip(&PLANTED) {
            assert!((got - want).abs() <= 1e-6 * want.abs(), "{got} vs {want}");
        }
    }

    #[test]
    fn clamp_is_continuous() {
        let g = LinearGuards::default();
        let m = LinearModel {
            coefficients: PLANTED,
            guards: g,
        };
        let at = |d: f64| m.predict_raw(&[0.3, 5.0, d, 1.0, 1.0]);
        assert!((at(g.clamp_mm - 1e-12) - at(g.clamp_mm + 1e-12)).abs() < 1e-9);
    }

    #[test]
    fn recovers_planted_coefficients() {
        let x = spread(400, 1);
        let g = LinearGuards::default();
        let y = x.iter().map(|r| lin_basis(r, &g).iter().zip(&PLANTED).map(|(b, a)| a * b).sum()).collect();
        let d = TrainingData::new(x, y).unwrap();
        let m = fit_linear(&d, &g).unwrap();
        for (got, want) in m.coefficients.iter().zip(&PLANTED) {
            assert!((got - want).abs() <= 1e-6 * want.abs(), "{got} vs {want}");
        }
        for (x, y) in d.x.iter().zip(&d.y) {
            assert!((m.predict_raw(x) - y).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_target() {
        let x = spread(200, 2);
        let d = TrainingData::new(x, vec![1.7; 200]).unwrap();
        let m = fit_linear(&d, &LinearGuards::default()).unwrap();
        assert!((m.coefficients[0] - 1.7).abs() < 1e-9);
        assert!(m.coefficients[1..].iter().all(|c| c.abs() < 1e-9), "{:?}", m.coefficients);
    }

    #[test]
    fn rank_deficiency_names_columns() {
        // d_c duplicated as a constant column alongside the intercept
        let x: Vec<_> = spread(50, 3).into_iter().map(|mut r| {
            r[3] = 2.0;
            r
        }).collect();
        let d = TrainingData::new(x, vec![0.0; 50]).unwrap();
        match fit_linear(&d, &LinearGuards::default()) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec!["d_c"]),
            other => panic!("{other:?}"),
        }
        let few = TrainingData::new(spread(6, 4), vec![0.0; 6]).unwrap();
        assert!(fit_linear(&few, &LinearGuards::default()).is_err());
    }

    #[test]
    fn zero_model_predicts_zero_and_clamps() {
        let z = LinearModel {
            coefficients: [0.0; N_BASIS],
            guards: LinearGuards::default(),
        };
        assert!(z.predict(&spread(10, 5)).iter().all(|&v| v == 0.0));
        let neg = LinearModel {
            coefficients: [-1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            guards: LinearGuards::default(),
        };
        assert_eq!(neg.predict_one(&[1.0; N_FEATURES]), 0.0);
        assert_eq!(neg.predict_raw(&[1.0; N_FEATURES]), -1.0);
    }

    // Nesterov-accelerated gradient descent on standardised columns; shares
    // nothing with the QR path except the basis.
    fn gradient_descent_rss(d: &TrainingData, g: &LinearGuards) -> f64 {
        let rows: Vec<[f64; N_BASIS]> = d.x.iter().map(|x| lin_basis(x, g)).collect();
        let n = rows.len() as f64;
        let mut mu = [0.0; N_BASIS];
        let mut sd = [1.0; N_BASIS];
        for j in 1..N_BASIS {
            mu[j] = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            sd[j] = (rows.iter().map(|r| (r[j] - mu[j]).powi(2)).sum::<f64>() / n).sqrt();
        }
        let z: Vec<[f64; N_BASIS]> = rows
            .iter()
            .map(|r| std::array::from_fn(|j| if j == 0 { 1.0 } else { (r[j] - mu[j]) / sd[j] }))
            .collect();
        let step = 1.0 / N_BASIS as f64; // trace bound on the Hessian of the mean loss
        let (mut w, mut prev) = ([0.0; N_BASIS], [0.0; N_BASIS]);
        for it in 0..200_000 {
            let m = it as f64 / (it as f64 + 3.0);
            let look: [f64; N_BASIS] = std::array::from_fn(|j| w[j] + m * (w[j] - prev[j]));
            let mut grad = [0.0; N_BASIS];
            for (r, y) in z.iter().zip(&d.y) {
                let e = r.iter().zip(&look).map(|(a, b)| a * b).sum::<f64>() - y;
                for j in 0..N_BASIS {
                    grad[j] += e * r[j] / n;
                }
            }
            prev = w;
            w = std::array::from_fn(|j| look[j] - step * grad[j]);
        }
        z.iter()
            .zip(&d.y)
            .map(|(r, y)| (r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() - y).powi(2))
            .sum()
    }

    #[test]
    fn matches_gradient_descent_oracle() {
        let x = spread(500, 6);
        let mut rng = seed::rng(7);
        let y: Vec<f64> = x.iter().map(|r| r[2].recip() * 3.0 + r[4] * 0.05 + rng.gen_range(-0.5..0.5)).collect();
        let d = TrainingData::new(x, y).unwrap();
        let g = LinearGuards::default();
        let m = fit_linear(&d, &g).unwrap();
        let qr = rss(&m, &d);
        let gd = gradient_descent_rss(&d, &g);
        assert!(((qr - gd) / gd).abs() < 1e-4, "qr {qr} gd {gd}");
        assert!(qr <= gd * (1.0 + 1e-12));
    }

    #[test]
    fn json_round_trip() {
        let m = LinearModel {
            coefficients: PLANTED,
            guards: LinearGuards::for_grid(&GridMeta::new([4, 4, 4], [2.0, 1.5, 2.0]).unwrap()),
        };
        assert_eq!(m.guards.clamp_mm, 0.75);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lin.json");
        m.save(&p).unwrap();
        assert_eq!(LinearModel::load(&p).unwrap(), m);
        std::fs::write(&p, "{\"coefficients\": [1]}").unwrap();
        assert!(matches!(LinearModel::load(&p), Err(Error::CorruptModel(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn perturbing_a_coefficient_never_helps(seed in any::<u64>()) {
            let x = spread(120, seed);
            let mut rng = seed::rng(seed ^ 3);
            let y: Vec<f64> = x.iter().map(|r| r[0].recip() + rng.gen_range(0.0..1.0)).collect();
            let d = TrainingData::new(x, y).unwrap();
            let m = fit_linear(&d, &LinearGuards::default()).unwrap();
            let base = rss(&m, &d);
            for j in 0..N_BASIS {
                for delta in [-1e-3, 1e-3] {
                    let mut p = m.clone();
                    p.coefficients[j] += delta;
                    prop_assert!(rss(&p, &d) >= base * (1.0 - 1e-12));
                }
            }
        }

        #[test]
        fn prediction_is_affine_in_coefficients(seed in any::<u64>()) {
            let x = spread(20, seed);
            let mut rng = seed::rng(seed);
            let a: [f64; N_BASIS] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let b: [f64; N_BASIS] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let g = LinearGuards::default();
            let ma = LinearModel { coefficients: a, guards: g };
            let mb = LinearModel { coefficients: b, guards: g };
            let ms = LinearModel { coefficients: std::array::from_fn(|j| a[j] + b[j]), guards: g };
            for r in &x {
                let lhs = ms.predict_raw(r);
                let rhs = ma.predict_raw(r) + mb.predict_raw(r);
                prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
            }
        }
    }
}
