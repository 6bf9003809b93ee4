use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{ScalarField, Unit};

/// Near/far split distance in mm.
pub const NEAR_THRESHOLD_MM: f64 = 16.6;

/// Voxelwise error statistics of one prediction against its gold field.
/// Strata with no voxels are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub mae: f64,
    pub sd: f64,
    pub near_mse: Option<f64>,
    pub far_mse: Option<f64>,
    pub n_voxels: usize,
    pub n_near: usize,
    pub n_far: usize,
}

/// `|pred - gold|` on the mask, zero elsewhere.
pub fn error_map(pred: &ScalarField, gold: &ScalarField, mask: &[bool]) -> Result<ScalarField> {
    pred.meta().ensure_same(gold.meta())?;
    check_mask(mask, gold)?;
    let values = pred
        .values()
        .iter()
        .zip(gold.values())
        .zip(mask)
        .map(|((p, g), &m)| if m { (p - g).abs() } else { 0.0 })
        .collect();
    ScalarField::new(*gold.meta(), values, Unit::VoltPerCm)
}

fn check_mask(mask: &[bool], field: &ScalarField) -> Result<()> {
    if mask.len() != field.values().len() {
        return Err(Error::MetaMismatch(format!(
            "mask has {} voxels, field has {}",
            mask.len(),
            field.values().len()
        )));
    }
    Ok(())
}

/// MAE and SD of absolute errors over the mask, with squared errors split
/// into voxels nearer than `threshold_mm` to an electrode and the rest.
pub fn case_metrics(
    pred: &ScalarField,
    gold: &ScalarField,
    d_e: &ScalarField,
    mask: &[bool],
    threshold_mm: f64,
) -> Result<CaseMetrics> {
    pred.meta().ensure_same(gold.meta())?;
    d_e.meta().ensure_same(gold.meta())?;
    check_mask(mask, gold)?;
    let (mut n, mut sum) = (0usize, 0.0);
    let (mut n_near, mut se_near, mut n_far, mut se_far) = (0usize, 0.0, 0usize, 0.0);
    for i in (0..mask.len()).filter(|&i| mask[i]) {
        let e = (pred.get(i) - gold.get(i)).abs();
        n += 1;
        sum += e;
        if d_e.get(i) < threshold_mm {
            n_near += 1;
            se_near += e * e;
        } else {
            n_far += 1;
            se_far += e * e;
        }
    }
    if n == 0 {
        return Err(Error::Invalid("evaluation mask is empty".into()));
    }
    let mae = sum / n as f64;
    // second pass keeps the variance free of cancellation
    let var = (0..mask.len())
        .filter(|&i| mask[i])
        .map(|i| ((pred.get(i) - gold.get(i)).abs() - mae).powi(2))
        .sum::<f64>()
        / n as f64;
    Ok(CaseMetrics {
        mae,
        sd: var.sqrt(),
        near_mse: (n_near > 0).then(|| se_near / n_near as f64),
        far_mse: (n_far > 0).then(|| se_far / n_far as f64),
        n_voxels: n,
        n_near,
        n_far,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use crate::volume::GridMeta;
    use rand::Rng;

    fn meta() -> GridMeta {
        GridMeta::new([6, 5, 4], [1.0; 3]).unwrap()
    }

    fn field(values: Vec<f64>) -> ScalarField {
        ScalarField::new(meta(), values, Unit::VoltPerCm).unwrap()
    }

    fn random(seed: u64, lo: f64, hi: f64) -> ScalarField {
        let mut rng = seed::rng(seed);
        field((0..meta().len()).map(|_| rng.gen_range(lo..hi)).collect())
    }

    fn half_mask() -> Vec<bool> {
        (0..meta().len()).map(|i| i % 3 != 0).collect()
    }

    #[test]
    fn identical_fields_give_zero_map() {
        let g = random(1, 0.0, 2.0);
        let m = error_map(&g, &g, &half_mask()).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_offset_on_mask() {
        let g = random(2, 0.0, 2.0);
        let p = field(g.values().iter().map(|v| v + 0.5).collect());
        let mask = half_mask();
        let m = error_map(&p, &g, &mask).unwrap();
        for (v, &k) in m.values().iter().zip(&mask) {
            if k {
                assert!((v - 0.5).abs() < 1e-12);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn random_error_map_matches_recomputation() {
        let (p, g) = (random(3, 0.0, 3.0), random(4, 0.0, 3.0));
        let mask = half_mask();
        let m = error_map(&p, &g, &mask).unwrap();
        for i in 0..mask.len() {
            let want = if mask[i] { (p.values()[i] - g.values()[i]).abs() } else { 0.0 };
            assert_eq!(m.values()[i], want);
        }
    }

    #[test]
    fn constant_error_metrics() {
        let g = random(5, 0.0, 1.0);
        let p = field(g.values().iter().map(|v| v + 0.2).collect());
        let d = random(6, 0.0, 30.0);
        let m = case_metrics(&p, &g, &d, &vec![true; meta().len()], NEAR_THRESHOLD_MM).unwrap();
        assert!((m.mae - 0.2).abs() < 1e-12);
        assert!(m.sd < 1e-12);
        assert!((m.near_mse.unwrap() - 0.04).abs() < 1e-12);
        assert!((m.far_mse.unwrap() - 0.04).abs() < 1e-12);
        assert_eq!(m.n_near + m.n_far, m.n_voxels);
    }

    #[test]
    fn near_far_split() {
        let g = field(vec![0.0; meta().len()]);
        let d = random(7, 0.0, 30.0);
        let p = field(d.values().iter().map(|&x| if x < 16.6 { 1.0 } else { 0.0 }).collect());
        let m = case_metrics(&p, &g, &d, &vec![true; meta().len()], 16.6).unwrap();
        assert_eq!(m.near_mse, Some(1.0));
        assert_eq!(m.far_mse, Some(0.0));
    }

    #[test]
    fn empty_stratum_is_absent() {
        let g = random(8, 0.0, 1.0);
        let d = field(vec![50.0; meta().len()]);
        let m = case_metrics(&g, &g, &d, &half_mask(), 16.6).unwrap();
        assert_eq!(m.near_mse, None);
        assert_eq!(m.n_near, 0);
        assert!(case_metrics(&g, &g, &d, &vec![false; meta().len()], 16.6).is_err());
    }

    #[test]
    fn random_case_matches_single_pass_recount() {
        let (p, g, d) = (random(9, 0.0, 3.0), random(10, 0.0, 3.0), random(11, 0.0, 40.0));
        let mask = half_mask();
        let m = case_metrics(&p, &g, &d, &mask, 16.6).unwrap();
        // naive single-pass sums
        let (mut n, mut s, mut s2, mut nn, mut sn, mut nf, mut sf) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..mask.len() {
            if !mask[i] {
                continue;
            }
            let e = (p.values()[i] - g.values()[i]).abs();
            n += 1.0;
            s += e;
            s2 += e * e;
            if d.values()[i] < 16.6 {
                nn += 1.0;
                sn += e * e;
            } else {
                nf += 1.0;
                sf += e * e;
            }
        }
        assert!((m.mae - s / n).abs() < 1e-12);
        assert!((m.sd - (s2 / n - (s / n).powi(2)).sqrt()).abs() < 1e-9);
        assert!((m.near_mse.unwrap() - sn / nn).abs() < 1e-12);
        assert!((m.far_mse.unwrap() - sf / nf).abs() < 1e-12);
    }

    #[test]
    fn mismatched_grids_rejected() {
        let g = random(12, 0.0, 1.0);
        let other = ScalarField::zeros(GridMeta::new([2, 2, 2], [1.0; 3]).unwrap(), Unit::VoltPerCm);
        assert!(error_map(&other, &g, &half_mask()).is_err());
        assert!(error_map(&g, &g, &[true; 3]).is_err());
    }
}
