//! Tissue electrical properties keyed by label code.
//!
//! The shipped defaults are typical published values near 200 kHz. They are
//! configuration: load a JSON table to override them.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelVolume, ScalarField, Tissue, Unit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueProps {
    #[serde(rename = "sigma_S_per_m")]
    pub sigma: f64,
    pub eps_rel: f64,
    pub name: String,
}

/// JSON form: `{"3": {"sigma_S_per_m": 1.79, "eps_rel": 110, "name": "csf"}, ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TissueTable {
    entries: BTreeMap<u8, TissueProps>,
}

impl TissueTable {
    pub fn new() -> Self {
        TissueTable {
            entries: BTreeMap::new(),
        }
    }

    pub fn with(mut self, tissue: Tissue, sigma: f64, eps: f64) -> Self {
        self.insert(tissue.code(), sigma, eps, tissue.name());
        self
    }

    pub fn insert(&mut self, code: u8, sigma: f64, eps: f64, name: &str) {
        self.entries.insert(
            code,
            TissueProps {
                sigma,
                eps_rel: eps,
                name: name.to_string(),
            },
        );
    }

    pub fn get(&self, code: u8) -> Option<&TissueProps> {
        self.entries.get(&code)
    }

    pub fn sigma(&self, code: u8) -> Result<f64> {
        self.get(code).map(|p| p.sigma).ok_or(Error::MissingTissue(code))
    }

    pub fn validate(&self) -> Result<()> {
        for (&code, p) in &self.entries {
            Tissue::from_code(code)?;
            let ok = p.sigma.is_finite()
                && p.sigma >= 0.0
                && p.eps_rel.is_finite()
                && p.eps_rel >= 0.0;
            if !ok {
                return Err(Error::Invalid(format!("tissue {code}: sigma/eps must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: TissueTable = serde_json::from_str(&text)?;
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Per-voxel conductivity (S/m) and relative permittivity maps.
    pub fn lookup_properties(&self, volume: &LabelVolume) -> Result<(ScalarField, ScalarField)> {
        // Resolve once per code; the volume has at most nine.
        let mut lut: [Option<(f64, f64)>; 256] = [None; 256];
        for (&code, p) in &self.entries {
            lut[code as usize] = Some((p.sigma, p.eps_rel));
        }
        let n = volume.meta().len();
        let mut sigma = Vec::with_capacity(n);
        let mut eps = Vec::with_capacity(n);
        for &l in volume.labels() {
            let (s, e) = lut[l as usize].ok_or(Error::MissingTissue(l))?;
            sigma.push(s);
            eps.push(e);
        }
        let meta = *volume.meta();
        Ok((
            ScalarField::new(meta, sigma, Unit::Dimensionless)?,
            ScalarField::new(meta, eps, Unit::Dimensionless)?,
        ))
    }
}

impl Default for TissueTable {
    fn default() -> Self {
        TissueTable::new()
            .with(Tissue::Air, 0.0, 1.0)
            .with(Tissue::Skin, 0.4, 1000.0)
            .with(Tissue::Skull, 0.008, 200.0)
            .with(Tissue::Csf, 1.79, 110.0)
            .with(Tissue::WhiteMatter, 0.12, 2000.0)
            .with(Tissue::GreyMatter, 0.25, 3000.0)
            .with(Tissue::TumorEnhancing, 0.24, 2000.0)
            .with(Tissue::TumorNecrotic, 1.0, 110.0)
            .with(Tissue::ResectionCavity, 1.79, 110.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::GridMeta;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_map_for_uniform_volume() {
        let meta = GridMeta::new([3, 3, 3], [1.0; 3]).unwrap();
        let vol = LabelVolume::filled(meta, Tissue::Csf).unwrap();
        let (sigma, _) = TissueTable::default().lookup_properties(&vol).unwrap();
        assert!(sigma.values().iter().all(|&s| s == 1.79));
    }

    #[test]
    fn missing_entry_is_an_error() {
        let meta = GridMeta::new([2, 1, 1], [1.0; 3]).unwrap();
        let vol = LabelVolume::new(meta, vec![1, 8]).unwrap();
        let table = TissueTable::new().with(Tissue::Skin, 0.4, 1000.0);
        assert!(matches!(table.lookup_properties(&vol), Err(Error::MissingTissue(8))));
    }

    #[test]
    fn mixed_volume_matches_direct_lookup() {
        let meta = GridMeta::new([4, 4, 4], [1.0; 3]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let labels: Vec<u8> = (0..64).map(|_| rng.gen_range(0..=MAX)).collect();
        const MAX: u8 = 8;
        let vol = LabelVolume::new(meta, labels.clone()).unwrap();
        let table = TissueTable::default();
        let (sigma, eps) = table.lookup_properties(&vol).unwrap();
        for (i, &l) in labels.iter().enumerate() {
            let p = table.get(l).unwrap();
            assert_eq!(sigma.get(i), p.sigma);
            assert_eq!(eps.get(i), p.eps_rel);
        }
    }

    #[test]
    fn json_round_trip() {
        let table = TissueTable::default();
        let text = serde_json::to_string(&table).unwrap();
        assert!(text.contains("\"3\":{\"sigma_S_per_m\":1.79"));
        let back: TissueTable = serde_json::from_str(&text).unwrap();
        assert_eq!(back, table);
    }
}
