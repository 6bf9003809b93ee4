//! VFOREST1 model files: a magic line, a JSON header line, then each tree
//! as a node count followed by fixed-size preorder node records, all
//! little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tree::{Hot, Stats, Tree, LEAF};
use super::{ForestModel, ForestParams};
use crate::error::{Error, Result};
use crate::features::{FEATURE_NAMES, N_FEATURES};

const MAGIC: &[u8] = b"VFOREST1\n";
const FORMAT_VERSION: u32 = 1;
const TAG_LEAF: u8 = 0;
const TAG_SPLIT: u8 = 1;
const RECORD_LEN: usize = 1 + 1 + 4 + 8 + 8;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    params: ForestParams,
    seed: u64,
    n_trees: usize,
    oob_mse: Option<f64>,
    feature_names: Vec<String>,
    importances: [f64; N_FEATURES],
    importance_uniform: bool,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptModel(msg.into())
}

pub fn write_forest<W: Write>(model: &ForestModel, mut w: W) -> Result<()> {
    let header = Header {
        version: FORMAT_VERSION,
        params: model.params,
        seed: model.seed,
        n_trees: model.trees.len(),
        oob_mse: model.oob_mse,
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        importances: model.importances,
        importance_uniform: model.importance_uniform,
    };
    let io = |e| Error::io(Path::new("<forest>"), e);
    w.write_all(MAGIC).map_err(io)?;
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    let mut buf = Vec::new();
    for t in &model.trees {
        buf.clear();
        buf.extend_from_slice(&(t.len() as u32).to_le_bytes());
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let h = t.hot[i];
            let s = t.stats[i];
            let leaf = h.left == LEAF;
            buf.push(if leaf { TAG_LEAF } else { TAG_SPLIT });
            buf.push(h.feature as u8);
            buf.extend_from_slice(&s.n_samples.to_le_bytes());
            buf.extend_from_slice(&s.impurity.to_le_bytes());
            buf.extend_from_slice(&h.value.to_le_bytes());
            if !leaf {
                stack.push(h.left as usize + 1);
                stack.push(h.left as usize);
            }
        }
        w.write_all(&buf).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_tree(bytes: &[u8]) -> Result<Tree> {
    let n = bytes.len() / RECORD_LEN;
    let mut tree = Tree {
        hot: vec![
            Hot {
                value: 0.0,
                left: LEAF,
                feature: 0
            };
            1
        ],
        stats: vec![
            Stats {
                n_samples: 0,
                impurity: 0.0
            };
            1
        ],
    };
    // slots waiting for their preorder record, next on top
    let mut pending = vec![0usize];
    for rec in bytes.chunks_exact(RECORD_LEN) {
        let slot = pending.pop().ok_or_else(|| corrupt("tree has records past its last leaf"))?;
        let feature = rec[1] as u32;
        let n_samples = u32::from_le_bytes(rec[2..6].try_into().unwrap());
        let impurity = f64::from_le_bytes(rec[6..14].try_into().unwrap());
        let value = f64::from_le_bytes(rec[14..22].try_into().unwrap());
        if !value.is_finite() || !impurity.is_finite() {
            return Err(corrupt("non-finite node value"));
        }
        tree.stats[slot] = Stats { n_samples, impurity };
        match rec[0] {
            TAG_LEAF => {
                tree.hot[slot] = Hot {
                    value,
                    left: LEAF,
                    feature,
                }
            }
            TAG_SPLIT => {
                if feature as usize >= N_FEATURES {
                    return Err(corrupt(format!("split on feature {feature}")));
                }
                let left = tree.hot.len();
                if left + 2 > n {
                    return Err(corrupt("tree children exceed node count"));
                }
                tree.hot.extend([tree.hot[0]; 2]);
                tree.stats.extend([tree.stats[0]; 2]);
                tree.hot[slot] = Hot {
                    value,
                    left: left as u32,
                    feature,
                };
                pending.push(left + 1);
                pending.push(left);
            }
            t => return Err(corrupt(format!("unknown node tag {t}"))),
        }
    }
    if !pending.is_empty() || tree.hot.len() != n {
        return Err(corrupt("tree ends before all children are defined"));
    }
    Ok(tree)
}

pub fn read_forest<R: BufRead>(mut r: R) -> Result<ForestModel> {
    let io = |e| Error::io(Path::new("<forest>"), e);
    let mut magic = [0u8; MAGIC.len()];
    r.read_exact(&mut magic).map_err(|_| corrupt("missing magic"))?;
    if magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let mut line = Vec::new();
    r.by_ref().take(1 << 16).read_until(b'\n', &mut line).map_err(io)?;
    let header: Header = serde_json::from_slice(&line).map_err(|e| corrupt(format!("header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported version {}", header.version)));
    }
    header.params.validate().map_err(|e| corrupt(e.to_string()))?;
    if header.n_trees != header.params.n_trees {
        return Err(corrupt("tree count disagrees with params"));
    }
    let mut trees = Vec::with_capacity(header.n_trees);
    let mut bytes = Vec::new();
    for _ in 0..header.n_trees {
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(|_| corrupt("truncated tree header"))?;
        let n = u32::from_le_bytes(len) as usize;
        if n == 0 {
            return Err(corrupt("empty tree"));
        }
        bytes.resize(n * RECORD_LEN, 0);
        r.read_exact(&mut bytes).map_err(|_| corrupt("truncated tree"))?;
        trees.push(read_tree(&bytes)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(io)? != 0 {
        return Err(corrupt("trailing bytes after last tree"));
    }
    Ok(ForestModel {
        trees,
        params: header.params,
        seed: header.seed,
        oob_mse: header.oob_mse,
        importances: header.importances,
        importance_uniform: header.importance_uniform,
    })
}

pub fn save_forest(model: &ForestModel, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_forest(model, BufWriter::new(f)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        e => e,
    })
}

pub fn load_forest(path: &Path) -> Result<ForestModel> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_forest(BufReader::new(f))
}
