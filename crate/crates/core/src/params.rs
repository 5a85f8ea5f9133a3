//! Named trainable tensors, their initialization and the checkpoint format.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Architecture, EncoderCell};
use crate::datamodel::io::write_atomic;
use crate::error::{Error, Result};
use crate::tape::{Gradients, Mat, Tape, Var};

pub mod names {
    pub const SPATIAL: &str = "sge.spatial";
    pub const CONTEXT: &str = "sge.context";
    pub const RELATION: &str = "sge.relation";
    pub const ATTENTION: &str = "sge.attention";
    pub const POOL: &str = "sge.pool";
    pub const COV: &str = "cov.proj";
    pub const MASK_WEIGHT: &str = "mask.weight";
    pub const MASK_BIAS: &str = "mask.bias";
    pub const VISUAL_WEIGHT: &str = "head.visual.weight";
    pub const VISUAL_BIAS: &str = "head.visual.bias";
    pub const MESSAGE_WEIGHT: &str = "head.message.weight";
    pub const MESSAGE_BIAS: &str = "head.message.bias";

    pub fn encoder(direction: &str, part: &str) -> String {
        format!("sge.encoder.{direction}.{part}")
    }

    /// `path` is one of `o2h`, `h2h`, `h2o`, `o2o`; `part` one of `src`,
    /// `alpha`, `out`.
    pub fn passing(path: &str, part: &str) -> String {
        format!("mp.{path}.{part}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier,
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: (usize, usize),
    pub init: Init,
}

/// Message-passing paths keyed by (sender class, receiver class).
pub const PASSING_PATHS: [&str; 4] = ["o2h", "h2h", "h2o", "o2o"];

/// Every parameter reachable under the architecture's switches.
pub fn param_specs(arch: &Architecture) -> Vec<ParamSpec> {
    let m = &arch.model;
    let k = arch.num_interactions;
    let mut out = Vec::new();
    let mut add = |name: String, shape: (usize, usize), init: Init| {
        out.push(ParamSpec { name, shape, init })
    };

    if arch.switches.sge {
        let hidden = m.d_h / 2;
        let gates = match m.encoder_cell {
            EncoderCell::Gru => 3,
            EncoderCell::Rnn => 1,
        };
        let bound = 1.0 / (hidden as f64).sqrt();
        add(names::SPATIAL.into(), (m.d_s, 8), Init::Xavier);
        add(names::CONTEXT.into(), (m.d_h, m.d_s + arch.word_dim), Init::Xavier);
        for dir in ["fwd", "bwd"] {
            add(names::encoder(dir, "w_ih"), (gates * hidden, m.d_h), Init::Uniform(bound));
            add(names::encoder(dir, "w_hh"), (gates * hidden, hidden), Init::Uniform(bound));
            add(names::encoder(dir, "b_ih"), (1, gates * hidden), Init::Uniform(bound));
            add(names::encoder(dir, "b_hh"), (1, gates * hidden), Init::Uniform(bound));
        }
        add(
            names::RELATION.into(),
            (m.d_h, 2 * m.d_h + arch.word_dim),
            Init::Xavier,
        );
        add(
            names::ATTENTION.into(),
            (1, m.d_h),
            Init::Uniform((3.0 / m.d_h as f64).sqrt()),
        );
        add(names::POOL.into(), (m.d_g, m.d_h), Init::Xavier);
    }
    if arch.switches.cov {
        add(names::COV.into(), (m.d_g, m.d_f), Init::Xavier);
    }
    if arch.switches.passing_enabled() {
        for path in PASSING_PATHS {
            add(names::passing(path, "src"), (m.d_f, m.d_f), Init::Xavier);
            if arch.switches.relation_aware() {
                add(names::passing(path, "alpha"), (m.d_f, arch.word_dim), Init::Xavier);
            }
            add(names::passing(path, "out"), (m.d_f, m.d_f), Init::Xavier);
        }
    }
    let cells = 2 * m.mask_size * m.mask_size;
    add(names::MASK_WEIGHT.into(), (2 * m.d_f, cells), Init::Xavier);
    add(names::MASK_BIAS.into(), (1, 2 * m.d_f), Init::Zeros);
    add(names::VISUAL_WEIGHT.into(), (k, 2 * m.d_f), Init::Xavier);
    add(names::VISUAL_BIAS.into(), (1, k), Init::Zeros);
    add(
        names::MESSAGE_WEIGHT.into(),
        (k, m.d_g + 2 * m.d_f),
        Init::Xavier,
    );
    add(names::MESSAGE_BIAS.into(), (1, k), Init::Zeros);
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    // Shared so tapes can bind parameters without copying them.
    tensors: BTreeMap<String, Arc<Mat>>,
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore::default()
    }

    /// Deterministic initialization. Each tensor draws from its own stream
    /// keyed by `(seed, name)`, so switching modules on or off leaves the
    /// remaining tensors unchanged.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut store = ParameterStore::new();
        for spec in param_specs(arch) {
            let mut rng = name_rng(seed, &spec.name);
            let (r, c) = spec.shape;
            let m = match spec.init {
                Init::Zeros => Mat::zeros((r, c)),
                Init::Xavier => {
                    let b = (6.0 / (r + c) as f64).sqrt();
                    Mat::from_shape_simple_fn((r, c), || rng.random_range(-b..b))
                }
                Init::Uniform(b) => Mat::from_shape_simple_fn((r, c), || rng.random_range(-b..b)),
            };
            store.insert(spec.name, m);
        }
        store
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.tensors.insert(name.into(), Arc::new(value));
    }

    pub fn get(&self, name: &str) -> Result<&Mat> {
        self.tensors
            .get(name)
            .map(|m| &**m)
            .ok_or_else(|| Error::Contract(format!("parameter '{name}' not present")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Mat> {
        self.tensors
            .get_mut(name)
            .map(Arc::make_mut)
            .ok_or_else(|| Error::Contract(format!("parameter '{name}' not present")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), &**v))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|m| m.len()).sum()
    }

    /// `self -= lr · grad` for every tensor present in `grads`.
    pub fn sgd_step(&mut self, grads: &BTreeMap<String, Mat>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = self.get_mut(name)?;
            if p.dim() != g.dim() {
                return Err(Error::Contract(format!(
                    "gradient for '{name}' has shape {:?}, parameter {:?}",
                    g.dim(),
                    p.dim()
                )));
            }
            p.scaled_add(-lr, g);
        }
        Ok(())
    }

    /// Checks names and shapes against the architecture.
    pub fn check_layout(&self, arch: &Architecture) -> Result<()> {
        let specs = param_specs(arch);
        if specs.len() != self.tensors.len() {
            return Err(Error::Contract(format!(
                "parameter store holds {} tensors, architecture expects {}",
                self.tensors.len(),
                specs.len()
            )));
        }
        for s in specs {
            let m = self.get(&s.name)?;
            if m.dim() != s.shape {
                return Err(Error::Contract(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    s.name,
                    m.dim(),
                    s.shape
                )));
            }
        }
        Ok(())
    }
}

fn name_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let mut s = [0u8; 32];
    s.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(s)
}

/// Parameters bound onto a tape as differentiable leaves, on first use.
pub struct Bound<'a> {
    pub tape: Tape,
    store: &'a ParameterStore,
    vars: BTreeMap<String, Var>,
}

impl<'a> Bound<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        Bound {
            tape: Tape::new(),
            store,
            vars: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParameterStore {
        self.store
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let value = self
            .store
            .tensors
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Contract(format!("parameter '{name}' not present")))?;
        let v = self.tape.variable_shared(value);
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// Names of the parameters the computation touched.
    pub fn touched(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    /// Gradient of each touched parameter; untouched-by-loss parameters get zeros.
    pub fn param_grads(&self, grads: &mut Gradients) -> BTreeMap<String, Mat> {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = grads
                    .take(v)
                    .unwrap_or_else(|| Mat::zeros(self.tape.shape(v)));
                (name.clone(), g)
            })
            .collect()
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SG2HOIPS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: (usize, usize),
}

/// Header stored in front of the raw tensor data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub architecture: Architecture,
    pub vocabulary_fingerprint: String,
    pub manifest: Vec<ManifestEntry>,
}

/// Layout: 8-byte magic, little-endian u64 header length, JSON header, then
/// every tensor in manifest order as little-endian f64, row-major.
pub fn save_checkpoint(
    path: &Path,
    store: &ParameterStore,
    arch: &Architecture,
    vocabulary_fingerprint: &str,
) -> Result<()> {
    let header = CheckpointHeader {
        version: 1,
        architecture: arch.clone(),
        vocabulary_fingerprint: vocabulary_fingerprint.to_string(),
        manifest: store
            .iter()
            .map(|(n, m)| ManifestEntry {
                name: n.to_string(),
                shape: m.dim(),
            })
            .collect(),
    };
    let head = serde_json::to_vec(&header).map_err(|e| Error::parse(path.display().to_string(), e))?;
    let mut bytes = Vec::with_capacity(16 + head.len() + store.num_scalars() * 8);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(head.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&head);
    for (_, m) in store.iter() {
        for &x in m.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParameterStore)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::parse(origin, "not a parameter checkpoint"));
    }
    let head_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16 + head_len;
    if bytes.len() < body {
        return Err(Error::parse(origin, "truncated header"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| Error::parse(&origin, e))?;
    let mut store = ParameterStore::new();
    let mut off = body;
    for entry in &header.manifest {
        let n = entry.shape.0 * entry.shape.1;
        let end = off + 8 * n;
        if bytes.len() < end {
            return Err(Error::parse(&origin, format!("truncated tensor '{}'", entry.name)));
        }
        let data: Vec<f64> = bytes[off..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert(
            entry.name.clone(),
            Mat::from_shape_vec(entry.shape, data).expect("manifest shape matches data"),
        );
        off = end;
    }
    if off != bytes.len() {
        return Err(Error::parse(origin, "trailing bytes after last tensor"));
    }
    store.check_layout(&header.architecture)?;
    Ok((header, store))
}
