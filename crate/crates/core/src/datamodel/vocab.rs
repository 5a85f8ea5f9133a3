use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::io::{read_json, write_json_atomic};
use crate::error::{Error, Result};

pub const WORD_DIM: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularyFile {
    objects: Vec<String>,
    predicates: Vec<String>,
    interactions: Vec<String>,
    person_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embeddings_path: Option<String>,
}

/// Object, predicate and interaction names plus their word vectors.
///
/// Vectors are resolved once at construction: a word present in the
/// embedding table is used verbatim, anything else gets a unit-norm vector
/// derived from a hash of the word.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    pub objects: Vec<String>,
    pub predicates: Vec<String>,
    pub interactions: Vec<String>,
    pub person_index: usize,
    pub embeddings_path: Option<String>,
    pub word_dim: usize,
    object_vectors: Vec<Vec<f64>>,
    predicate_vectors: Vec<Vec<f64>>,
}

impl Vocabulary {
    pub fn new(
        objects: Vec<String>,
        predicates: Vec<String>,
        interactions: Vec<String>,
        person_index: usize,
        table: Option<&HashMap<String, Vec<f64>>>,
        word_dim: usize,
    ) -> Result<Self> {
        if person_index >= objects.len() {
            return Err(Error::Validation(format!(
                "person index {person_index} outside object vocabulary of {}",
                objects.len()
            )));
        }
        if let Some(t) = table {
            if let Some((w, v)) = t.iter().find(|(_, v)| v.len() != word_dim) {
                return Err(Error::Validation(format!(
                    "embedding for '{w}' has dimension {}, expected {word_dim}",
                    v.len()
                )));
            }
        }
        let resolve = |names: &[String]| -> Vec<Vec<f64>> {
            names
                .iter()
                .map(|w| match table.and_then(|t| t.get(w)) {
                    Some(v) => v.clone(),
                    None => fallback_vector(w, word_dim),
                })
                .collect()
        };
        Ok(Vocabulary {
            object_vectors: resolve(&objects),
            predicate_vectors: resolve(&predicates),
            objects,
            predicates,
            interactions,
            person_index,
            embeddings_path: None,
            word_dim,
        })
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn num_predicates(&self) -> usize {
        self.predicates.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.interactions.len()
    }

    pub fn predicate_vector(&self, predicate_id: usize) -> Result<&[f64]> {
        self.predicate_vectors
            .get(predicate_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Index(format!("unknown predicate id {predicate_id}")))
    }

    /// Soft-weighted mixture of predicate embeddings.
    pub fn mixed_predicate_vector(&self, soft: &[f64]) -> Result<Vec<f64>> {
        if soft.len() != self.num_predicates() {
            return Err(Error::Contract(format!(
                "soft distribution has {} entries, vocabulary has {} predicates",
                soft.len(),
                self.num_predicates()
            )));
        }
        let mut out = vec![0.0; self.word_dim];
        for (p, &w) in soft.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &x) in out.iter_mut().zip(&self.predicate_vectors[p]) {
                *o += w * x;
            }
        }
        Ok(out)
    }

    /// Short fingerprint of the vocabulary sizes and names, stored in
    /// checkpoints to catch mismatched data.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for list in [&self.objects, &self.predicates, &self.interactions] {
            h.update((list.len() as u64).to_le_bytes());
            for w in list {
                h.update(w.as_bytes());
                h.update([0u8]);
            }
        }
        h.update((self.person_index as u64).to_le_bytes());
        hex::encode(&h.finalize()[..8])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: VocabularyFile = read_json(path)?;
        let table = match &file.embeddings_path {
            Some(p) => {
                let full = resolve_relative(path, p);
                Some(load_embedding_table(&full, WORD_DIM)?)
            }
            None => None,
        };
        let mut v = Vocabulary::new(
            file.objects,
            file.predicates,
            file.interactions,
            file.person_index,
            table.as_ref(),
            WORD_DIM,
        )?;
        v.embeddings_path = file.embeddings_path;
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = VocabularyFile {
            objects: self.objects.clone(),
            predicates: self.predicates.clone(),
            interactions: self.interactions.clone(),
            person_index: self.person_index,
            embeddings_path: self.embeddings_path.clone(),
        };
        write_json_atomic(path, &file)
    }
}

fn resolve_relative(base_file: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_file.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Word vector of a category name.
pub fn semantic_lookup(category_id: usize, vocab: &Vocabulary) -> Result<&[f64]> {
    vocab
        .object_vectors
        .get(category_id)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::Index(format!("unknown object category {category_id}")))
}

/// Deterministic unit-norm vector for a word missing from the embedding table.
pub fn fallback_vector(word: &str, dim: usize) -> Vec<f64> {
    let digest = Sha256::digest(word.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Parses a whitespace-separated text table, one `word v1 .. vD` per line.
pub fn load_embedding_table(path: &Path, dim: usize) -> Result<HashMap<String, Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let values = values.map_err(|e| {
            Error::parse(format!("{}:{}", path.display(), lineno + 1), e)
        })?;
        if values.len() != dim {
            return Err(Error::parse(
                format!("{}:{}", path.display(), lineno + 1),
                format!("expected {dim} values for '{word}', found {}", values.len()),
            ));
        }
        table.insert(word.to_string(), values);
    }
    Ok(table)
}
