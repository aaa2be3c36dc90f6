//! Frozen DistMult scorer.
//!
//! `score(h, r, t) = sum_j e_h[j] * w_r[j] * e_t[j]`, stored as 32-bit floats
//! and accumulated in 64-bit. Tables are immutable once built: the trainer
//! works on its own buffers and only hands out a finished, frozen table.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::debug;

use crate::error::{Error, Result};
use crate::kg_store::{to_hex, EntityId, RelationId, TripleStore};

const MAGIC: &[u8; 4] = b"KGE1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    n_entities: usize,
    n_relations: usize,
    entity: Vec<f32>,
    relation: Vec<f32>,
    frozen: bool,
}

impl EmbeddingTable {
    /// Wraps row-major entity and relation matrices into a frozen table.
    pub fn new(dim: usize, entity: Vec<f32>, relation: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if !entity.len().is_multiple_of(dim) || !relation.len().is_multiple_of(dim) {
            return Err(Error::Dimension(format!(
                "embedding buffers ({}, {}) are not multiples of dim {dim}",
                entity.len(),
                relation.len()
            )));
        }
        if let Some(x) = entity.iter().chain(relation.iter()).find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("embedding value {x}")));
        }
        Ok(Self {
            dim,
            n_entities: entity.len() / dim,
            n_relations: relation.len() / dim,
            entity,
            relation,
            frozen: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.n_entities
    }

    pub fn num_relations(&self) -> usize {
        self.n_relations
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn entity(&self, e: EntityId) -> &[f32] {
        let i = e as usize * self.dim;
        &self.entity[i..i + self.dim]
    }

    pub fn relation(&self, r: RelationId) -> &[f32] {
        let i = r as usize * self.dim;
        &self.relation[i..i + self.dim]
    }

    fn check_entity(&self, e: EntityId) -> Result<()> {
        if (e as usize) < self.n_entities {
            Ok(())
        } else {
            Err(Error::Index(format!("entity {e} >= {}", self.n_entities)))
        }
    }

    fn check_relation(&self, r: RelationId) -> Result<()> {
        if (r as usize) < self.n_relations {
            Ok(())
        } else {
            Err(Error::Index(format!("relation {r} >= {}", self.n_relations)))
        }
    }

    fn query_vector(&self, h: EntityId, r: RelationId) -> Vec<f64> {
        self.entity(h)
            .iter()
            .zip(self.relation(r))
            .map(|(&a, &b)| a as f64 * b as f64)
            .collect()
    }

    pub fn score(&self, h: EntityId, r: RelationId, t: EntityId) -> Result<f64> {
        self.check_entity(h)?;
        self.check_entity(t)?;
        self.check_relation(r)?;
        let q = self.query_vector(h, r);
        Ok(dot(&q, self.entity(t)))
    }

    /// Scores every entity as tail of `(h, r, ?)`; bit-identical to calling
    /// [`EmbeddingTable::score`] per tail.
    pub fn score_all_tails(&self, h: EntityId, r: RelationId) -> Result<Vec<f64>> {
        self.check_entity(h)?;
        self.check_relation(r)?;
        let q = self.query_vector(h, r);
        Ok(self.entity.chunks_exact(self.dim).map(|row| dot(&q, row)).collect())
    }

    /// SHA-256 over the serialized table.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_bytes());
        to_hex(&h.finalize())
    }

    pub fn num_parameters(&self) -> usize {
        self.entity.len() + self.relation.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 4 * (self.entity.len() + self.relation.len()));
        out.extend_from_slice(MAGIC);
        for n in [self.n_entities, self.n_relations, self.dim] {
            out.extend_from_slice(&(n as u64).to_le_bytes());
        }
        for x in self.entity.iter().chain(self.relation.iter()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: &str| Error::load("embedding table", m);
        if bytes.len() < 28 || &bytes[..4] != MAGIC {
            return Err(err("missing KGE1 header"));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[4 + 8 * i..12 + 8 * i].try_into().unwrap()) as usize;
        let (n_e, n_r, dim) = (word(0), word(1), word(2));
        if dim == 0 {
            return Err(err("header dim is zero"));
        }
        let n_floats = n_e
            .checked_add(n_r)
            .and_then(|n| n.checked_mul(dim))
            .ok_or_else(|| err("header sizes overflow"))?;
        let body = &bytes[28..];
        if body.len() != n_floats * 4 {
            return Err(err(&format!(
                "expected {} payload bytes, found {}",
                n_floats * 4,
                body.len()
            )));
        }
        let floats: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (entity, relation) = floats.split_at(n_e * dim);
        Self::new(dim, entity.to_vec(), relation.to_vec())
    }
}

fn dot(q: &[f64], row: &[f32]) -> f64 {
    q.iter().zip(row).map(|(&a, &b)| a * b as f64).sum()
}

pub fn save_embeddings(table: &EmbeddingTable, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&table.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Loads a table, optionally checking it against the current vocab sizes.
pub fn load_embeddings(path: &Path, expect: Option<(usize, usize)>) -> Result<EmbeddingTable> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let table = EmbeddingTable::from_bytes(&bytes)?;
    if let Some((n_e, n_r)) = expect {
        if (table.n_entities, table.n_relations) != (n_e, n_r) {
            return Err(Error::load(
                "embedding table",
                format!(
                    "header has {} entities / {} relations, vocab has {n_e} / {n_r}",
                    table.n_entities, table.n_relations
                ),
            ));
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneTrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub margin: f64,
    pub seed: u64,
}

impl Default for BackboneTrainConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            epochs: 100,
            learning_rate: 0.1,
            batch_size: 128,
            negatives_per_positive: 1,
            margin: 1.0,
            seed: 0,
        }
    }
}

impl BackboneTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.batch_size == 0 || self.negatives_per_positive == 0 {
            return Err(Error::Config(
                "backbone dim, batch_size and negatives_per_positive must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(self.margin > 0.0) {
            return Err(Error::Config("backbone learning_rate and margin must be positive".into()));
        }
        Ok(())
    }
}

/// Draws a tail uniformly from all entities except `exclude`.
pub(crate) fn corrupt_tail(rng: &mut ChaCha8Rng, n_entities: usize, exclude: EntityId) -> EntityId {
    debug_assert!(n_entities >= 2);
    let t = rng.gen_range(0..n_entities as u32 - 1);
    if t >= exclude {
        t + 1
    } else {
        t
    }
}

/// Trains DistMult embeddings with a margin ranking loss and AdaGrad.
///
/// Initialisation is uniform in `[-0.5/sqrt(d), 0.5/sqrt(d)]`; corrupt tails
/// are sampled uniformly. Output is bitwise reproducible for a given seed.
pub fn train_backbone(store: &TripleStore, cfg: &BackboneTrainConfig) -> Result<EmbeddingTable> {
    cfg.validate()?;
    if store.train().is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    let d = cfg.dim;
    let n_e = store.num_entities();
    let n_r = store.num_relations();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 0.5 / (d as f64).sqrt();
    let mut ent: Vec<f64> = (0..n_e * d).map(|_| rng.gen_range(-bound..bound)).collect();
    let mut rel: Vec<f64> = (0..n_r * d).map(|_| rng.gen_range(-bound..bound)).collect();

    if n_e >= 2 && cfg.epochs > 0 {
        let mut ent_acc = vec![0.0; ent.len()];
        let mut rel_acc = vec![0.0; rel.len()];
        let mut ent_grad = vec![0.0; ent.len()];
        let mut rel_grad = vec![0.0; rel.len()];
        let mut ent_touched = vec![false; n_e];
        let mut rel_touched = vec![false; n_r];
        let mut touched_e: Vec<usize> = Vec::new();
        let mut touched_r: Vec<usize> = Vec::new();
        let mut order: Vec<usize> = (0..store.train().len()).collect();

        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                let scale = 1.0 / (batch.len() * cfg.negatives_per_positive) as f64;
                for &i in batch {
                    let tr = store.train()[i];
                    let (h, r, tp) = (tr.head as usize, tr.relation as usize, tr.tail as usize);
                    for _ in 0..cfg.negatives_per_positive {
                        let tn = corrupt_tail(&mut rng, n_e, tr.tail) as usize;
                        let eh = &ent[h * d..(h + 1) * d];
                        let er = &rel[r * d..(r + 1) * d];
                        let ep = &ent[tp * d..(tp + 1) * d];
                        let en = &ent[tn * d..(tn + 1) * d];
                        let mut sp = 0.0;
                        let mut sn = 0.0;
                        for j in 0..d {
                            sp += eh[j] * er[j] * ep[j];
                            sn += eh[j] * er[j] * en[j];
                        }
                        let loss = cfg.margin - sp + sn;
                        if loss <= 0.0 {
                            continue;
                        }
                        epoch_loss += loss * scale;
                        for idx in [h, tp, tn] {
                            if !ent_touched[idx] {
                                ent_touched[idx] = true;
                                touched_e.push(idx);
                            }
                        }
                        if !rel_touched[r] {
                            rel_touched[r] = true;
                            touched_r.push(r);
                        }
                        for j in 0..d {
                            let (h_j, r_j, p_j, n_j) = (eh[j], er[j], ep[j], en[j]);
                            // d(loss) = -d(sp) + d(sn)
                            ent_grad[h * d + j] += scale * r_j * (n_j - p_j);
                            rel_grad[r * d + j] += scale * h_j * (n_j - p_j);
                            ent_grad[tp * d + j] -= scale * h_j * r_j;
                            ent_grad[tn * d + j] += scale * h_j * r_j;
                        }
                    }
                }
                adagrad_apply(&mut ent, &mut ent_acc, &mut ent_grad, &mut touched_e, &mut ent_touched, d, cfg.learning_rate);
                adagrad_apply(&mut rel, &mut rel_acc, &mut rel_grad, &mut touched_r, &mut rel_touched, d, cfg.learning_rate);
            }
            if !epoch_loss.is_finite() {
                return Err(Error::Diverged(format!("backbone loss {epoch_loss} at epoch {epoch}")));
            }
            debug!(epoch, loss = epoch_loss, "backbone epoch");
        }
    }

    EmbeddingTable::new(
        d,
        ent.iter().map(|&x| x as f32).collect(),
        rel.iter().map(|&x| x as f32).collect(),
    )
}

fn adagrad_apply(
    params: &mut [f64],
    acc: &mut [f64],
    grad: &mut [f64],
    touched: &mut Vec<usize>,
    flags: &mut [bool],
    d: usize,
    lr: f64,
) {
    // ascending row order keeps the update independent of visit order
    touched.sort_unstable();
    for &row in touched.iter() {
        for j in row * d..(row + 1) * d {
            let g = grad[j];
            acc[j] += g * g;
            params[j] -= lr * g / (acc[j].sqrt() + 1e-10);
            grad[j] = 0.0;
        }
        flags[row] = false;
    }
    touched.clear();
}
