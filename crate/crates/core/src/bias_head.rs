//! Trainable personalization heads.
//!
//! The gated head adds, for every candidate tail `t`,
//!
//! ```text
//! b(t) = alpha_a * <w_a, g_a(t) * f_a> + alpha_b * <w_b, g_b(t) * f_b>
//! ```
//!
//! where `g_k(t)` is the binary gate row of `t` and `f_k` the profile
//! features. Only `w_a`, `w_b`, `alpha_a` and `alpha_b` are trained; the
//! backbone is read, never written.
//!
//! [`PatientNodeHead`] is the profile-agnostic ablation: a one-hidden-layer
//! MLP from the entity embedding to a scalar bias.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::backbone::{corrupt_tail, EmbeddingTable};
use crate::error::{Error, Result};
use crate::kg_store::{AttributeUniverse, EntityId, GateMatrix, Group, RelationId, TripleStore};
use crate::profile::ProfileFeatures;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasHead {
    pub w_a: Vec<f64>,
    pub w_b: Vec<f64>,
    pub alpha_a: f64,
    pub alpha_b: f64,
}

impl BiasHead {
    /// Zero weights and unit gates: the head starts as the identity.
    pub fn new(len_a: usize, len_b: usize) -> Self {
        Self {
            w_a: vec![0.0; len_a],
            w_b: vec![0.0; len_b],
            alpha_a: 1.0,
            alpha_b: 1.0,
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.w_a.len() + self.w_b.len() + 2
    }

    pub fn is_finite(&self) -> bool {
        self.w_a.iter().chain(&self.w_b).all(|x| x.is_finite())
            && self.alpha_a.is_finite()
            && self.alpha_b.is_finite()
    }

    fn weights(&self, group: Group) -> &[f64] {
        match group {
            Group::A => &self.w_a,
            Group::B => &self.w_b,
        }
    }

    fn alpha(&self, group: Group) -> f64 {
        match group {
            Group::A => self.alpha_a,
            Group::B => self.alpha_b,
        }
    }
}

/// Per-entity bias and its per-group parts.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasVector {
    values: Vec<f64>,
    contrib_a: Vec<f64>,
    contrib_b: Vec<f64>,
}

impl BiasVector {
    pub fn from_contributions(contrib_a: Vec<f64>, contrib_b: Vec<f64>) -> Result<Self> {
        if contrib_a.len() != contrib_b.len() {
            return Err(Error::Dimension(format!(
                "contribution lengths {} and {} differ",
                contrib_a.len(),
                contrib_b.len()
            )));
        }
        let values = contrib_a.iter().zip(&contrib_b).map(|(a, b)| a + b).collect();
        Ok(Self {
            values,
            contrib_a,
            contrib_b,
        })
    }

    /// A bias with no group decomposition; the whole value is booked as
    /// group A and group B is zero.
    pub fn ungrouped(values: Vec<f64>) -> Self {
        let zeros = vec![0.0; values.len()];
        Self {
            contrib_a: values.clone(),
            contrib_b: zeros,
            values,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::ungrouped(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn contrib(&self, group: Group) -> &[f64] {
        match group {
            Group::A => &self.contrib_a,
            Group::B => &self.contrib_b,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `<w, g(t) * f>` over the set columns of `row`, ascending.
fn gated_dot(row: &[u32], w: &[f64], f: &[f64]) -> f64 {
    row.iter().map(|&j| w[j as usize] * f[j as usize]).sum()
}

fn check_group(head: &BiasHead, gates: &GateMatrix, f: &ProfileFeatures, group: Group) -> Result<()> {
    let w = head.weights(group);
    if gates.group() != group || f.group() != group {
        return Err(Error::Config(format!("gates/features passed for the wrong group (expected {group})")));
    }
    if w.len() != gates.n_cols() || f.len() != gates.n_cols() {
        return Err(Error::Dimension(format!(
            "group {group}: |w| = {}, |f| = {}, |U| = {}",
            w.len(),
            f.len(),
            gates.n_cols()
        )));
    }
    Ok(())
}

/// Precomputes the bias of every entity in one pass over the gate rows.
pub fn compute_bias(
    head: &BiasHead,
    gates_a: &GateMatrix,
    gates_b: &GateMatrix,
    f_a: &ProfileFeatures,
    f_b: &ProfileFeatures,
) -> Result<BiasVector> {
    check_group(head, gates_a, f_a, Group::A)?;
    check_group(head, gates_b, f_b, Group::B)?;
    if gates_a.n_rows() != gates_b.n_rows() {
        return Err(Error::Dimension("gate matrices have different row counts".into()));
    }
    let n = gates_a.n_rows();
    let mut contrib_a = Vec::with_capacity(n);
    let mut contrib_b = Vec::with_capacity(n);
    for t in 0..n as EntityId {
        contrib_a.push(head.alpha_a * gated_dot(gates_a.row(t), &head.w_a, f_a.values()));
        contrib_b.push(head.alpha_b * gated_dot(gates_b.row(t), &head.w_b, f_b.values()));
    }
    BiasVector::from_contributions(contrib_a, contrib_b)
}

/// Backbone tail scores plus the bias.
pub fn personalized_scores(table: &EmbeddingTable, bias: &BiasVector, h: EntityId, r: RelationId) -> Result<Vec<f64>> {
    if bias.len() != table.num_entities() {
        return Err(Error::Dimension(format!(
            "bias has {} entries, table has {} entities",
            bias.len(),
            table.num_entities()
        )));
    }
    let mut scores = table.score_all_tails(h, r)?;
    for (s, b) in scores.iter_mut().zip(bias.values()) {
        *s += b;
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadTrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub negatives_per_positive: usize,
    pub seed: u64,
    /// Hidden width of the profile-agnostic MLP ablation.
    pub patientnode_hidden: usize,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4096,
            learning_rate: 1e-3,
            epochs: 5,
            lambda1: 1e-4,
            lambda2: 1e-4,
            negatives_per_positive: 1,
            seed: 0,
            patientnode_hidden: 16,
        }
    }
}

impl HeadTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.negatives_per_positive == 0 || self.patientnode_hidden == 0 {
            return Err(Error::Config(
                "head batch_size, epochs, negatives_per_positive and patientnode_hidden must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("head learning_rate must be positive".into()));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("lambda1 and lambda2 must be non-negative".into()));
        }
        Ok(())
    }
}

/// One (positive, corrupt) tail pair with the frozen backbone's score gap
/// `s(h, r, pos) - s(h, r, neg)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSample {
    pub pos: EntityId,
    pub neg: EntityId,
    pub backbone_gap: f64,
}

fn hinge(gap: f64) -> f64 {
    (1.0 - gap).max(0.0)
}

fn l1_subgradient(w: f64) -> f64 {
    if w > 0.0 {
        1.0
    } else if w < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Hinge + L1 + L2 objective of the gated head on a fixed batch.
#[derive(Debug, Clone, Copy)]
pub struct GatedObjective<'a> {
    pub gates_a: &'a GateMatrix,
    pub gates_b: &'a GateMatrix,
    pub f_a: &'a ProfileFeatures,
    pub f_b: &'a ProfileFeatures,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl GatedObjective<'_> {
    fn gated(&self, head: &BiasHead, group: Group, t: EntityId) -> f64 {
        match group {
            Group::A => gated_dot(self.gates_a.row(t), &head.w_a, self.f_a.values()),
            Group::B => gated_dot(self.gates_b.row(t), &head.w_b, self.f_b.values()),
        }
    }

    fn bias(&self, head: &BiasHead, t: EntityId) -> f64 {
        head.alpha_a * self.gated(head, Group::A, t) + head.alpha_b * self.gated(head, Group::B, t)
    }

    fn regularizer(&self, head: &BiasHead) -> f64 {
        let w = head.w_a.iter().chain(&head.w_b);
        self.lambda1 * w.clone().map(|x| x.abs()).sum::<f64>() + self.lambda2 * w.map(|x| x * x).sum::<f64>()
    }

    pub fn loss(&self, head: &BiasHead, batch: &[PairSample]) -> f64 {
        let data: f64 = batch
            .iter()
            .map(|s| hinge(s.backbone_gap + self.bias(head, s.pos) - self.bias(head, s.neg)))
            .sum();
        data / batch.len() as f64 + self.regularizer(head)
    }

    /// Analytic (sub)gradient, returned in the shape of the head.
    pub fn gradient(&self, head: &BiasHead, batch: &[PairSample]) -> BiasHead {
        let mut g = BiasHead {
            w_a: vec![0.0; head.w_a.len()],
            w_b: vec![0.0; head.w_b.len()],
            alpha_a: 0.0,
            alpha_b: 0.0,
        };
        let scale = 1.0 / batch.len() as f64;
        for s in batch {
            let gap = s.backbone_gap + self.bias(head, s.pos) - self.bias(head, s.neg);
            if 1.0 - gap <= 0.0 {
                continue;
            }
            for (group, gates, f) in [
                (Group::A, self.gates_a, self.f_a.values()),
                (Group::B, self.gates_b, self.f_b.values()),
            ] {
                let alpha = head.alpha(group);
                let (gw, galpha) = match group {
                    Group::A => (&mut g.w_a, &mut g.alpha_a),
                    Group::B => (&mut g.w_b, &mut g.alpha_b),
                };
                for &j in gates.row(s.pos) {
                    gw[j as usize] -= scale * alpha * f[j as usize];
                }
                for &j in gates.row(s.neg) {
                    gw[j as usize] += scale * alpha * f[j as usize];
                }
                *galpha -= scale * (self.gated(head, group, s.pos) - self.gated(head, group, s.neg));
            }
        }
        for (gw, w) in [(&mut g.w_a, &head.w_a), (&mut g.w_b, &head.w_b)] {
            for (gj, &wj) in gw.iter_mut().zip(w) {
                *gj += self.lambda1 * l1_subgradient(wj) + 2.0 * self.lambda2 * wj;
            }
        }
        g
    }
}

/// Plain gradient step `head -= lr * grad`.
pub fn apply_step(head: &mut BiasHead, grad: &BiasHead, lr: f64) {
    for (w, g) in head.w_a.iter_mut().zip(&grad.w_a) {
        *w -= lr * g;
    }
    for (w, g) in head.w_b.iter_mut().zip(&grad.w_b) {
        *w -= lr * g;
    }
    head.alpha_a -= lr * grad.alpha_a;
    head.alpha_b -= lr * grad.alpha_b;
}

/// Samples one epoch of (positive, corrupt) pairs over the training split in
/// a shuffled order.
fn epoch_samples(store: &TripleStore, table: &EmbeddingTable, negatives: usize, rng: &mut ChaCha8Rng) -> Result<Vec<PairSample>> {
    let n_e = store.num_entities();
    let mut order: Vec<usize> = (0..store.train().len()).collect();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(order.len() * negatives);
    for i in order {
        let tr = store.train()[i];
        let pos_score = table.score(tr.head, tr.relation, tr.tail)?;
        for _ in 0..negatives {
            let neg = corrupt_tail(rng, n_e, tr.tail);
            let neg_score = table.score(tr.head, tr.relation, neg)?;
            out.push(PairSample {
                pos: tr.tail,
                neg,
                backbone_gap: pos_score - neg_score,
            });
        }
    }
    Ok(out)
}

/// Trains the gated head by mini-batch gradient descent against the frozen
/// backbone. Negatives are resampled every epoch.
#[allow(clippy::too_many_arguments)]
pub fn train_head(
    store: &TripleStore,
    table: &EmbeddingTable,
    gates_a: &GateMatrix,
    gates_b: &GateMatrix,
    f_a: &ProfileFeatures,
    f_b: &ProfileFeatures,
    cfg: &HeadTrainConfig,
) -> Result<BiasHead> {
    cfg.validate()?;
    if store.train().is_empty() || store.num_entities() < 2 {
        return Err(Error::Config("head training needs a non-empty train split and two entities".into()));
    }
    let mut head = BiasHead::new(gates_a.n_cols(), gates_b.n_cols());
    check_group(&head, gates_a, f_a, Group::A)?;
    check_group(&head, gates_b, f_b, Group::B)?;
    let objective = GatedObjective {
        gates_a,
        gates_b,
        f_a,
        f_b,
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for epoch in 0..cfg.epochs {
        let samples = epoch_samples(store, table, cfg.negatives_per_positive, &mut rng)?;
        let mut epoch_loss = 0.0;
        let mut n_batches = 0;
        for batch in samples.chunks(cfg.batch_size) {
            let loss = objective.loss(&head, batch);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "gated head loss {loss} at epoch {epoch}, batch {n_batches}"
                )));
            }
            let grad = objective.gradient(&head, batch);
            apply_step(&mut head, &grad, cfg.learning_rate);
            epoch_loss += loss;
            n_batches += 1;
        }
        debug!(epoch, loss = epoch_loss / n_batches as f64, "gated head epoch");
    }
    if !head.is_finite() {
        return Err(Error::Diverged("gated head parameters became non-finite".into()));
    }
    Ok(head)
}

/// Profile-agnostic MLP bias `b(t) = w2 . relu(W1 e_t + b1) + b2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientNodeHead {
    pub dim: usize,
    pub hidden: usize,
    /// `hidden x dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl PatientNodeHead {
    /// Uniform `W1` in `±1/sqrt(dim)`, everything else zero, so the initial
    /// bias is exactly zero.
    pub fn new(dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (dim as f64).sqrt();
        Self {
            dim,
            hidden,
            w1: (0..dim * hidden).map(|_| rng.gen_range(-bound..bound)).collect(),
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.dim * self.hidden + 2 * self.hidden + 1
    }

    fn zeros_like(&self) -> Self {
        Self {
            dim: self.dim,
            hidden: self.hidden,
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.hidden],
            w2: vec![0.0; self.hidden],
            b2: 0.0,
        }
    }

    fn hidden_pre(&self, x: &[f32]) -> Vec<f64> {
        (0..self.hidden)
            .map(|k| {
                let row = &self.w1[k * self.dim..(k + 1) * self.dim];
                self.b1[k] + row.iter().zip(x).map(|(&w, &xi)| w * xi as f64).sum::<f64>()
            })
            .collect()
    }

    pub fn forward(&self, x: &[f32]) -> f64 {
        self.hidden_pre(x)
            .iter()
            .zip(&self.w2)
            .map(|(&z, &w)| w * z.max(0.0))
            .sum::<f64>()
            + self.b2
    }

    /// Adds `coef * d forward(x) / d params` into `grad`.
    fn accumulate_grad(&self, x: &[f32], coef: f64, grad: &mut Self) {
        let pre = self.hidden_pre(x);
        for k in 0..self.hidden {
            let act = pre[k].max(0.0);
            grad.w2[k] += coef * act;
            if pre[k] > 0.0 {
                let back = coef * self.w2[k];
                grad.b1[k] += back;
                for (g, &xi) in grad.w1[k * self.dim..(k + 1) * self.dim].iter_mut().zip(x) {
                    *g += back * xi as f64;
                }
            }
        }
        grad.b2 += coef;
    }

    fn step(&mut self, grad: &Self, lr: f64) {
        for (p, g) in self.w1.iter_mut().zip(&grad.w1) {
            *p -= lr * g;
        }
        for (p, g) in self.b1.iter_mut().zip(&grad.b1) {
            *p -= lr * g;
        }
        for (p, g) in self.w2.iter_mut().zip(&grad.w2) {
            *p -= lr * g;
        }
        self.b2 -= lr * grad.b2;
    }

    fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).all(|x| x.is_finite()) && self.b2.is_finite()
    }
}

/// Hinge objective of the MLP ablation with optional weight decay on all
/// MLP parameters.
#[derive(Debug, Clone, Copy)]
pub struct PatientNodeObjective<'a> {
    pub table: &'a EmbeddingTable,
    pub weight_decay: f64,
}

impl PatientNodeObjective<'_> {
    fn decay(&self, head: &PatientNodeHead) -> f64 {
        let sq: f64 = head.w1.iter().chain(&head.b1).chain(&head.w2).map(|x| x * x).sum::<f64>() + head.b2 * head.b2;
        self.weight_decay * sq
    }

    pub fn loss(&self, head: &PatientNodeHead, batch: &[PairSample]) -> f64 {
        let data: f64 = batch
            .iter()
            .map(|s| {
                let gap = s.backbone_gap + head.forward(self.table.entity(s.pos)) - head.forward(self.table.entity(s.neg));
                hinge(gap)
            })
            .sum();
        data / batch.len() as f64 + self.decay(head)
    }

    pub fn gradient(&self, head: &PatientNodeHead, batch: &[PairSample]) -> PatientNodeHead {
        let mut g = head.zeros_like();
        let scale = 1.0 / batch.len() as f64;
        for s in batch {
            let xp = self.table.entity(s.pos);
            let xn = self.table.entity(s.neg);
            let gap = s.backbone_gap + head.forward(xp) - head.forward(xn);
            if 1.0 - gap <= 0.0 {
                continue;
            }
            head.accumulate_grad(xp, -scale, &mut g);
            head.accumulate_grad(xn, scale, &mut g);
        }
        if self.weight_decay > 0.0 {
            let wd = 2.0 * self.weight_decay;
            for (gi, p) in g.w1.iter_mut().zip(&head.w1) {
                *gi += wd * p;
            }
            for (gi, p) in g.b1.iter_mut().zip(&head.b1) {
                *gi += wd * p;
            }
            for (gi, p) in g.w2.iter_mut().zip(&head.w2) {
                *gi += wd * p;
            }
            g.b2 += wd * head.b2;
        }
        g
    }
}

/// Trains the MLP ablation with the same hinge loss and sampling scheme as
/// the gated head. No regularization.
pub fn train_patientnode(store: &TripleStore, table: &EmbeddingTable, cfg: &HeadTrainConfig) -> Result<PatientNodeHead> {
    cfg.validate()?;
    if store.train().is_empty() || store.num_entities() < 2 {
        return Err(Error::Config("head training needs a non-empty train split and two entities".into()));
    }
    let mut head = PatientNodeHead::new(table.dim(), cfg.patientnode_hidden, cfg.seed ^ 0x5ee_d0fa_11ce);
    let objective = PatientNodeObjective {
        table,
        weight_decay: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for epoch in 0..cfg.epochs {
        let samples = epoch_samples(store, table, cfg.negatives_per_positive, &mut rng)?;
        for batch in samples.chunks(cfg.batch_size) {
            let loss = objective.loss(&head, batch);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("patientnode loss {loss} at epoch {epoch}")));
            }
            let grad = objective.gradient(&head, batch);
            head.step(&grad, cfg.learning_rate);
        }
    }
    if !head.is_finite() {
        return Err(Error::Diverged("patientnode parameters became non-finite".into()));
    }
    Ok(head)
}

pub fn compute_bias_patientnode(head: &PatientNodeHead, table: &EmbeddingTable) -> Result<BiasVector> {
    if head.dim != table.dim() {
        return Err(Error::Dimension(format!(
            "MLP input width {} does not match embedding dim {}",
            head.dim,
            table.dim()
        )));
    }
    let values = (0..table.num_entities() as EntityId)
        .map(|t| head.forward(table.entity(t)))
        .collect();
    Ok(BiasVector::ungrouped(values))
}

/// On-disk form of a trained gated head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadCheckpoint {
    pub universe_a_checksum: String,
    pub universe_b_checksum: String,
    pub w_a: Vec<f64>,
    pub w_b: Vec<f64>,
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub config: HeadTrainConfig,
}

pub fn save_head(
    path: &Path,
    head: &BiasHead,
    universe_a: &AttributeUniverse,
    universe_b: &AttributeUniverse,
    cfg: &HeadTrainConfig,
) -> Result<()> {
    let ckpt = HeadCheckpoint {
        universe_a_checksum: universe_a.checksum(),
        universe_b_checksum: universe_b.checksum(),
        w_a: head.w_a.clone(),
        w_b: head.w_b.clone(),
        alpha_a: head.alpha_a,
        alpha_b: head.alpha_b,
        config: cfg.clone(),
    };
    let text = serde_json::to_string_pretty(&ckpt).expect("checkpoint serializes");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_head(
    path: &Path,
    universe_a: &AttributeUniverse,
    universe_b: &AttributeUniverse,
) -> Result<(BiasHead, HeadTrainConfig)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: HeadCheckpoint =
        serde_json::from_str(&text).map_err(|e| Error::load("head checkpoint", e.to_string()))?;
    if ckpt.universe_a_checksum != universe_a.checksum() || ckpt.universe_b_checksum != universe_b.checksum() {
        return Err(Error::load(
            "head checkpoint",
            "attribute universe checksums do not match the current data",
        ));
    }
    let head = BiasHead {
        w_a: ckpt.w_a,
        w_b: ckpt.w_b,
        alpha_a: ckpt.alpha_a,
        alpha_b: ckpt.alpha_b,
    };
    if head.w_a.len() != universe_a.len() || head.w_b.len() != universe_b.len() {
        return Err(Error::load("head checkpoint", "weight lengths do not match universe sizes"));
    }
    Ok((head, ckpt.config))
}
