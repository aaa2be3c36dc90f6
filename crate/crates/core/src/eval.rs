//! Filtered link-prediction metrics and the personalization battery.
//!
//! Ranks use the filtered protocol: every tail already known for `(h, r)` in
//! train or valid is removed from the candidate pool, except the ground
//! truth itself. Ties are resolved "optimistic-mid":
//! `rank = 1 + #greater + floor(#equal_others / 2)`.
//!
//! Top-k lists order candidates by descending score and then ascending
//! entity id, over the same filtered pool.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::backbone::EmbeddingTable;
use crate::bias_head::{compute_bias, personalized_scores, BiasHead, BiasVector};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::kg_store::{EntityId, GateMatrix, Group, RelationId, TripleStore};
use crate::profile::{shuffle_features, ProfileFeatures};

/// Sign-flip resamples used by [`alignment_delta_test`] in the pipeline.
pub const PERMUTATION_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub head: EntityId,
    pub relation: RelationId,
    pub true_tail: EntityId,
}

/// One query per test triple, in split order.
pub fn test_queries(store: &TripleStore) -> Vec<Query> {
    store
        .test()
        .iter()
        .map(|t| Query {
            head: t.head,
            relation: t.relation,
            true_tail: t.tail,
        })
        .collect()
}

/// Calls `f(t)` for every candidate `t` that survives filtering. `filter_out`
/// must be sorted; `true_tail` is always kept.
fn for_each_candidate(n: usize, true_tail: EntityId, filter_out: &[EntityId], mut f: impl FnMut(EntityId)) {
    let mut skip = filter_out.iter().peekable();
    for t in 0..n as EntityId {
        while skip.peek().is_some_and(|&&s| s < t) {
            skip.next();
        }
        if skip.peek().is_some_and(|&&s| s == t) && t != true_tail {
            continue;
        }
        f(t);
    }
}

/// Filtered rank of `true_tail` (1 is best). `filter_out` must be sorted
/// ascending; an occurrence of `true_tail` in it is ignored.
pub fn filtered_rank(scores: &[f64], true_tail: EntityId, filter_out: &[EntityId]) -> Result<usize> {
    let target = *scores
        .get(true_tail as usize)
        .ok_or_else(|| Error::Index(format!("true tail {true_tail} >= {}", scores.len())))?;
    debug_assert!(filter_out.windows(2).all(|w| w[0] <= w[1]));
    let mut greater = 0usize;
    let mut equal = 0usize;
    for_each_candidate(scores.len(), true_tail, filter_out, |t| {
        if t == true_tail {
            return;
        }
        let s = scores[t as usize];
        if s > target {
            greater += 1;
        } else if s == target {
            equal += 1;
        }
    });
    Ok(1 + greater + equal / 2)
}

/// The `k` best filtered candidates, best first.
pub fn top_k(scores: &[f64], true_tail: EntityId, filter_out: &[EntityId], k: usize) -> Vec<EntityId> {
    let mut cands = Vec::with_capacity(scores.len());
    for_each_candidate(scores.len(), true_tail, filter_out, |t| cands.push(t));
    let order = |a: &EntityId, b: &EntityId| scores[*b as usize].total_cmp(&scores[*a as usize]).then(a.cmp(b));
    if k < cands.len() {
        cands.select_nth_unstable_by(k, order);
        cands.truncate(k);
    }
    cands.sort_unstable_by(order);
    cands
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub query: Query,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankTable {
    pub entries: Vec<RankEntry>,
}

impl RankTable {
    pub fn ranks(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.rank)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Ranks every query's true tail under `scores_fn`. Queries are scored in
/// parallel; the output keeps query order.
pub fn rank_queries<F>(store: &TripleStore, queries: &[Query], scores_fn: F) -> Result<RankTable>
where
    F: Fn(&Query) -> Result<Vec<f64>> + Sync,
{
    let entries = queries
        .par_iter()
        .map(|q| {
            let scores = scores_fn(q)?;
            let rank = filtered_rank(&scores, q.true_tail, store.known_tails(q.head, q.relation))?;
            Ok(RankEntry { query: *q, rank })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankTable { entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
}

/// MRR, Hits@k and NDCG@k with a single relevant tail per query
/// (`DCG@k = 1/log2(rank + 1)` inside the cutoff, `IDCG@k = 1`).
pub fn ranking_metrics(table: &RankTable, ks: &[usize]) -> Result<RankingMetrics> {
    if table.is_empty() {
        return Err(Error::Config("cannot compute ranking metrics on zero queries".into()));
    }
    if ks.contains(&0) {
        return Err(Error::Config("cutoffs must be at least 1".into()));
    }
    let n = table.len() as f64;
    let mrr = table.ranks().map(|r| 1.0 / r as f64).sum::<f64>() / n;
    let mut hits = BTreeMap::new();
    let mut ndcg = BTreeMap::new();
    for &k in ks {
        let h = table.ranks().filter(|&r| r <= k).count() as f64 / n;
        let g = table
            .ranks()
            .filter(|&r| r <= k)
            .map(|r| 1.0 / ((r + 1) as f64).log2())
            .sum::<f64>()
            / n;
        hits.insert(k, h);
        ndcg.insert(k, g);
    }
    Ok(RankingMetrics { mrr, hits, ndcg })
}

/// Entities with a positive push from at least one group and a large
/// difference between the two groups' contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSet {
    mask: Vec<bool>,
    percentile_p: u32,
    threshold: Option<f64>,
}

impl AlignedSet {
    pub fn from_mask(mask: Vec<bool>) -> Self {
        Self {
            mask,
            percentile_p: 0,
            threshold: None,
        }
    }

    pub fn contains(&self, t: EntityId) -> bool {
        self.mask.get(t as usize).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn members(&self) -> Vec<EntityId> {
        (0..self.mask.len() as EntityId).filter(|&t| self.mask[t as usize]).collect()
    }

    pub fn percentile_p(&self) -> u32 {
        self.percentile_p
    }

    /// `None` when no entity had a positive contribution.
    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }
}

/// Nearest-rank percentile of a non-empty sample.
pub fn nearest_rank_percentile(values: &[f64], p: u32) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p as f64 / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn aligned_set(bias: &BiasVector, percentile_p: u32) -> Result<AlignedSet> {
    if !(1..=100).contains(&percentile_p) {
        return Err(Error::Config(format!("percentile {percentile_p} outside 1..=100")));
    }
    if ![60, 70, 80].contains(&percentile_p) {
        warn!(percentile_p, "percentile outside the usual {{60, 70, 80}}");
    }
    let (ca, cb) = (bias.contrib(Group::A), bias.contrib(Group::B));
    let positive: Vec<usize> = (0..bias.len()).filter(|&t| ca[t].max(cb[t]) > 0.0).collect();
    let mut mask = vec![false; bias.len()];
    if positive.is_empty() {
        warn!("no entity has a positive contribution; aligned set is empty");
        return Ok(AlignedSet {
            mask,
            percentile_p,
            threshold: None,
        });
    }
    let margins: Vec<f64> = positive.iter().map(|&t| (ca[t] - cb[t]).abs()).collect();
    let threshold = nearest_rank_percentile(&margins, percentile_p);
    for (&t, &m) in positive.iter().zip(&margins) {
        mask[t] = m >= threshold;
    }
    Ok(AlignedSet {
        mask,
        percentile_p,
        threshold: Some(threshold),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentScore {
    pub mean: f64,
    pub per_query: Vec<f64>,
}

/// Mean over queries of `|top_k ∩ aligned| / k`.
pub fn alignment_at_k<F>(
    store: &TripleStore,
    queries: &[Query],
    scores_fn: F,
    aligned: &AlignedSet,
    k: usize,
) -> Result<AlignmentScore>
where
    F: Fn(&Query) -> Result<Vec<f64>> + Sync,
{
    if k == 0 {
        return Err(Error::Config("alignment cutoff k must be at least 1".into()));
    }
    if queries.is_empty() {
        return Err(Error::Config("alignment needs at least one query".into()));
    }
    let per_query = queries
        .par_iter()
        .map(|q| {
            let scores = scores_fn(q)?;
            let top = top_k(&scores, q.true_tail, store.known_tails(q.head, q.relation), k);
            Ok(top.iter().filter(|&&t| aligned.contains(t)).count() as f64 / k as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_query.iter().sum::<f64>() / per_query.len() as f64;
    Ok(AlignmentScore { mean, per_query })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaTest {
    pub delta: f64,
    pub p_value: f64,
}

/// Paired two-sided sign-flip permutation test on per-query differences.
///
/// `p = (1 + #{|mean(s * d)| >= |mean(d)|}) / (1 + n_resamples)`.
pub fn alignment_delta_test(base: &[f64], adapted: &[f64], n_resamples: usize, seed: u64) -> Result<DeltaTest> {
    if base.len() != adapted.len() {
        return Err(Error::Dimension(format!(
            "paired samples have lengths {} and {}",
            base.len(),
            adapted.len()
        )));
    }
    if base.len() < 2 {
        return Err(Error::Config("permutation test needs at least two queries".into()));
    }
    if n_resamples == 0 {
        return Err(Error::Config("permutation test needs at least one resample".into()));
    }
    let diffs: Vec<f64> = adapted.iter().zip(base).map(|(a, b)| a - b).collect();
    let n = diffs.len() as f64;
    let delta = diffs.iter().sum::<f64>() / n;
    let observed = delta.abs();
    let scale: f64 = diffs.iter().map(|d| d.abs()).sum::<f64>() / n;
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..n_resamples {
        let s: f64 = diffs.iter().map(|&d| if rng.gen::<bool>() { d } else { -d }).sum();
        if (s / n).abs() >= observed - tol {
            extreme += 1;
        }
    }
    Ok(DeltaTest {
        delta,
        p_value: (1 + extreme) as f64 / (1 + n_resamples) as f64,
    })
}

/// Everything needed to re-score queries under a gated head with modified
/// features.
#[derive(Debug, Clone, Copy)]
pub struct GatedState<'a> {
    pub store: &'a TripleStore,
    pub table: &'a EmbeddingTable,
    pub head: &'a BiasHead,
    pub gates_a: &'a GateMatrix,
    pub gates_b: &'a GateMatrix,
    pub f_a: &'a ProfileFeatures,
    pub f_b: &'a ProfileFeatures,
    pub queries: &'a [Query],
}

impl GatedState<'_> {
    pub fn bias(&self) -> Result<BiasVector> {
        self.bias_with(self.f_a, self.f_b)
    }

    pub fn bias_with(&self, f_a: &ProfileFeatures, f_b: &ProfileFeatures) -> Result<BiasVector> {
        compute_bias(self.head, self.gates_a, self.gates_b, f_a, f_b)
    }

    pub fn base_ranks(&self) -> Result<RankTable> {
        rank_queries(self.store, self.queries, |q| self.table.score_all_tails(q.head, q.relation))
    }

    pub fn ranks_under(&self, bias: &BiasVector) -> Result<RankTable> {
        rank_queries(self.store, self.queries, |q| {
            personalized_scores(self.table, bias, q.head, q.relation)
        })
    }

    fn features(&self, group: Group) -> &ProfileFeatures {
        match group {
            Group::A => self.f_a,
            Group::B => self.f_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrResult {
    pub group: Group,
    pub epsilon: f64,
    /// `E[Δrank | t* in A+] - E[Δrank | t* not in A+]`; negative is better.
    pub cr: f64,
    /// Fraction of in-group queries whose rank improved.
    pub pct_improved: f64,
    pub n_in: usize,
    pub n_out: usize,
}

/// Boosts one group's features by `1 + epsilon` without retraining and
/// compares the rank changes of queries whose true tail is currently pushed
/// up by that group against the rest. `None` if either side is empty.
pub fn counterfactual_responsiveness(state: &GatedState<'_>, group: Group, epsilon: f64) -> Result<Option<CrResult>> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("epsilon {epsilon} must be finite and non-negative")));
    }
    let bias = state.bias()?;
    let boosted = state.features(group).scaled(1.0 + epsilon);
    let perturbed = match group {
        Group::A => state.bias_with(&boosted, state.f_b)?,
        Group::B => state.bias_with(state.f_a, &boosted)?,
    };
    let before = state.ranks_under(&bias)?;
    let after = state.ranks_under(&perturbed)?;
    let contrib = bias.contrib(group);

    let (mut sum_in, mut n_in, mut improved) = (0i64, 0usize, 0usize);
    let (mut sum_out, mut n_out) = (0i64, 0usize);
    for (b, a) in before.entries.iter().zip(&after.entries) {
        let delta = a.rank as i64 - b.rank as i64;
        if contrib[b.query.true_tail as usize] > 0.0 {
            sum_in += delta;
            n_in += 1;
            if delta < 0 {
                improved += 1;
            }
        } else {
            sum_out += delta;
            n_out += 1;
        }
    }
    if n_in == 0 || n_out == 0 {
        warn!(%group, n_in, n_out, "counterfactual responsiveness undefined");
        return Ok(None);
    }
    Ok(Some(CrResult {
        group,
        epsilon,
        cr: sum_in as f64 / n_in as f64 - sum_out as f64 / n_out as f64,
        pct_improved: improved as f64 / n_in as f64,
        n_in,
        n_out,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboResult {
    pub real_delta: f64,
    pub shuffled_delta_mean: f64,
    pub shuffled_deltas: Vec<f64>,
    /// `real / shuffled`, absent when the shuffled mean is ~0.
    pub ratio: Option<f64>,
}

/// Alignment gain under real features versus shuffled features, with the
/// aligned set frozen to the one computed from the real features.
pub fn placebo_validation(
    state: &GatedState<'_>,
    n_shuffles: usize,
    seed: u64,
    k: usize,
    percentile_p: u32,
) -> Result<PlaceboResult> {
    if n_shuffles == 0 {
        return Err(Error::Config("placebo validation needs at least one shuffle".into()));
    }
    let bias = state.bias()?;
    let mask = aligned_set(&bias, percentile_p)?;
    let base = alignment_at_k(
        state.store,
        state.queries,
        |q| state.table.score_all_tails(q.head, q.relation),
        &mask,
        k,
    )?
    .mean;
    let adapted_with = |b: &BiasVector| -> Result<f64> {
        Ok(alignment_at_k(
            state.store,
            state.queries,
            |q| personalized_scores(state.table, b, q.head, q.relation),
            &mask,
            k,
        )?
        .mean)
    };
    let real_delta = adapted_with(&bias)? - base;
    let mut shuffled_deltas = Vec::with_capacity(n_shuffles);
    for s in 0..n_shuffles as u64 {
        let fa = shuffle_features(state.f_a, derive_seed(seed, 2 * s));
        let fb = shuffle_features(state.f_b, derive_seed(seed, 2 * s + 1));
        let b = state.bias_with(&fa, &fb)?;
        shuffled_deltas.push(adapted_with(&b)? - base);
    }
    let shuffled_delta_mean = shuffled_deltas.iter().sum::<f64>() / n_shuffles as f64;
    let ratio = (shuffled_delta_mean.abs() >= 1e-12).then(|| real_delta / shuffled_delta_mean);
    Ok(PlaceboResult {
        real_delta,
        shuffled_delta_mean,
        shuffled_deltas,
        ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizationSettings {
    pub k: usize,
    pub percentile_p: u32,
    pub epsilon: f64,
    pub n_shuffles: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub k: usize,
    pub percentile_p: u32,
    pub threshold: Option<f64>,
    pub aligned_size: usize,
    pub base: f64,
    pub adapted: f64,
    pub delta: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizationReport {
    pub alignment: AlignmentReport,
    pub cr_a: Option<CrResult>,
    pub cr_b: Option<CrResult>,
    pub placebo: PlaceboResult,
}

/// Alignment@k with its significance test, CR for both groups and the
/// placebo check.
pub fn evaluate_personalization(state: &GatedState<'_>, settings: &PersonalizationSettings) -> Result<PersonalizationReport> {
    let bias = state.bias()?;
    let aligned = aligned_set(&bias, settings.percentile_p)?;
    let base = alignment_at_k(
        state.store,
        state.queries,
        |q| state.table.score_all_tails(q.head, q.relation),
        &aligned,
        settings.k,
    )?;
    let adapted = alignment_at_k(
        state.store,
        state.queries,
        |q| personalized_scores(state.table, &bias, q.head, q.relation),
        &aligned,
        settings.k,
    )?;
    let test = alignment_delta_test(
        &base.per_query,
        &adapted.per_query,
        PERMUTATION_RESAMPLES,
        derive_seed(settings.seed, 0xa11),
    )?;
    let alignment = AlignmentReport {
        k: settings.k,
        percentile_p: settings.percentile_p,
        threshold: aligned.threshold(),
        aligned_size: aligned.len(),
        base: base.mean,
        adapted: adapted.mean,
        delta: test.delta,
        p_value: test.p_value,
    };
    let cr_a = counterfactual_responsiveness(state, Group::A, settings.epsilon)?;
    let cr_b = counterfactual_responsiveness(state, Group::B, settings.epsilon)?;
    let placebo = placebo_validation(
        state,
        settings.n_shuffles,
        derive_seed(settings.seed, 0x91ace),
        settings.k,
        settings.percentile_p,
    )?;
    Ok(PersonalizationReport {
        alignment,
        cr_a,
        cr_b,
        placebo,
    })
}

/// Mean and standard error (sample sd / sqrt(n)) of per-seed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub stderr: f64,
    pub values: Vec<f64>,
}

pub fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len();
    if n == 0 {
        return MetricSummary {
            mean: f64::NAN,
            stderr: f64::NAN,
            values: Vec::new(),
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt() / (n as f64).sqrt()
    } else {
        0.0
    };
    MetricSummary {
        mean,
        stderr,
        values: values.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn rank_basic_cases() {
        assert_eq!(filtered_rank(&[3.0, 2.0, 1.0], 0, &[]).unwrap(), 1);
        assert_eq!(filtered_rank(&[1.0, 2.0, 3.0], 0, &[2]).unwrap(), 2);
        assert_eq!(filtered_rank(&[1.0, 2.0, 3.0], 0, &[]).unwrap(), 3);
        assert!(matches!(filtered_rank(&[1.0], 3, &[]), Err(Error::Index(_))));
        // true tail inside the filter is still ranked
        assert_eq!(filtered_rank(&[1.0, 2.0, 3.0], 2, &[1, 2]).unwrap(), 1);
    }

    #[test]
    fn all_equal_scores_take_the_middle() {
        for n in 1..12usize {
            for n_filter in 0..n.saturating_sub(1) {
                let scores = vec![0.5; n];
                let filter: Vec<EntityId> = (1..=n_filter as EntityId).collect();
                let rank = filtered_rank(&scores, 0, &filter).unwrap();
                let pool = n - n_filter;
                assert_eq!(rank, 1 + (pool - 1) / 2);
                if pool % 2 == 1 {
                    assert_eq!(2 * rank, pool + 1);
                }
            }
        }
    }

    #[test]
    fn metrics_by_hand() {
        let q = Query { head: 0, relation: 0, true_tail: 0 };
        let table = |ranks: &[usize]| RankTable {
            entries: ranks.iter().map(|&rank| RankEntry { query: q, rank }).collect(),
        };
        let m = ranking_metrics(&table(&[1, 1, 1]), &[1, 3, 10]).unwrap();
        assert_eq!((m.mrr, m.hits[&1], m.ndcg[&10]), (1.0, 1.0, 1.0));
        let m = ranking_metrics(&table(&[1, 2]), &[1, 10]).unwrap();
        assert_eq!(m.mrr, 0.75);
        assert_eq!(m.hits[&1], 0.5);
        let m = ranking_metrics(&table(&[11]), &[10]).unwrap();
        assert_eq!((m.hits[&10], m.ndcg[&10]), (0.0, 0.0));
        assert!(ranking_metrics(&table(&[]), &[1]).is_err());
    }

    fn bias(a: &[f64], b: &[f64]) -> BiasVector {
        BiasVector::from_contributions(a.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn aligned_set_single_positive() {
        let s = aligned_set(&bias(&[1.0, 0.0], &[0.0, 0.0]), 60).unwrap();
        assert_eq!(s.members(), vec![0]);
        assert_eq!(s.threshold(), Some(1.0));
    }

    #[test]
    fn aligned_set_empty_without_positives() {
        let s = aligned_set(&bias(&[-1.0, 0.0, -0.5], &[0.0, -2.0, 0.0]), 70).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.threshold(), None);
        assert!(aligned_set(&bias(&[1.0], &[0.0]), 0).is_err());
    }

    #[test]
    fn nearest_rank_examples() {
        let v = [15.0, 20.0, 35.0, 40.0, 50.0];
        assert_eq!(nearest_rank_percentile(&v, 30), 20.0);
        assert_eq!(nearest_rank_percentile(&v, 40), 20.0);
        assert_eq!(nearest_rank_percentile(&v, 50), 35.0);
        assert_eq!(nearest_rank_percentile(&v, 100), 50.0);
        assert_eq!(nearest_rank_percentile(&v, 1), 15.0);
    }

    #[test]
    fn top_k_respects_filter_and_ties() {
        let scores = [1.0, 5.0, 5.0, 3.0, 4.0];
        assert_eq!(top_k(&scores, 0, &[], 3), vec![1, 2, 4]);
        assert_eq!(top_k(&scores, 0, &[1, 4], 3), vec![2, 3, 0]);
        assert_eq!(top_k(&scores, 1, &[1, 2], 2), vec![1, 4]);
        assert_eq!(top_k(&scores, 0, &[], 10).len(), 5);
    }

    fn tiny_store() -> TripleStore {
        // entities: q0 q1 e1 e2 e3 x
        TripleStore::from_str_triples(
            &[("q0", "r", "x"), ("e1", "s", "e2"), ("e3", "s", "x")],
            &[],
            &[("q0", "r", "e1"), ("q1", "r", "e2")],
        )
        .unwrap()
    }

    #[test]
    fn alignment_enumeration() {
        let store = tiny_store();
        let id = |l| store.entities().id(l).unwrap();
        let queries = test_queries(&store);
        // q0's filter removes x; with these scores top-2 for q0 = {e3, e1} and
        // for q1 = {e1, e2}.
        let mut s0 = vec![0.0; store.num_entities()];
        s0[id("e3") as usize] = 9.0;
        s0[id("e1") as usize] = 8.0;
        s0[id("x") as usize] = 10.0;
        let mut s1 = vec![0.0; store.num_entities()];
        s1[id("e1") as usize] = 9.0;
        s1[id("e2") as usize] = 8.0;
        let q0 = id("q0");
        let scores = |q: &Query| Ok(if q.head == q0 { s0.clone() } else { s1.clone() });
        let mut mask = vec![false; store.num_entities()];
        mask[id("e3") as usize] = true;
        let a = alignment_at_k(&store, &queries, scores, &AlignedSet::from_mask(mask), 2).unwrap();
        assert_eq!(a.per_query, vec![0.5, 0.0]);
        assert_eq!(a.mean, 0.25);

        let all = AlignedSet::from_mask(vec![true; store.num_entities()]);
        assert_eq!(alignment_at_k(&store, &queries, scores, &all, 2).unwrap().mean, 1.0);
        let none = AlignedSet::from_mask(vec![false; store.num_entities()]);
        assert_eq!(alignment_at_k(&store, &queries, scores, &none, 2).unwrap().mean, 0.0);
        assert!(alignment_at_k(&store, &[], scores, &none, 2).is_err());
    }

    #[test]
    fn permutation_test_edges() {
        let base: Vec<f64> = (0..100).map(|i| (i % 7) as f64 / 10.0).collect();
        let t = alignment_delta_test(&base, &base, 10_000, 1).unwrap();
        assert_eq!((t.delta, t.p_value), (0.0, 1.0));
        let shifted: Vec<f64> = base.iter().map(|b| b + 0.1).collect();
        let t = alignment_delta_test(&base, &shifted, 10_000, 1).unwrap();
        assert!((t.delta - 0.1).abs() < 1e-12);
        assert!(t.p_value <= 0.001, "p = {}", t.p_value);
        assert!(alignment_delta_test(&[1.0], &[2.0], 100, 0).is_err());
        assert!(alignment_delta_test(&[1.0, 2.0], &[2.0], 100, 0).is_err());
    }

    #[test]
    fn summary_stderr() {
        let s = summarize(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.stderr - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(summarize(&[4.0]).stderr, 0.0);
    }

    struct Fixture {
        store: TripleStore,
        table: EmbeddingTable,
        gates_a: GateMatrix,
        gates_b: GateMatrix,
        queries: Vec<Query>,
    }

    impl Fixture {
        /// Zero relation embeddings so every backbone score ties at 0.
        fn new(train: &[(&str, &str, &str)], test: &[(&str, &str, &str)]) -> Self {
            use crate::kg_store::{build_gates, build_universe, RelationGrouping};
            let store = TripleStore::from_str_triples(train, &[], test).unwrap();
            let grouping = RelationGrouping::from_labels(&store, &["ga".into()], &["gb".into()]).unwrap();
            let ua = build_universe(&store, &grouping, Group::A, None).unwrap();
            let ub = build_universe(&store, &grouping, Group::B, None).unwrap();
            let table = EmbeddingTable::new(
                1,
                vec![1.0; store.num_entities()],
                vec![0.0; store.num_relations()],
            )
            .unwrap();
            Self {
                gates_a: build_gates(&store, &ua),
                gates_b: build_gates(&store, &ub),
                queries: test_queries(&store),
                table,
                store,
            }
        }

        fn state<'a>(&'a self, head: &'a BiasHead, f_a: &'a ProfileFeatures, f_b: &'a ProfileFeatures) -> GatedState<'a> {
            GatedState {
                store: &self.store,
                table: &self.table,
                head,
                gates_a: &self.gates_a,
                gates_b: &self.gates_b,
                f_a,
                f_b,
                queries: &self.queries,
            }
        }
    }

    fn features(group: Group, values: &[f64]) -> ProfileFeatures {
        ProfileFeatures::from_values(group, values.to_vec(), 0.1, 0.5).unwrap()
    }

    fn unit_head(len_a: usize, len_b: usize) -> BiasHead {
        BiasHead {
            w_a: vec![1.0; len_a],
            w_b: vec![1.0; len_b],
            alpha_a: 1.0,
            alpha_b: 1.0,
        }
    }

    #[test]
    fn boosting_breaks_a_tie_in_favour_of_the_group() {
        // x0 is pushed by group A, x1 and x4 equally by group B: x0 sits at
        // rank 2 among three tied leaders until A is boosted.
        let fx = Fixture::new(
            &[("a0", "ga", "x0"), ("b0", "gb", "x1"), ("b0", "gb", "x4"), ("h0", "r", "z")],
            &[("h0", "r", "x0"), ("h1", "r", "x2"), ("h2", "r", "x3")],
        );
        let head = unit_head(1, 1);
        let (fa, fb) = (features(Group::A, &[0.5]), features(Group::B, &[0.5]));
        let state = fx.state(&head, &fa, &fb);
        let ranks: Vec<usize> = state.ranks_under(&state.bias().unwrap()).unwrap().ranks().collect();
        assert_eq!(ranks, vec![2, 7, 7]);

        let cr = counterfactual_responsiveness(&state, Group::A, 0.1).unwrap().unwrap();
        assert_eq!((cr.cr, cr.pct_improved, cr.n_in, cr.n_out), (-1.0, 1.0, 1, 2));
        let cr0 = counterfactual_responsiveness(&state, Group::A, 0.0).unwrap().unwrap();
        assert_eq!((cr0.cr, cr0.pct_improved), (0.0, 0.0));
        // no test tail is pushed by group B
        assert!(counterfactual_responsiveness(&state, Group::B, 0.1).unwrap().is_none());
        assert!(counterfactual_responsiveness(&state, Group::A, -0.1).is_err());
    }

    /// Attributes a0..a4 each gate two items; b0 gates x9, which sorts first.
    fn placebo_fixture() -> Fixture {
        let mut train = vec![("b0", "gb", "x9")];
        let items = ["x0", "x1", "x2", "x3", "x4", "x5", "x6", "x7", "x8"];
        let attrs = ["a0", "a1", "a2", "a3", "a4"];
        for (i, x) in items.iter().enumerate() {
            train.push((attrs[i % 5], "ga", x));
        }
        train.push(("a4", "ga", "x9"));
        Fixture::new(&train, &[("q0", "r", "x3"), ("q1", "r", "x7"), ("q2", "r", "x8")])
    }

    fn permutations(values: &[f64]) -> Vec<Vec<f64>> {
        if values.len() <= 1 {
            return vec![values.to_vec()];
        }
        let mut out = Vec::new();
        for i in 0..values.len() {
            let mut rest = values.to_vec();
            let first = rest.remove(i);
            for mut tail in permutations(&rest) {
                tail.insert(0, first);
                out.push(tail);
            }
        }
        out
    }

    #[test]
    fn placebo_dominant_feature_beats_shuffles() {
        let fx = placebo_fixture();
        let ua_len = fx.gates_a.n_cols();
        assert_eq!(ua_len, 5);
        let x0 = fx.store.entities().id("x0").unwrap();
        let col_a0 = fx.gates_a.row(x0)[0] as usize;
        let mut real = vec![0.0; ua_len];
        real[col_a0] = 0.5;
        let head = unit_head(ua_len, 1);
        let (fa, fb) = (features(Group::A, &real), features(Group::B, &[0.0]));
        let state = fx.state(&head, &fa, &fb);
        let mask = aligned_set(&state.bias().unwrap(), 70).unwrap();
        let labels: Vec<&str> = mask.members().iter().map(|&e| fx.store.entities().label(e).unwrap()).collect();
        assert_eq!(labels, vec!["x0", "x5"]);

        let alignment = |f: &ProfileFeatures| {
            let b = state.bias_with(f, &fb).unwrap();
            alignment_at_k(&fx.store, &fx.queries, |q| personalized_scores(&fx.table, &b, q.head, q.relation), &mask, 2)
                .unwrap()
                .mean
        };
        let base = alignment(&features(Group::A, &[0.0; 5]));
        assert_eq!(base, 0.0);
        assert_eq!(alignment(&fa), 1.0);
        // expectation over every permutation: only those fixing a0 align
        let perms = permutations(&real);
        let expected = perms.iter().map(|p| alignment(&features(Group::A, p)) - base).sum::<f64>() / perms.len() as f64;
        assert!((expected - 0.2).abs() < 1e-12);

        let r = placebo_validation(&state, 20, 0, 2, 70).unwrap();
        assert_eq!(r.real_delta, 1.0);
        assert!(r.shuffled_deltas.iter().all(|d| *d == 0.0 || *d == 1.0));
        assert!(r.ratio.unwrap() > 3.0, "{r:?}");
    }

    #[test]
    fn placebo_constant_features_give_unit_ratio() {
        let fx = placebo_fixture();
        let head = unit_head(5, 1);
        let (fa, fb) = (features(Group::A, &[0.3; 5]), features(Group::B, &[0.2]));
        let state = fx.state(&head, &fa, &fb);
        let r = placebo_validation(&state, 20, 7, 2, 70).unwrap();
        assert!(r.real_delta > 0.0);
        assert!(r.shuffled_deltas.iter().all(|d| *d == r.real_delta));
        assert_eq!(r.ratio, Some(1.0));
        assert!(placebo_validation(&state, 0, 7, 2, 70).is_err());
    }

    proptest! {
        #[test]
        fn constant_shift_keeps_ranks(
            scores in proptest::collection::vec(-100i32..100, 2..40),
            c in prop::sample::select(vec![-5.0, 0.3, 10.0]),
            true_pick in any::<prop::sample::Index>(),
        ) {
            // quarter-integer grid so shifts by c are exact
            let scores: Vec<f64> = scores.iter().map(|&s| s as f64 / 4.0).collect();
            let t = true_pick.index(scores.len()) as EntityId;
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            prop_assert_eq!(filtered_rank(&scores, t, &[]).unwrap(), filtered_rank(&shifted, t, &[]).unwrap());
        }

        #[test]
        fn filtering_never_hurts(
            scores in proptest::collection::vec(-50i32..50, 3..30),
            pick in any::<prop::sample::Index>(),
            drop in any::<prop::sample::Index>(),
        ) {
            let scores: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
            let t = pick.index(scores.len()) as EntityId;
            let d = drop.index(scores.len()) as EntityId;
            prop_assume!(d != t);
            prop_assert!(filtered_rank(&scores, t, &[d]).unwrap() <= filtered_rank(&scores, t, &[]).unwrap());
        }

        #[test]
        fn metric_bounds(ranks in proptest::collection::vec(1usize..60, 1..50)) {
            let q = Query { head: 0, relation: 0, true_tail: 0 };
            let table = RankTable { entries: ranks.iter().map(|&rank| RankEntry { query: q, rank }).collect() };
            let ks = [1, 3, 10, 20];
            let m = ranking_metrics(&table, &ks).unwrap();
            prop_assert!((0.0..=1.0).contains(&m.mrr));
            let mut prev = 0.0;
            for k in ks {
                let (h, g) = (m.hits[&k], m.ndcg[&k]);
                prop_assert!((0.0..=1.0).contains(&h) && (0.0..=1.0).contains(&g));
                prop_assert!(h >= prev);
                prev = h;
                prop_assert!(g >= h / ((k + 1) as f64).log2() - 1e-12);
            }
        }

        #[test]
        fn aligned_set_shrinks_with_percentile(
            a in proptest::collection::vec(-2.0f64..2.0, 1..40),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<f64> = a.iter().map(|_| rng.gen_range(-2.0..2.0)).collect();
            let bv = bias(&a, &b);
            let mut prev = usize::MAX;
            for p in [10, 30, 60, 70, 80, 95, 100] {
                let s = aligned_set(&bv, p).unwrap();
                prop_assert!(s.len() <= prev);
                prev = s.len();
                for t in s.members() {
                    let t = t as usize;
                    prop_assert!(a[t].max(b[t]) > 0.0);
                    prop_assert!((a[t] - b[t]).abs() >= s.threshold().unwrap());
                }
            }
        }
    }
}
