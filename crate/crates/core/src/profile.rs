//! Profile features from interaction logs.
//!
//! Three stages: per-user attribute frequencies over the user's history,
//! a sum over a user population, then `clip(scale * w, 0, cap)`. An item's
//! attributes are read from the group's gate matrix, so profiles only see
//! training structure.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tracing::warn;

use crate::error::{Error, Result};
use crate::kg_store::{EntityId, GateMatrix, Group, TripleStore};

/// User label -> set of interacted item entity ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionLog {
    histories: BTreeMap<String, BTreeSet<EntityId>>,
}

impl InteractionLog {
    /// Builds a log, dropping users without interactions.
    pub fn new(histories: BTreeMap<String, BTreeSet<EntityId>>) -> Self {
        let before = histories.len();
        let histories: BTreeMap<_, _> = histories.into_iter().filter(|(_, h)| !h.is_empty()).collect();
        if histories.len() < before {
            warn!(dropped = before - histories.len(), "dropped users with empty histories");
        }
        Self { histories }
    }

    /// Users in ascending label order.
    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.histories.keys().map(String::as_str)
    }

    pub fn num_users(&self) -> usize {
        self.histories.len()
    }

    pub fn history(&self, user: &str) -> Option<&BTreeSet<EntityId>> {
        self.histories.get(user)
    }
}

/// Reads `user<TAB>item` lines; items are resolved through the store's
/// entity vocabulary and unknown items are skipped with a warning.
pub fn load_interactions(path: &Path, store: &TripleStore) -> Result<InteractionLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut histories: BTreeMap<String, BTreeSet<EntityId>> = BTreeMap::new();
    let mut unknown = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected user<TAB>item, found {} fields", fields.len()),
            });
        }
        let entry = histories.entry(fields[0].to_owned()).or_default();
        match store.entities().id(fields[1]) {
            Some(item) => {
                entry.insert(item);
            }
            None => unknown += 1,
        }
    }
    if unknown > 0 {
        warn!(unknown, "interactions with items outside the entity vocabulary were skipped");
    }
    Ok(InteractionLog::new(histories))
}

/// Stage 1: `p_u(a) = |{i in I_u : a in attr(i)}| / |I_u|`, dense over the
/// universe columns.
pub fn user_preference(log: &InteractionLog, user: &str, gates: &GateMatrix) -> Result<Vec<f64>> {
    let history = log
        .history(user)
        .ok_or_else(|| Error::Index(format!("unknown user {user}")))?;
    let mut counts = vec![0usize; gates.n_cols()];
    for &item in history {
        if (item as usize) >= gates.n_rows() {
            return Err(Error::Index(format!("item {item} outside gate matrix")));
        }
        for &c in gates.row(item) {
            counts[c as usize] += 1;
        }
    }
    let n = history.len() as f64;
    Ok(counts.into_iter().map(|c| c as f64 / n).collect())
}

/// Stage 2: `w(a) = sum_u p_u(a)` over `users`, summed in ascending user
/// order whatever order the caller passes.
pub fn aggregate_population(log: &InteractionLog, gates: &GateMatrix, users: &[&str]) -> Result<Vec<f64>> {
    let mut sorted: Vec<&str> = users.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let mut total = vec![0.0; gates.n_cols()];
    for user in sorted {
        let p = user_preference(log, user, gates)?;
        for (acc, x) in total.iter_mut().zip(p) {
            *acc += x;
        }
    }
    Ok(total)
}

/// Non-negative per-attribute preference vector for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileFeatures {
    group: Group,
    values: Vec<f64>,
    scale_alpha: f64,
    cap_tau: f64,
}

impl ProfileFeatures {
    /// Raw constructor; values must lie in `[0, cap_tau]`.
    pub fn from_values(group: Group, values: Vec<f64>, scale_alpha: f64, cap_tau: f64) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && **v <= cap_tau)) {
            return Err(Error::Config(format!("feature value {v} outside [0, {cap_tau}]")));
        }
        Ok(Self {
            group,
            values,
            scale_alpha,
            cap_tau,
        })
    }

    pub fn zeros(group: Group, len: usize) -> Self {
        Self {
            group,
            values: vec![0.0; len],
            scale_alpha: 1.0,
            cap_tau: 1.0,
        }
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scale_alpha(&self) -> f64 {
        self.scale_alpha
    }

    pub fn cap_tau(&self) -> f64 {
        self.cap_tau
    }

    /// Multiplies every value by `factor`. Used for counterfactual boosts,
    /// which are allowed to exceed the cap.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            group: self.group,
            values: self.values.iter().map(|v| v * factor).collect(),
            scale_alpha: self.scale_alpha,
            cap_tau: self.cap_tau * factor.max(1.0),
        }
    }
}

/// Stage 3: `f[j] = min(max(scale_alpha * w[j], 0), cap_tau)`.
pub fn normalize_features(
    w: &[f64],
    scale_alpha: f64,
    cap_tau: f64,
    group: Group,
    universe_len: usize,
) -> Result<ProfileFeatures> {
    if !(scale_alpha > 0.0 && scale_alpha.is_finite()) || !(cap_tau > 0.0 && cap_tau.is_finite()) {
        return Err(Error::Config(format!(
            "scale_alpha ({scale_alpha}) and cap_tau ({cap_tau}) must be positive and finite"
        )));
    }
    if w.len() != universe_len {
        return Err(Error::Dimension(format!(
            "aggregate has length {}, universe has {universe_len}",
            w.len()
        )));
    }
    if let Some(x) = w.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("aggregate preference {x}")));
    }
    let values = w.iter().map(|&x| (scale_alpha * x).max(0.0).min(cap_tau)).collect();
    Ok(ProfileFeatures {
        group,
        values,
        scale_alpha,
        cap_tau,
    })
}

/// Fisher-Yates permutation of the feature values, seeded.
pub fn shuffle_features(f: &ProfileFeatures, seed: u64) -> ProfileFeatures {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = f.values.clone();
    values.shuffle(&mut rng);
    ProfileFeatures {
        values,
        ..f.clone()
    }
}

/// Runs all three stages for one group over `users` (every user when `None`).
pub fn build_profile(
    log: &InteractionLog,
    gates: &GateMatrix,
    users: Option<&[&str]>,
    scale_alpha: f64,
    cap_tau: f64,
) -> Result<ProfileFeatures> {
    let all: Vec<&str>;
    let users = match users {
        Some(u) => u,
        None => {
            all = log.users().collect();
            &all
        }
    };
    let w = aggregate_population(log, gates, users)?;
    normalize_features(&w, scale_alpha, cap_tau, gates.group(), gates.n_cols())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // items 0..4; columns: g1 = 0, g2 = 1
    fn gates() -> GateMatrix {
        GateMatrix::from_rows(Group::A, 2, &[vec![0], vec![0], vec![1], vec![], vec![0, 1]]).unwrap()
    }

    fn log(rows: &[(&str, &[EntityId])]) -> InteractionLog {
        InteractionLog::new(
            rows.iter()
                .map(|(u, items)| (u.to_string(), items.iter().copied().collect()))
                .collect(),
        )
    }

    #[test]
    fn shared_attribute_frequency_is_one() {
        let l = log(&[("u", &[0, 1])]);
        assert_eq!(user_preference(&l, "u", &gates()).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn item_without_attributes_gives_zero() {
        let l = log(&[("u", &[3])]);
        assert_eq!(user_preference(&l, "u", &gates()).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn split_attributes_give_half() {
        let l = log(&[("u", &[0, 2])]);
        assert_eq!(user_preference(&l, "u", &gates()).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn unknown_user_is_error() {
        let l = log(&[("u", &[0])]);
        assert!(matches!(user_preference(&l, "v", &gates()), Err(Error::Index(_))));
    }

    #[test]
    fn empty_users_are_dropped() {
        let l = log(&[("u", &[0]), ("v", &[])]);
        assert_eq!(l.num_users(), 1);
    }

    #[test]
    fn aggregation_is_additive() {
        let l = log(&[("u", &[0, 1]), ("v", &[0, 1])]);
        let g = gates();
        assert_eq!(aggregate_population(&l, &g, &["u", "v"]).unwrap(), vec![2.0, 0.0]);
        assert_eq!(
            aggregate_population(&l, &g, &["u"]).unwrap(),
            user_preference(&l, "u", &g).unwrap()
        );
        assert_eq!(aggregate_population(&l, &g, &[]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn five_user_fixture_matches_loop() {
        let l = log(&[
            ("u1", &[0, 2, 4]),
            ("u2", &[1]),
            ("u3", &[3, 4]),
            ("u4", &[2]),
            ("u5", &[0, 1, 2, 3]),
        ]);
        let g = gates();
        // hand counts per user (col0, col1):
        // u1: items 0,2,4 -> col0 {0,4}=2/3, col1 {2,4}=2/3
        // u2: 1 -> 1, 0
        // u3: 3,4 -> 1/2, 1/2
        // u4: 2 -> 0, 1
        // u5: 0,1,2,3 -> 2/4, 1/4
        let expect = [2.0 / 3.0 + 1.0 + 0.5 + 0.0 + 0.5, 2.0 / 3.0 + 0.0 + 0.5 + 1.0 + 0.25];
        let got = aggregate_population(&l, &g, &["u5", "u3", "u1", "u4", "u2"]).unwrap();
        for (a, b) in got.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_with_default_constants() {
        let f = normalize_features(&[10.0, 2.0, 0.0], 0.1, 0.5, Group::A, 3).unwrap();
        assert_eq!(f.values()[0], 0.5);
        assert!((f.values()[1] - 0.2).abs() < 1e-15);
        assert_eq!(f.values()[2], 0.0);
        let f = normalize_features(&[-1.0], 0.1, 0.5, Group::A, 1).unwrap();
        assert_eq!(f.values(), &[0.0]);
        let f = normalize_features(&[0.0; 4], 0.1, 0.5, Group::A, 4).unwrap();
        assert_eq!(f.values(), &[0.0; 4]);
    }

    #[test]
    fn normalization_rejects_bad_input() {
        assert!(matches!(
            normalize_features(&[f64::NAN], 0.1, 0.5, Group::A, 1),
            Err(Error::NonFinite(_))
        ));
        assert!(normalize_features(&[1.0], 0.0, 0.5, Group::A, 1).is_err());
        assert!(normalize_features(&[1.0], 0.1, -1.0, Group::A, 1).is_err());
        assert!(normalize_features(&[1.0], 0.1, 0.5, Group::A, 2).is_err());
    }

    #[test]
    fn shuffle_contracts() {
        let one = ProfileFeatures::from_values(Group::A, vec![0.3], 0.1, 0.5).unwrap();
        assert_eq!(shuffle_features(&one, 9), one);
        let f = ProfileFeatures::from_values(Group::B, vec![0.1, 0.2, 0.3, 0.4, 0.5], 0.1, 0.5).unwrap();
        let s1 = shuffle_features(&f, 42);
        let s2 = shuffle_features(&f, 42);
        assert_eq!(s1, s2);
        let mut sorted = s1.values().to_vec();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, f.values());
    }

    #[test]
    fn loads_interaction_file() {
        let store = TripleStore::from_str_triples(&[("g", "genre", "b1"), ("g", "genre", "b2")], &[], &[]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("inter.tsv");
        fs::write(&p, "u1\tb1\nu1\tb1\nu1\tb2\nu2\tnope\nu3\tb2\n").unwrap();
        let l = load_interactions(&p, &store).unwrap();
        assert_eq!(l.num_users(), 2);
        assert_eq!(l.history("u1").unwrap().len(), 2);
        fs::write(&p, "u1\tb1\textra\n").unwrap();
        assert!(matches!(load_interactions(&p, &store), Err(Error::Parse { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn normalized_values_stay_in_range(
            w in proptest::collection::vec(-100.0f64..100.0, 0..30),
            alpha in 0.001f64..5.0,
            tau in 0.001f64..5.0,
        ) {
            let f = normalize_features(&w, alpha, tau, Group::A, w.len()).unwrap();
            prop_assert!(f.values().iter().all(|&v| (0.0..=tau).contains(&v)));
        }

        #[test]
        fn preference_has_history_denominator(items in proptest::collection::btree_set(0u32..5, 1..5)) {
            let l = InteractionLog::new([("u".to_string(), items.clone())].into_iter().collect());
            let p = user_preference(&l, "u", &gates()).unwrap();
            let n = items.len() as f64;
            for v in p {
                prop_assert!((0.0..=1.0).contains(&v));
                let k = v * n;
                prop_assert!((k - k.round()).abs() < 1e-12);
            }
        }

        #[test]
        fn aggregation_ignores_user_order(perm_seed in any::<u64>()) {
            let l = log(&[("a", &[0, 1]), ("b", &[2]), ("c", &[4, 3]), ("d", &[1, 2, 3])]);
            let mut users = vec!["a", "b", "c", "d"];
            users.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
            let g = gates();
            prop_assert_eq!(
                aggregate_population(&l, &g, &users).unwrap(),
                aggregate_population(&l, &g, &["a", "b", "c", "d"]).unwrap()
            );
            // additive over disjoint user sets
            let ab = aggregate_population(&l, &g, &["a", "b"]).unwrap();
            let cd = aggregate_population(&l, &g, &["c", "d"]).unwrap();
            let all = aggregate_population(&l, &g, &users).unwrap();
            for j in 0..2 {
                prop_assert!((ab[j] + cd[j] - all[j]).abs() < 1e-12);
            }
        }
    }
}
