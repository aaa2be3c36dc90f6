//! Triple storage, relation grouping and gate construction.
//!
//! Entities and relations are interned into dense ids in first-appearance
//! order (train, then valid, then test). Everything that feeds
//! personalization (attribute universes, gate matrices) reads the training
//! split only, so the held-out splits can never leak into the bias.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::{info, warn};

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Bidirectional label <-> dense id map.
#[derive(Debug, Clone, Default)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// A labeled triple as read from disk, before interning.
pub type LabeledTriple = (String, String, String);

#[derive(Debug, Clone)]
pub struct TripleStore {
    entities: Vocab,
    relations: Vocab,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    known_tails: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    duplicates_dropped: usize,
}

impl TripleStore {
    /// Builds a store from labeled splits.
    ///
    /// Duplicates inside a split are dropped; a triple present in two
    /// different splits is an error.
    pub fn from_labeled(
        train: &[LabeledTriple],
        valid: &[LabeledTriple],
        test: &[LabeledTriple],
    ) -> Result<Self> {
        let mut entities = Vocab::default();
        let mut relations = Vocab::default();
        let mut duplicates_dropped = 0;
        let mut seen: HashMap<Triple, Split> = HashMap::new();

        let mut intern_split = |rows: &[LabeledTriple], split: Split| -> Result<Vec<Triple>> {
            let mut out = Vec::with_capacity(rows.len());
            for (h, r, t) in rows {
                let triple = Triple::new(entities.intern(h), relations.intern(r), entities.intern(t));
                match seen.get(&triple) {
                    Some(&prev) if prev == split => duplicates_dropped += 1,
                    Some(&prev) => {
                        return Err(Error::Config(format!(
                            "triple ({h}, {r}, {t}) appears in both {prev} and {split} splits"
                        )))
                    }
                    None => {
                        seen.insert(triple, split);
                        out.push(triple);
                    }
                }
            }
            Ok(out)
        };

        let train = intern_split(train, Split::Train)?;
        let valid = intern_split(valid, Split::Valid)?;
        let test = intern_split(test, Split::Test)?;

        if train.is_empty() {
            return Err(Error::Config("train split is empty".into()));
        }
        if duplicates_dropped > 0 {
            info!(duplicates_dropped, "dropped duplicate triples within splits");
        }

        let mut known: HashMap<(EntityId, RelationId), BTreeSet<EntityId>> = HashMap::new();
        for t in train.iter().chain(valid.iter()) {
            known.entry((t.head, t.relation)).or_default().insert(t.tail);
        }
        let known_tails = known
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect();

        Ok(Self {
            entities,
            relations,
            train,
            valid,
            test,
            known_tails,
            duplicates_dropped,
        })
    }

    /// Convenience constructor for string-literal fixtures.
    pub fn from_str_triples(
        train: &[(&str, &str, &str)],
        valid: &[(&str, &str, &str)],
        test: &[(&str, &str, &str)],
    ) -> Result<Self> {
        let own = |rows: &[(&str, &str, &str)]| -> Vec<LabeledTriple> {
            rows.iter()
                .map(|(h, r, t)| (h.to_string(), r.to_string(), t.to_string()))
                .collect()
        };
        Self::from_labeled(&own(train), &own(valid), &own(test))
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    pub fn duplicates_dropped(&self) -> usize {
        self.duplicates_dropped
    }

    /// Sorted tails seen with `(head, relation)` in train or valid.
    pub fn known_tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.known_tails
            .get(&(head, relation))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }
}

fn read_tsv(path: &Path) -> Result<Vec<LabeledTriple>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        rows.push((
            fields[0].to_owned(),
            fields[1].to_owned(),
            fields[2].to_owned(),
        ));
    }
    Ok(rows)
}

/// Loads triples from a directory holding `train.tsv`, `valid.tsv` and
/// `test.tsv`, or from a single TSV file treated as the training split.
pub fn load_triples(path: &Path) -> Result<TripleStore> {
    if path.is_dir() {
        let train = read_tsv(&path.join("train.tsv"))?;
        let optional = |name: &str| -> Result<Vec<LabeledTriple>> {
            let p = path.join(name);
            if p.exists() {
                read_tsv(&p)
            } else {
                warn!(path = %p.display(), "split file missing, treating as empty");
                Ok(Vec::new())
            }
        };
        let valid = optional("valid.tsv")?;
        let test = optional("test.tsv")?;
        TripleStore::from_labeled(&train, &valid, &test)
    } else {
        let train = read_tsv(path)?;
        TripleStore::from_labeled(&train, &[], &[])
    }
}

/// One of the two personalization groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    A,
    B,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::A => "A",
            Group::B => "B",
        })
    }
}

/// Relation id -> group assignment; `None` means the relation feeds no gate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationGrouping {
    groups: Vec<Option<Group>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingFile {
    #[serde(default)]
    pub group_a: Vec<String>,
    #[serde(default)]
    pub group_b: Vec<String>,
}

impl RelationGrouping {
    pub fn from_labels(store: &TripleStore, group_a: &[String], group_b: &[String]) -> Result<Self> {
        let mut groups = vec![None; store.num_relations()];
        for (labels, group) in [(group_a, Group::A), (group_b, Group::B)] {
            for label in labels {
                let Some(id) = store.relations().id(label) else {
                    warn!(relation = %label, "grouped relation not present in the triples");
                    continue;
                };
                match groups[id as usize] {
                    Some(prev) if prev != group => {
                        return Err(Error::Config(format!(
                            "relation {label} listed in both group_a and group_b"
                        )))
                    }
                    _ => groups[id as usize] = Some(group),
                }
            }
        }
        Ok(Self { groups })
    }

    pub fn group_of(&self, relation: RelationId) -> Option<Group> {
        self.groups.get(relation as usize).copied().flatten()
    }

    pub fn relations_in(&self, group: Group) -> Vec<RelationId> {
        self.groups
            .iter()
            .enumerate()
            .filter(|(_, g)| **g == Some(group))
            .map(|(i, _)| i as RelationId)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Personalization needs at least one relation in each group.
    pub fn ensure_personalizable(&self) -> Result<()> {
        for g in [Group::A, Group::B] {
            if self.relations_in(g).is_empty() {
                return Err(Error::Config(format!("relation group {g} is empty")));
            }
        }
        Ok(())
    }
}

pub fn load_grouping(path: &Path, store: &TripleStore) -> Result<RelationGrouping> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: GroupingFile = toml::from_str(&text).map_err(|e| Error::Parse {
        path: PathBuf::from(path),
        line: 0,
        message: e.to_string(),
    })?;
    RelationGrouping::from_labels(store, &file.group_a, &file.group_b)
}

/// The attribute entities that can gate a group, in column order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeUniverse {
    group: Group,
    relations: Vec<RelationId>,
    attrs: Vec<EntityId>,
    index: HashMap<EntityId, usize>,
}

impl AttributeUniverse {
    pub fn group(&self) -> Group {
        self.group
    }

    pub fn attrs(&self) -> &[EntityId] {
        &self.attrs
    }

    pub fn relations(&self) -> &[RelationId] {
        &self.relations
    }

    pub fn column(&self, entity: EntityId) -> Option<usize> {
        self.index.get(&entity).copied()
    }

    pub fn len(&self) -> usize {
        self.attrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attrs.is_empty()
    }

    /// Stable fingerprint of (group, relations, attrs), used to pair head
    /// checkpoints with the universe they were trained on.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update([match self.group {
            Group::A => b'A',
            Group::B => b'B',
        }]);
        h.update((self.relations.len() as u64).to_le_bytes());
        for r in &self.relations {
            h.update(r.to_le_bytes());
        }
        h.update((self.attrs.len() as u64).to_le_bytes());
        for a in &self.attrs {
            h.update(a.to_le_bytes());
        }
        to_hex(&h.finalize())
    }
}

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects the attribute universe of `group` from the training split.
///
/// Attributes are ordered by descending number of distinct gated tails, ties
/// by ascending entity id. With `cap = Some(n)` only the first `n` are kept.
pub fn build_universe(
    store: &TripleStore,
    grouping: &RelationGrouping,
    group: Group,
    cap: Option<usize>,
) -> Result<AttributeUniverse> {
    if cap == Some(0) {
        return Err(Error::Config("universe cap must be at least 1".into()));
    }
    let relations = grouping.relations_in(group);
    let mut tails: BTreeMap<EntityId, BTreeSet<EntityId>> = BTreeMap::new();
    for t in store.train() {
        if grouping.group_of(t.relation) == Some(group) {
            tails.entry(t.head).or_default().insert(t.tail);
        }
    }
    if tails.is_empty() {
        warn!(%group, "no training triples for relation group; universe is empty");
    }
    let mut ranked: Vec<(EntityId, usize)> = tails.into_iter().map(|(a, ts)| (a, ts.len())).collect();
    ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    if let Some(cap) = cap {
        ranked.truncate(cap);
    }
    let attrs: Vec<EntityId> = ranked.into_iter().map(|(a, _)| a).collect();
    let index = attrs.iter().enumerate().map(|(i, &a)| (a, i)).collect();
    Ok(AttributeUniverse {
        group,
        relations,
        attrs,
        index,
    })
}

/// Sparse binary |E| x |U| matrix in compressed-row form.
///
/// Row `t` lists, in ascending order, the universe columns whose attribute
/// reaches `t` through a group relation in the training split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateMatrix {
    group: Group,
    n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
}

impl GateMatrix {
    /// Builds a gate matrix directly from per-row column lists.
    pub fn from_rows(group: Group, n_cols: usize, rows: &[Vec<u32>]) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for (t, row) in rows.iter().enumerate() {
            let mut row = row.clone();
            row.sort_unstable();
            row.dedup();
            if let Some(&c) = row.last() {
                if c as usize >= n_cols {
                    return Err(Error::Index(format!(
                        "gate column {c} in row {t} exceeds universe size {n_cols}"
                    )));
                }
            }
            cols.extend_from_slice(&row);
            row_ptr.push(cols.len());
        }
        Ok(Self {
            group,
            n_cols,
            row_ptr,
            cols,
        })
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, entity: EntityId) -> &[u32] {
        let i = entity as usize;
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn has(&self, entity: EntityId, col: usize) -> bool {
        self.row(entity).binary_search(&(col as u32)).is_ok()
    }

    /// Canonical byte encoding (shape, row pointers, columns).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.row_ptr.len() + 4 * self.cols.len());
        out.push(match self.group {
            Group::A => b'A',
            Group::B => b'B',
        });
        out.extend_from_slice(&(self.n_rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.n_cols as u64).to_le_bytes());
        for p in &self.row_ptr {
            out.extend_from_slice(&(*p as u64).to_le_bytes());
        }
        for c in &self.cols {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    fn check(&self) {
        for t in 0..self.n_rows() {
            let row = self.row(t as EntityId);
            assert!(row.windows(2).all(|w| w[0] < w[1]), "gate row {t} not strictly ascending");
            assert!(row.iter().all(|&c| (c as usize) < self.n_cols), "gate row {t} out of range");
        }
    }
}

/// Builds the gate matrix for `universe` from the training split only.
pub fn build_gates(store: &TripleStore, universe: &AttributeUniverse) -> GateMatrix {
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); store.num_entities()];
    for t in store.train() {
        if !universe.relations.contains(&t.relation) {
            continue;
        }
        if let Some(col) = universe.column(t.head) {
            rows[t.tail as usize].push(col as u32);
        }
    }
    let gates = GateMatrix::from_rows(universe.group, universe.len(), &rows)
        .expect("columns come from the universe index");
    gates.check();
    gates
}

#[cfg(test)]
mod tests {
    use super::*;

    fn genre_store(test: &[(&str, &str, &str)]) -> TripleStore {
        TripleStore::from_str_triples(
            &[
                ("g1", "genre", "b1"),
                ("g1", "genre", "b2"),
                ("g2", "genre", "b1"),
                ("p1", "publisher", "b2"),
            ],
            &[],
            test,
        )
        .unwrap()
    }

    fn grouping(store: &TripleStore) -> RelationGrouping {
        RelationGrouping::from_labels(store, &["genre".into()], &["publisher".into()]).unwrap()
    }

    #[test]
    fn minimal_graph() {
        let s = TripleStore::from_str_triples(&[("a", "likes", "b")], &[], &[("a", "likes", "c")]).unwrap();
        assert_eq!(s.num_entities(), 3);
        assert_eq!(s.num_relations(), 1);
        let a = s.entities().id("a").unwrap();
        let b = s.entities().id("b").unwrap();
        assert_eq!(s.known_tails(a, 0), &[b]);
    }

    #[test]
    fn dedups_within_split() {
        let s = TripleStore::from_str_triples(
            &[("a", "r", "b"), ("a", "r", "b"), ("b", "r", "c")],
            &[],
            &[],
        )
        .unwrap();
        assert_eq!(s.train().len(), 2);
        assert_eq!(s.duplicates_dropped(), 1);
    }

    #[test]
    fn cross_split_duplicate_is_error() {
        let err = TripleStore::from_str_triples(&[("a", "r", "b")], &[], &[("a", "r", "b")]);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn empty_train_is_error() {
        assert!(matches!(
            TripleStore::from_str_triples(&[], &[], &[("a", "r", "b")]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn known_tails_cover_train_and_valid_only() {
        let s = TripleStore::from_str_triples(
            &[("a", "r", "b")],
            &[("a", "r", "c")],
            &[("a", "r", "d")],
        )
        .unwrap();
        let id = |l| s.entities().id(l).unwrap();
        assert_eq!(s.known_tails(id("a"), 0), &[id("b"), id("c")]);
    }

    #[test]
    fn ten_line_fixture_matches_hand_count() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("train.tsv"),
            "# comment\nu1\tr1\tv1\nu1\tr1\tv2\nu2\tr2\tv1\nu3\tr1\tv3\n\nu1\tr1\tv1\nv3\tr3\tu2\n",
        )
        .unwrap();
        fs::write(dir.path().join("valid.tsv"), "u2\tr1\tv2\nu3\tr2\tv4\n").unwrap();
        fs::write(dir.path().join("test.tsv"), "u1\tr3\tv4\nu4\tr1\tv1\n").unwrap();
        let s = load_triples(dir.path()).unwrap();
        // entities: u1 v1 v2 u2 u3 v3 v4 u4; relations r1 r2 r3
        assert_eq!(s.num_entities(), 8);
        assert_eq!(s.num_relations(), 3);
        assert_eq!((s.train().len(), s.valid().len(), s.test().len()), (5, 2, 2));
        assert_eq!(s.duplicates_dropped(), 1);
        assert_eq!(s.entities().labels()[..3], ["u1", "v1", "v2"]);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("triples.tsv");
        fs::write(&p, "a\tr\tb\na\tr\n").unwrap();
        match load_triples(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn universe_orders_by_frequency() {
        let s = genre_store(&[]);
        let g = grouping(&s);
        let u = build_universe(&s, &g, Group::A, None).unwrap();
        let id = |l| s.entities().id(l).unwrap();
        assert_eq!(u.attrs(), &[id("g1"), id("g2")]);
        let capped = build_universe(&s, &g, Group::A, Some(1)).unwrap();
        assert_eq!(capped.attrs(), &[id("g1")]);
        assert!(build_universe(&s, &g, Group::A, Some(0)).is_err());
    }

    #[test]
    fn empty_group_gives_empty_universe() {
        let s = genre_store(&[]);
        let g = RelationGrouping::from_labels(&s, &["genre".into()], &["missing".into()]).unwrap();
        let u = build_universe(&s, &g, Group::B, None).unwrap();
        assert!(u.is_empty());
        assert!(g.ensure_personalizable().is_err());
        let gates = build_gates(&s, &u);
        assert_eq!(gates.nnz(), 0);
    }

    #[test]
    fn single_edge_gate() {
        let s = TripleStore::from_str_triples(&[("g1", "genre", "b1"), ("x", "other", "y")], &[], &[]).unwrap();
        let g = RelationGrouping::from_labels(&s, &["genre".into()], &[]).unwrap();
        let u = build_universe(&s, &g, Group::A, None).unwrap();
        let gates = build_gates(&s, &u);
        let b1 = s.entities().id("b1").unwrap();
        assert_eq!(gates.row(b1), &[0]);
        for e in 0..s.num_entities() as u32 {
            if e != b1 {
                assert!(gates.row(e).is_empty());
            }
        }
    }

    #[test]
    fn head_only_entity_gains_no_row() {
        // g1 is only ever a head of a group triple; b1 is both a tail and, via
        // another relation, a head.
        let s = TripleStore::from_str_triples(
            &[("g1", "genre", "b1"), ("b1", "genre", "b2"), ("g1", "other", "b2")],
            &[],
            &[],
        )
        .unwrap();
        let g = RelationGrouping::from_labels(&s, &["genre".into()], &[]).unwrap();
        let u = build_universe(&s, &g, Group::A, None).unwrap();
        let gates = build_gates(&s, &u);
        // brute-force oracle over all train triples
        for e in 0..s.num_entities() as u32 {
            let mut expect: Vec<u32> = s
                .train()
                .iter()
                .filter(|t| t.tail == e && g.group_of(t.relation) == Some(Group::A))
                .filter_map(|t| u.column(t.head).map(|c| c as u32))
                .collect();
            expect.sort_unstable();
            expect.dedup();
            assert_eq!(gates.row(e), expect.as_slice());
        }
        assert!(gates.row(s.entities().id("g1").unwrap()).is_empty());
    }

    #[test]
    fn test_triples_do_not_leak_into_gates() {
        let clean = genre_store(&[]);
        let leaky = genre_store(&[("g2", "genre", "b2")]);
        let gc = build_gates(&clean, &build_universe(&clean, &grouping(&clean), Group::A, None).unwrap());
        let gl = build_gates(&leaky, &build_universe(&leaky, &grouping(&leaky), Group::A, None).unwrap());
        let b2 = clean.entities().id("b2").unwrap();
        assert_eq!(gc.row(b2), gl.row(b2));
        assert_eq!(gc.row(b2), &[0]);
    }

    #[test]
    fn grouping_overlap_rejected() {
        let s = genre_store(&[]);
        assert!(RelationGrouping::from_labels(&s, &["genre".into()], &["genre".into()]).is_err());
    }

    #[test]
    fn grouping_file_parses() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("grouping.toml");
        fs::write(&p, "group_a = [\"genre\"]\ngroup_b = [\"publisher\"]\n").unwrap();
        let s = genre_store(&[]);
        let g = load_grouping(&p, &s).unwrap();
        assert_eq!(g.group_of(s.relations().id("genre").unwrap()), Some(Group::A));
        assert_eq!(g.group_of(s.relations().id("publisher").unwrap()), Some(Group::B));
        fs::write(&p, "group_c = []\n").unwrap();
        assert!(load_grouping(&p, &s).is_err());
    }
}
