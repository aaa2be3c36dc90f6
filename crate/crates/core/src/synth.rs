//! Synthetic knowledge graphs with a planted preference signal.
//!
//! Items carry one genre (group A, relation `genre_of`) and, for a fraction
//! of items, one publisher (group B, relation `publisher_of`). A small set of
//! genres is planted: profiled users draw each history item from the planted
//! genres with probability `preference_skew`. The KG interaction relation
//! comes from a separate cohort of members whose histories lean toward the
//! same planted genres with a fixed `member_skew`, so held-out interaction
//! tails mix planted and non-planted items whatever the user skew is.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg_store::{GroupingFile, LabeledTriple};

pub const GENRE_RELATION: &str = "genre_of";
pub const PUBLISHER_RELATION: &str = "publisher_of";
pub const INTERACTION_RELATION: &str = "interacts";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub n_items: usize,
    pub n_attrs_per_group: usize,
    pub n_users: usize,
    pub preference_skew: f64,
    pub seed: u64,
    pub history_len: usize,
    pub n_planted: usize,
    pub publisher_coverage: f64,
    pub n_members: usize,
    pub member_history: usize,
    pub member_skew: f64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_items: 200,
            n_attrs_per_group: 10,
            n_users: 100,
            preference_skew: 1.0,
            seed: 0,
            history_len: 20,
            n_planted: 2,
            publisher_coverage: 0.5,
            n_members: 60,
            member_history: 15,
            member_skew: 0.5,
            valid_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic params: {m}")));
        if self.n_items == 0 {
            return bad("n_items must be positive");
        }
        if self.n_attrs_per_group == 0 || self.n_users == 0 || self.n_members == 0 {
            return bad("n_attrs_per_group, n_users and n_members must be positive");
        }
        if self.history_len == 0 || self.member_history == 0 {
            return bad("history lengths must be positive");
        }
        if self.n_planted == 0 || self.n_planted > self.n_attrs_per_group {
            return bad("n_planted must lie in 1..=n_attrs_per_group");
        }
        for (name, v) in [
            ("preference_skew", self.preference_skew),
            ("member_skew", self.member_skew),
            ("publisher_coverage", self.publisher_coverage),
            ("valid_fraction", self.valid_fraction),
            ("test_fraction", self.test_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} = {v} outside [0, 1]"));
            }
        }
        if self.valid_fraction + self.test_fraction >= 1.0 {
            return bad("valid_fraction + test_fraction must be below 1");
        }
        Ok(())
    }
}

/// Ground truth written next to the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthManifest {
    pub params: SynthParams,
    pub preference_relation: String,
    pub metadata_relation: String,
    pub interaction_relation: String,
    pub planted_attributes: Vec<String>,
    pub n_planted_items: usize,
    pub n_published_items: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: Vec<LabeledTriple>,
    pub valid: Vec<LabeledTriple>,
    pub test: Vec<LabeledTriple>,
    pub interactions: Vec<(String, String)>,
    pub grouping: GroupingFile,
    pub manifest: SynthManifest,
}

fn item(i: usize) -> String {
    format!("item_{i}")
}

fn triple(h: String, r: &str, t: String) -> LabeledTriple {
    (h, r.to_string(), t)
}

/// Distinct items; each draw comes from `planted` with probability `skew`,
/// otherwise uniformly from all items.
fn draw_history(rng: &mut ChaCha8Rng, len: usize, skew: f64, planted: &[usize], n_items: usize) -> BTreeSet<usize> {
    let len = if skew >= 1.0 {
        len.min(planted.len())
    } else {
        len.min(n_items)
    };
    let mut out = BTreeSet::new();
    while out.len() < len {
        let i = if rng.gen_bool(skew) {
            *planted.choose(rng).expect("planted items are non-empty")
        } else {
            rng.gen_range(0..n_items)
        };
        out.insert(i);
    }
    out
}

pub fn generate(params: &SynthParams) -> Result<SynthData> {
    params.validate()?;
    let p = params;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    let mut genre: Vec<usize> = (0..p.n_items).map(|i| i % p.n_attrs_per_group).collect();
    genre.shuffle(&mut rng);
    let publisher: Vec<Option<usize>> = (0..p.n_items)
        .map(|_| rng.gen_bool(p.publisher_coverage).then(|| rng.gen_range(0..p.n_attrs_per_group)))
        .collect();

    let used: Vec<usize> = genre.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut planted: Vec<usize> = used
        .choose_multiple(&mut rng, p.n_planted.min(used.len()))
        .copied()
        .collect();
    planted.sort_unstable();
    let planted_items: Vec<usize> = (0..p.n_items).filter(|&i| planted.contains(&genre[i])).collect();

    let mut train = Vec::new();
    for i in 0..p.n_items {
        train.push(triple(format!("genre_{}", genre[i]), GENRE_RELATION, item(i)));
        if let Some(pb) = publisher[i] {
            train.push(triple(format!("publisher_{pb}"), PUBLISHER_RELATION, item(i)));
        }
    }

    let mut interactions = Vec::new();
    for u in 0..p.n_users {
        for i in draw_history(&mut rng, p.history_len, p.preference_skew, &planted_items, p.n_items) {
            interactions.push((format!("user_{u}"), item(i)));
        }
    }

    let (mut valid, mut test) = (Vec::new(), Vec::new());
    for m in 0..p.n_members {
        let mut items: Vec<usize> = draw_history(&mut rng, p.member_history, p.member_skew, &planted_items, p.n_items)
            .into_iter()
            .collect();
        items.shuffle(&mut rng);
        let n = items.len();
        let n_test = ((n as f64 * p.test_fraction).round() as usize).min(n - 1);
        let n_valid = ((n as f64 * p.valid_fraction).round() as usize).min(n - 1 - n_test);
        let member = format!("member_{m}");
        for (k, &i) in items.iter().enumerate() {
            let t = triple(member.clone(), INTERACTION_RELATION, item(i));
            if k < n_test {
                test.push(t);
            } else if k < n_test + n_valid {
                valid.push(t);
            } else {
                train.push(t);
            }
        }
    }

    let manifest = SynthManifest {
        params: p.clone(),
        preference_relation: GENRE_RELATION.into(),
        metadata_relation: PUBLISHER_RELATION.into(),
        interaction_relation: INTERACTION_RELATION.into(),
        planted_attributes: planted.iter().map(|g| format!("genre_{g}")).collect(),
        n_planted_items: planted_items.len(),
        n_published_items: publisher.iter().filter(|x| x.is_some()).count(),
    };
    Ok(SynthData {
        train,
        valid,
        test,
        interactions,
        grouping: GroupingFile {
            group_a: vec![GENRE_RELATION.into()],
            group_b: vec![PUBLISHER_RELATION.into()],
        },
        manifest,
    })
}

fn tsv(triples: &[LabeledTriple]) -> String {
    let mut s = String::new();
    for (h, r, t) in triples {
        writeln!(s, "{h}\t{r}\t{t}").unwrap();
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `train.tsv`, `valid.tsv`, `test.tsv`, `interactions.tsv`,
/// `grouping.toml` and `manifest.toml` into `dir`.
pub fn write_dataset(data: &SynthData, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("train.tsv"), &tsv(&data.train))?;
    write(&dir.join("valid.tsv"), &tsv(&data.valid))?;
    write(&dir.join("test.tsv"), &tsv(&data.test))?;
    let mut inter = String::from("# user\titem\n");
    for (u, i) in &data.interactions {
        writeln!(inter, "{u}\t{i}").unwrap();
    }
    write(&dir.join("interactions.tsv"), &inter)?;
    let grouping = toml::to_string(&data.grouping).map_err(|e| Error::Config(e.to_string()))?;
    write(&dir.join("grouping.toml"), &grouping)?;
    let manifest = toml::to_string(&data.manifest).map_err(|e| Error::Config(e.to_string()))?;
    write(&dir.join("manifest.toml"), &manifest)
}

pub fn load_manifest(dir: &Path) -> Result<SynthManifest> {
    let path = dir.join("manifest.toml");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text).map_err(|e| Error::load("synthetic manifest", e.to_string()))
}
