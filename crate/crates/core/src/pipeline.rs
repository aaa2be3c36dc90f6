//! End-to-end runs: ingest, backbone, profiles, head training, evaluation
//! and report writing.
//!
//! Per run seed `s`, the backbone trains with `backbone.seed + s`, the head
//! with `head.seed + s`, and the evaluator's permutation test and placebo
//! shuffles draw from streams derived from `s`. Output files:
//!
//! - `config.toml`: the resolved config, re-runnable as is.
//! - `report_<method>.json`: metrics, per-seed values, mean and stderr.
//! - `ranks_<method>.tsv`: one line per (seed, query).
//! - `seed_<s>/backbone.kge` plus `head.json` or `patientnode.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tracing::info;

use crate::backbone::{load_embeddings, save_embeddings, train_backbone, EmbeddingTable};
use crate::bias_head::{
    compute_bias_patientnode, load_head, personalized_scores, save_head, train_head, train_patientnode, BiasHead,
    BiasVector, PatientNodeHead,
};
use crate::config::{Method, PipelineConfig};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::eval::{
    evaluate_personalization, rank_queries, ranking_metrics, summarize, test_queries, GatedState, MetricSummary,
    PersonalizationReport, PersonalizationSettings, Query, RankTable, RankingMetrics,
};
use crate::kg_store::{
    build_gates, build_universe, load_grouping, load_triples, to_hex, AttributeUniverse, GateMatrix, Group,
    RelationGrouping, TripleStore,
};
use crate::profile::{build_profile, load_interactions, InteractionLog, ProfileFeatures};
use crate::synth;

/// Loaded triples plus the optional personalization inputs.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub store: TripleStore,
    pub log: Option<InteractionLog>,
    pub grouping: Option<RelationGrouping>,
}

pub fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    let d = &cfg.data;
    if let Some(params) = &d.synthetic {
        let data = synth::generate(params)?;
        let store = TripleStore::from_labeled(&data.train, &data.valid, &data.test)?;
        let mut histories: BTreeMap<String, BTreeSet<_>> = BTreeMap::new();
        for (u, i) in &data.interactions {
            let id = store
                .entities()
                .id(i)
                .ok_or_else(|| Error::Index(format!("synthetic item {i} missing from the graph")))?;
            histories.entry(u.clone()).or_default().insert(id);
        }
        let grouping = RelationGrouping::from_labels(&store, &data.grouping.group_a, &data.grouping.group_b)?;
        return Ok(Dataset {
            store,
            log: Some(InteractionLog::new(histories)),
            grouping: Some(grouping),
        });
    }
    let dir = d
        .triples_dir
        .as_ref()
        .ok_or_else(|| Error::Config("[data] triples_dir is required".into()))?;
    let store = load_triples(dir)?;
    let log = d
        .interactions_path
        .as_ref()
        .map(|p| load_interactions(p, &store))
        .transpose()?;
    let grouping = d.grouping_path.as_ref().map(|p| load_grouping(p, &store)).transpose()?;
    Ok(Dataset { store, log, grouping })
}

/// Universes, gates and population features for both groups.
#[derive(Debug, Clone)]
pub struct Personalization {
    pub universe_a: AttributeUniverse,
    pub universe_b: AttributeUniverse,
    pub gates_a: GateMatrix,
    pub gates_b: GateMatrix,
    pub f_a: ProfileFeatures,
    pub f_b: ProfileFeatures,
}

pub fn build_personalization(ds: &Dataset, cfg: &PipelineConfig) -> Result<Personalization> {
    let grouping = ds
        .grouping
        .as_ref()
        .ok_or_else(|| Error::Config("gated personalization needs [data] grouping_path".into()))?;
    grouping.ensure_personalizable()?;
    let log = ds
        .log
        .as_ref()
        .ok_or_else(|| Error::Config("gated personalization needs [data] interactions_path".into()))?;
    let cap = cfg.data.universe_cap;
    let universe_a = build_universe(&ds.store, grouping, Group::A, cap)?;
    let universe_b = build_universe(&ds.store, grouping, Group::B, cap)?;
    let gates_a = build_gates(&ds.store, &universe_a);
    let gates_b = build_gates(&ds.store, &universe_b);
    let (alpha, tau) = (cfg.profile.scale_alpha, cfg.profile.cap_tau);
    let f_a = build_profile(log, &gates_a, None, alpha, tau)?;
    let f_b = build_profile(log, &gates_b, None, alpha, tau)?;
    Ok(Personalization {
        universe_a,
        universe_b,
        gates_a,
        gates_b,
        f_a,
        f_b,
    })
}

/// SHA-256 over the ordered test queries.
pub fn query_checksum(queries: &[Query]) -> String {
    let mut h = Sha256::new();
    for q in queries {
        h.update(q.head.to_le_bytes());
        h.update(q.relation.to_le_bytes());
        h.update(q.true_tail.to_le_bytes());
    }
    to_hex(&h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_users: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub universe_a: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub universe_b: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSummary {
    pub alpha_a: f64,
    pub alpha_b: f64,
    pub w_a: Vec<f64>,
    pub w_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub backbone_checksum: String,
    pub metrics: RankingMetrics,
    /// The frozen backbone alone on the same queries.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_metrics: Option<RankingMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head: Option<HeadSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub personalization: Option<PersonalizationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub generated_at: String,
    pub method: Method,
    pub config_toml: String,
    pub dataset: DatasetSummary,
    /// Trainable parameters added on top of the backbone.
    pub parameter_count: usize,
    pub backbone_parameters: usize,
    pub query_checksum: String,
    pub seeds: Vec<SeedReport>,
    pub summary: BTreeMap<String, MetricSummary>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// A trained bias source for one seed.
enum Adapter {
    Base,
    Gated(BiasHead),
    PatientNode(PatientNodeHead),
}

impl Adapter {
    fn parameter_count(&self) -> usize {
        match self {
            Adapter::Base => 0,
            Adapter::Gated(h) => h.num_parameters(),
            Adapter::PatientNode(h) => h.num_parameters(),
        }
    }
}

struct SeedOutcome {
    report: SeedReport,
    ranks: RankTable,
    parameter_count: usize,
}

struct Context<'a> {
    cfg: &'a PipelineConfig,
    ds: &'a Dataset,
    pers: Option<&'a Personalization>,
    queries: &'a [Query],
}

impl Context<'_> {
    fn pers(&self) -> Result<&Personalization> {
        self.pers
            .ok_or_else(|| Error::Config("gated personalization inputs are missing".into()))
    }

    fn obtain_backbone(&self, seed: u64) -> Result<EmbeddingTable> {
        let store = &self.ds.store;
        match &self.cfg.backbone.load {
            Some(path) => load_embeddings(path, Some((store.num_entities(), store.num_relations()))),
            None => {
                let mut bcfg = self.cfg.backbone.train.clone();
                bcfg.seed = bcfg.seed.wrapping_add(seed);
                train_backbone(store, &bcfg)
            }
        }
    }

    fn train_adapter(&self, method: Method, table: &EmbeddingTable, seed: u64) -> Result<Adapter> {
        let mut hcfg = self.cfg.head.clone();
        hcfg.seed = hcfg.seed.wrapping_add(seed);
        Ok(match method {
            Method::Base => Adapter::Base,
            Method::Gatedbias => {
                let p = self.pers()?;
                Adapter::Gated(train_head(
                    &self.ds.store,
                    table,
                    &p.gates_a,
                    &p.gates_b,
                    &p.f_a,
                    &p.f_b,
                    &hcfg,
                )?)
            }
            Method::Patientnode => Adapter::PatientNode(train_patientnode(&self.ds.store, table, &hcfg)?),
        })
    }

    fn rank(&self, table: &EmbeddingTable, bias: Option<&BiasVector>) -> Result<RankTable> {
        match bias {
            None => rank_queries(&self.ds.store, self.queries, |q| table.score_all_tails(q.head, q.relation)),
            Some(b) => rank_queries(&self.ds.store, self.queries, |q| {
                personalized_scores(table, b, q.head, q.relation)
            }),
        }
    }

    fn evaluate(&self, seed: u64, table: &EmbeddingTable, adapter: &Adapter) -> Result<SeedOutcome> {
        let e = &self.cfg.eval;
        let bias = match adapter {
            Adapter::Base => None,
            Adapter::Gated(h) => {
                let p = self.pers()?;
                Some(crate::bias_head::compute_bias(h, &p.gates_a, &p.gates_b, &p.f_a, &p.f_b)?)
            }
            Adapter::PatientNode(h) => Some(compute_bias_patientnode(h, table)?),
        };
        let ranks = self.rank(table, bias.as_ref()).map_err(|e| e.in_stage("eval"))?;
        let metrics = ranking_metrics(&ranks, &e.ks)?;
        let base_metrics = match adapter {
            Adapter::Base => None,
            _ => Some(ranking_metrics(&self.rank(table, None)?, &e.ks)?),
        };
        let (head, personalization) = match adapter {
            Adapter::Gated(h) => {
                let p = self.pers()?;
                let state = GatedState {
                    store: &self.ds.store,
                    table,
                    head: h,
                    gates_a: &p.gates_a,
                    gates_b: &p.gates_b,
                    f_a: &p.f_a,
                    f_b: &p.f_b,
                    queries: self.queries,
                };
                let settings = PersonalizationSettings {
                    k: e.alignment_k,
                    percentile_p: e.percentile_p,
                    epsilon: e.epsilon,
                    n_shuffles: e.n_shuffles,
                    seed: derive_seed(seed, 0xe7a1),
                };
                let summary = HeadSummary {
                    alpha_a: h.alpha_a,
                    alpha_b: h.alpha_b,
                    w_a: h.w_a.clone(),
                    w_b: h.w_b.clone(),
                };
                (Some(summary), Some(evaluate_personalization(&state, &settings)?))
            }
            _ => (None, None),
        };
        Ok(SeedOutcome {
            report: SeedReport {
                seed,
                backbone_checksum: table.checksum(),
                metrics,
                base_metrics,
                head,
                personalization,
            },
            ranks,
            parameter_count: adapter.parameter_count(),
        })
    }

    fn dataset_summary(&self) -> DatasetSummary {
        let s = &self.ds.store;
        DatasetSummary {
            n_entities: s.num_entities(),
            n_relations: s.num_relations(),
            n_train: s.train().len(),
            n_valid: s.valid().len(),
            n_test: s.test().len(),
            n_users: self.ds.log.as_ref().map(|l| l.num_users()),
            universe_a: self.pers.map(|p| p.universe_a.len()),
            universe_b: self.pers.map(|p| p.universe_b.len()),
        }
    }

    fn assemble(&self, method: Method, outcomes: &[SeedOutcome], backbone_parameters: usize) -> RunReport {
        let mut cfg = self.cfg.clone();
        cfg.method = method;
        let mut summary = BTreeMap::new();
        let mut add = |name: String, values: Vec<f64>| {
            if !values.is_empty() {
                summary.insert(name, summarize(&values));
            }
        };
        let seeds: Vec<&SeedReport> = outcomes.iter().map(|o| &o.report).collect();
        add("mrr".into(), seeds.iter().map(|s| s.metrics.mrr).collect());
        for &k in &self.cfg.eval.ks {
            add(format!("hits@{k}"), seeds.iter().map(|s| s.metrics.hits[&k]).collect());
            add(format!("ndcg@{k}"), seeds.iter().map(|s| s.metrics.ndcg[&k]).collect());
        }
        add(
            "base_mrr".into(),
            seeds.iter().filter_map(|s| s.base_metrics.as_ref().map(|m| m.mrr)).collect(),
        );
        let pers: Vec<&PersonalizationReport> = seeds.iter().filter_map(|s| s.personalization.as_ref()).collect();
        add("alignment_base".into(), pers.iter().map(|p| p.alignment.base).collect());
        add("alignment_adapted".into(), pers.iter().map(|p| p.alignment.adapted).collect());
        add("alignment_delta".into(), pers.iter().map(|p| p.alignment.delta).collect());
        add("alignment_p_value".into(), pers.iter().map(|p| p.alignment.p_value).collect());
        add("cr_a".into(), pers.iter().filter_map(|p| p.cr_a.as_ref().map(|c| c.cr)).collect());
        add(
            "cr_a_pct_improved".into(),
            pers.iter().filter_map(|p| p.cr_a.as_ref().map(|c| c.pct_improved)).collect(),
        );
        add("cr_b".into(), pers.iter().filter_map(|p| p.cr_b.as_ref().map(|c| c.cr)).collect());
        add(
            "cr_b_pct_improved".into(),
            pers.iter().filter_map(|p| p.cr_b.as_ref().map(|c| c.pct_improved)).collect(),
        );
        add("placebo_ratio".into(), pers.iter().filter_map(|p| p.placebo.ratio).collect());
        RunReport {
            generated_at: chrono::Utc::now().to_rfc3339(),
            method,
            config_toml: cfg.to_toml(),
            dataset: self.dataset_summary(),
            parameter_count: outcomes.first().map_or(0, |o| o.parameter_count),
            backbone_parameters,
            query_checksum: query_checksum(self.queries),
            seeds: seeds.into_iter().cloned().collect(),
            summary,
        }
    }

    fn ranks_tsv(&self, outcomes: &[SeedOutcome]) -> String {
        let ents = self.ds.store.entities();
        let rels = self.ds.store.relations();
        let mut s = String::from("seed\thead\trelation\ttrue_tail\trank\n");
        for o in outcomes {
            for e in &o.ranks.entries {
                let q = e.query;
                writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{}",
                    o.report.seed,
                    ents.label(q.head).unwrap_or("?"),
                    rels.label(q.relation).unwrap_or("?"),
                    ents.label(q.true_tail).unwrap_or("?"),
                    e.rank
                )
                .unwrap();
            }
        }
        s
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed_{seed}"))
}

fn write_reports(ctx: &Context<'_>, out_dir: &Path, reports: &[(RunReport, String)]) -> Result<()> {
    write_file(&out_dir.join("config.toml"), &ctx.cfg.to_toml())?;
    for (report, ranks) in reports {
        write_file(&out_dir.join(format!("report_{}.json", report.method)), &report.to_json())?;
        write_file(&out_dir.join(format!("ranks_{}.tsv", report.method)), ranks)?;
    }
    Ok(())
}

/// Trains and evaluates each method under identical seeds and queries. The
/// backbone is trained once per seed and shared across methods.
pub fn run_methods(cfg: &PipelineConfig, methods: &[Method], out_dir: Option<&Path>) -> Result<Vec<RunReport>> {
    cfg.validate()?;
    let ds = load_dataset(cfg).map_err(|e| e.in_stage("ingest"))?;
    let needs_profiles = methods.contains(&Method::Gatedbias);
    let pers = if needs_profiles {
        Some(build_personalization(&ds, cfg).map_err(|e| e.in_stage("profile"))?)
    } else {
        None
    };
    let queries = test_queries(&ds.store);
    if queries.is_empty() {
        return Err(Error::Config("the test split is empty".into()).in_stage("eval"));
    }
    let ctx = Context {
        cfg,
        ds: &ds,
        pers: pers.as_ref(),
        queries: &queries,
    };
    info!(
        entities = ds.store.num_entities(),
        queries = queries.len(),
        seeds = cfg.eval.seeds.len(),
        "dataset ready"
    );

    let mut outcomes: Vec<Vec<SeedOutcome>> = methods.iter().map(|_| Vec::new()).collect();
    let mut backbone_parameters = 0;
    for &seed in &cfg.eval.seeds {
        let table = ctx.obtain_backbone(seed).map_err(|e| e.in_stage("backbone"))?;
        backbone_parameters = table.num_parameters();
        let frozen = table.checksum();
        if let Some(dir) = out_dir {
            let d = seed_dir(dir, seed);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e).in_stage("report"))?;
            save_embeddings(&table, &d.join("backbone.kge")).map_err(|e| e.in_stage("backbone"))?;
        }
        for (slot, &method) in outcomes.iter_mut().zip(methods) {
            info!(seed, %method, "training");
            let adapter = ctx.train_adapter(method, &table, seed).map_err(|e| e.in_stage("head"))?;
            if table.checksum() != frozen {
                return Err(Error::Config("backbone parameters changed during head training".into()).in_stage("head"));
            }
            if let Some(dir) = out_dir {
                save_adapter(&ctx, &adapter, &seed_dir(dir, seed)).map_err(|e| e.in_stage("report"))?;
            }
            let outcome = ctx.evaluate(seed, &table, &adapter).map_err(|e| e.in_stage("eval"))?;
            slot.push(outcome);
        }
    }

    let reports: Vec<(RunReport, String)> = methods
        .iter()
        .zip(&outcomes)
        .map(|(&m, o)| (ctx.assemble(m, o, backbone_parameters), ctx.ranks_tsv(o)))
        .collect();
    if let Some(dir) = out_dir {
        write_reports(&ctx, dir, &reports).map_err(|e| e.in_stage("report"))?;
    }
    Ok(reports.into_iter().map(|(r, _)| r).collect())
}

fn save_adapter(ctx: &Context<'_>, adapter: &Adapter, dir: &Path) -> Result<()> {
    match adapter {
        Adapter::Base => Ok(()),
        Adapter::Gated(h) => {
            let p = ctx.pers()?;
            save_head(&dir.join("head.json"), h, &p.universe_a, &p.universe_b, &ctx.cfg.head)
        }
        Adapter::PatientNode(h) => write_file(
            &dir.join("patientnode.json"),
            &serde_json::to_string_pretty(h).expect("MLP serializes"),
        ),
    }
}

/// Runs the configured method and writes its report into `out_dir`.
pub fn cmd_run(cfg: &PipelineConfig, out_dir: &Path) -> Result<RunReport> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut reports = run_methods(cfg, &[cfg.method], Some(out_dir))?;
    Ok(reports.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: Method,
    pub parameter_count: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub query_checksum: String,
    pub backbone_parameters: usize,
    pub rows: Vec<CompareRow>,
}

impl Comparison {
    /// Plain-text side-by-side table.
    pub fn table(&self, ks: &[usize]) -> String {
        let mut cols = vec!["mrr".to_string()];
        cols.extend(ks.iter().map(|k| format!("hits@{k}")));
        if let Some(&k) = ks.iter().max() {
            cols.push(format!("ndcg@{k}"));
        }
        let mut s = format!("{:<12} {:>12}", "method", "params");
        for c in &cols {
            write!(s, " {c:>18}").unwrap();
        }
        s.push('\n');
        for row in &self.rows {
            let params = if row.parameter_count == 0 {
                format!("{}", self.backbone_parameters)
            } else {
                format!("{}+{}", self.backbone_parameters, row.parameter_count)
            };
            write!(s, "{:<12} {:>12}", row.method.as_str(), params).unwrap();
            for c in &cols {
                let m = &row.metrics[c];
                write!(s, " {:>18}", format!("{:.4}±{:.4}", m.mean, m.stderr)).unwrap();
            }
            s.push('\n');
        }
        s
    }
}

/// Runs base, patientnode and gatedbias under identical seeds.
pub fn cmd_compare(cfg: &PipelineConfig, out_dir: &Path) -> Result<Comparison> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let reports = run_methods(cfg, &Method::ALL, Some(out_dir))?;
    let checksum = reports[0].query_checksum.clone();
    if reports.iter().any(|r| r.query_checksum != checksum) {
        return Err(Error::Config("methods were evaluated on different query lists".into()).in_stage("eval"));
    }
    let comparison = Comparison {
        query_checksum: checksum,
        backbone_parameters: reports[0].backbone_parameters,
        rows: reports
            .iter()
            .map(|r| CompareRow {
                method: r.method,
                parameter_count: r.parameter_count,
                metrics: r.summary.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&comparison).expect("comparison serializes");
    write_file(&out_dir.join("compare.json"), &json)?;
    write_file(&out_dir.join("compare.txt"), &comparison.table(&cfg.eval.ks))?;
    Ok(comparison)
}

/// Re-evaluates a finished run from its checkpoints. The `[eval]` section of
/// `cfg` may differ from the one the run used; everything else must match.
pub fn cmd_eval(run_dir: &Path, cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate()?;
    let method = cfg.method;
    let ds = load_dataset(cfg).map_err(|e| e.in_stage("ingest"))?;
    let pers = match method {
        Method::Gatedbias => Some(build_personalization(&ds, cfg).map_err(|e| e.in_stage("profile"))?),
        _ => None,
    };
    let queries = test_queries(&ds.store);
    let ctx = Context {
        cfg,
        ds: &ds,
        pers: pers.as_ref(),
        queries: &queries,
    };
    let mut outcomes = Vec::new();
    let mut backbone_parameters = 0;
    for &seed in &cfg.eval.seeds {
        let dir = seed_dir(run_dir, seed);
        let store = &ds.store;
        let table = load_embeddings(&dir.join("backbone.kge"), Some((store.num_entities(), store.num_relations())))
            .map_err(|e| e.in_stage("backbone"))?;
        backbone_parameters = table.num_parameters();
        let adapter = match method {
            Method::Base => Adapter::Base,
            Method::Gatedbias => {
                let p = ctx.pers()?;
                let (head, _) = load_head(&dir.join("head.json"), &p.universe_a, &p.universe_b)
                    .map_err(|e| e.in_stage("head"))?;
                Adapter::Gated(head)
            }
            Method::Patientnode => {
                let path = dir.join("patientnode.json");
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e).in_stage("head"))?;
                let head: PatientNodeHead = serde_json::from_str(&text)
                    .map_err(|e| Error::load("patientnode checkpoint", e.to_string()).in_stage("head"))?;
                Adapter::PatientNode(head)
            }
        };
        outcomes.push(ctx.evaluate(seed, &table, &adapter).map_err(|e| e.in_stage("eval"))?);
    }
    let report = ctx.assemble(method, &outcomes, backbone_parameters);
    write_file(&run_dir.join(format!("eval_{method}.json")), &report.to_json()).map_err(|e| e.in_stage("report"))?;
    write_file(&run_dir.join(format!("eval_ranks_{method}.tsv")), &ctx.ranks_tsv(&outcomes))
        .map_err(|e| e.in_stage("report"))?;
    Ok(report)
}

/// Generates a synthetic dataset into `dir` and returns its manifest.
pub fn cmd_synth(params: &synth::SynthParams, dir: &Path) -> Result<synth::SynthManifest> {
    let data = synth::generate(params)?;
    synth::write_dataset(&data, dir)?;
    Ok(data.manifest)
}

/// The report JSON with the timestamp line removed, for byte comparisons.
pub fn strip_timestamp(json: &str) -> String {
    json.lines()
        .filter(|l| !l.trim_start().starts_with("\"generated_at\""))
        .collect::<Vec<_>>()
        .join("\n")
}
