//! DistMult recovers held-out edges of a chain graph whose two relations
//! carry the same links.

use gatedbias::backbone::{train_backbone, BackboneTrainConfig};
use gatedbias::eval::{rank_queries, ranking_metrics, test_queries};
use gatedbias::kg_store::TripleStore;

#[test]
fn parallel_relation_lets_the_scorer_fill_gaps() {
    let n = 50;
    let name = |i: usize| format!("e{i}");
    let mut train = Vec::new();
    let mut test = Vec::new();
    for i in 0..n - 1 {
        let (a, b) = (name(i), name(i + 1));
        train.push((a.clone(), "r2".to_string(), b.clone()));
        train.push((b.clone(), "r2".to_string(), a.clone()));
        train.push((b.clone(), "r1".to_string(), a.clone()));
        if i % 5 == 0 {
            test.push((a, "r1".to_string(), b));
        } else {
            train.push((a, "r1".to_string(), b));
        }
    }
    let store = TripleStore::from_labeled(&train, &[], &test).unwrap();
    let cfg = BackboneTrainConfig {
        dim: 16,
        epochs: 200,
        ..BackboneTrainConfig::default()
    };
    let table = train_backbone(&store, &cfg).unwrap();
    let queries = test_queries(&store);
    assert_eq!(queries.len(), 10);
    let ranks = rank_queries(&store, &queries, |q| table.score_all_tails(q.head, q.relation)).unwrap();
    let m = ranking_metrics(&ranks, &[1, 10]).unwrap();
    assert!(m.mrr >= 0.5, "filtered MRR {}", m.mrr);
}
