use std::collections::BTreeSet;

use irdp_core::taxonomy::Taxonomy;
use proptest::prelude::*;
use proptest::strategy::ValueTree;

/// Random rooted tree: node `i > 0` hangs under some node `< i`.
fn arb_tree(max_nodes: usize) -> impl Strategy<Value = Taxonomy> {
    (2..=max_nodes)
        .prop_flat_map(|n| proptest::collection::vec(any::<prop::sample::Index>(), n - 1))
        .prop_map(|parents| {
            let edges: Vec<(String, String)> = parents
                .iter()
                .enumerate()
                .map(|(i, p)| (format!("n{}", p.index(i + 1)), format!("n{}", i + 1)))
                .collect();
            Taxonomy::from_edges("n0", edges.iter().map(|(a, b)| (a.as_str(), b.as_str()))).unwrap()
        })
}

fn labels(t: &Taxonomy) -> Vec<String> {
    t.nodes().map(|id| t.label(id).to_string()).collect()
}

fn set_distance(t: &Taxonomy, a: &str, b: &str) -> f64 {
    let pa = t.ancestors(a).unwrap();
    let pb = t.ancestors(b).unwrap();
    let union: BTreeSet<_> = pa.union(&pb).collect();
    let inter: BTreeSet<_> = pa.intersection(&pb).collect();
    (1.0 + (union.len() - inter.len()) as f64 / union.len() as f64).log2()
}

#[test]
fn triangle_inequality_over_many_triples() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let mut triples = 0usize;
    let strategy = (arb_tree(25), any::<[prop::sample::Index; 3]>());
    while triples < 5000 {
        let (t, idx) = strategy.new_tree(&mut runner).unwrap().current();
        let l = labels(&t);
        let [a, b, c] = idx.map(|i| l[i.index(l.len())].as_str());
        let ab = t.semantic_distance(a, b).unwrap();
        let bc = t.semantic_distance(b, c).unwrap();
        let ac = t.semantic_distance(a, c).unwrap();
        assert!(ac <= ab + bc + 1e-12, "{a} {b} {c}: {ac} > {ab} + {bc}");
        triples += 1;
    }
}

proptest! {
    #[test]
    fn distance_is_a_bounded_metric(t in arb_tree(30), i in any::<prop::sample::Index>(), j in any::<prop::sample::Index>()) {
        let l = labels(&t);
        let a = &l[i.index(l.len())];
        let b = &l[j.index(l.len())];
        let d = t.semantic_distance(a, b).unwrap();
        prop_assert!((0.0..1.0).contains(&d));
        prop_assert_eq!(d, t.semantic_distance(b, a).unwrap());
        prop_assert_eq!(d == 0.0, a == b);
        prop_assert!((d - set_distance(&t, a, b)).abs() < 1e-12);
    }

    #[test]
    fn marginality_is_order_free(t in arb_tree(20), picks in proptest::collection::vec(any::<prop::sample::Index>(), 1..12), c in any::<prop::sample::Index>()) {
        let l = labels(&t);
        let sample: Vec<&str> = picks.iter().map(|i| l[i.index(l.len())].as_str()).collect();
        let cand = &l[c.index(l.len())];
        let mut reversed = sample.clone();
        reversed.reverse();
        let a = t.marginality_of(&sample, cand).unwrap();
        let b = t.marginality_of(&reversed, cand).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert_eq!(t.marginality_centroid_of(&sample).unwrap(), t.marginality_centroid_of(&reversed).unwrap());
    }

    #[test]
    fn centroid_is_no_more_marginal_than_any_member(t in arb_tree(20), picks in proptest::collection::vec(any::<prop::sample::Index>(), 1..12)) {
        let l = labels(&t);
        let sample: Vec<&str> = picks.iter().map(|i| l[i.index(l.len())].as_str()).collect();
        let centroid = t.marginality_centroid_of(&sample).unwrap();
        let best = t.marginality_of(&sample, centroid).unwrap();
        for v in &sample {
            prop_assert!(best <= t.marginality_of(&sample, v).unwrap() + 1e-12);
        }
        // brute force over the spanned subtree
        let spanned: BTreeSet<&str> = sample.iter().flat_map(|v| t.ancestors(v).unwrap()).collect();
        prop_assert!(spanned.contains(centroid));
        for c in spanned {
            prop_assert!(best <= t.marginality_of(&sample, c).unwrap() + 1e-12);
        }
    }

    #[test]
    fn display_round_trips(t in arb_tree(30)) {
        let again = Taxonomy::parse(&t.to_string()).unwrap();
        prop_assert_eq!(labels(&t).into_iter().collect::<BTreeSet<_>>(), labels(&again).into_iter().collect::<BTreeSet<_>>());
        for l in labels(&t) {
            prop_assert_eq!(t.ancestors(&l).unwrap(), again.ancestors(&l).unwrap());
        }
    }
}

#[test]
fn fixture_taxonomies_load() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let edu = Taxonomy::from_path(dir.join("education.tax")).unwrap();
    assert_eq!(edu.label(edu.root()), "Any");
    assert!(edu.contains("HS-grad"));
    let d = edu.semantic_distance("Bachelors", "Masters").unwrap();
    // siblings at depth 3: union 5, intersection 3
    assert!((d - (1.0f64 + 2.0 / 5.0).log2()).abs() < 1e-15);
}
