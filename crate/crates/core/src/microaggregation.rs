//! Univariate (individual-ranking) and multivariate fixed-size
//! microaggregation.
//!
//! Both partitioners sort records by some total order and cut the sorted
//! sequence into runs of exactly `k`, except the last run which absorbs the
//! remainder and so holds between `k` and `2k - 1` records. Cluster ids are
//! ranks in the sorted order, which is what the centroid-shift bound is
//! stated against.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::{Column, Dataset};
use crate::error::{Error, Result};
use crate::taxonomy::{MarginalityTable, NodeId, Taxonomy, ValueCounts};

#[derive(Clone, Debug, PartialEq)]
pub enum Centroids {
    Numeric(Vec<f64>),
    Categorical(Vec<NodeId>),
}

impl Centroids {
    pub fn len(&self) -> usize {
        match self {
            Centroids::Numeric(v) => v.len(),
            Centroids::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match self {
            Centroids::Numeric(v) => Some(v),
            Centroids::Categorical(_) => None,
        }
    }
}

/// Partition of one attribute into clusters of consecutive ranked values.
#[derive(Clone, Debug)]
pub struct ClusterPlan {
    pub attribute: String,
    pub k: usize,
    /// Cluster id per record, in original record order.
    pub assignments: Vec<usize>,
    pub sizes: Vec<usize>,
    pub centroids: Centroids,
    /// Record indices in ranked order.
    pub order: Vec<usize>,
}

impl ClusterPlan {
    pub fn cluster_count(&self) -> usize {
        self.sizes.len()
    }

    /// The microaggregated column: every value replaced by its centroid.
    pub fn microaggregated(&self) -> Column {
        match &self.centroids {
            Centroids::Numeric(c) => {
                Column::Numeric(self.assignments.iter().map(|&g| c[g]).collect())
            }
            Centroids::Categorical(c) => {
                Column::Categorical(self.assignments.iter().map(|&g| c[g]).collect())
            }
        }
    }

    /// Members of each cluster, in ranked order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for &r in &self.order {
            out[self.assignments[r]].push(r);
        }
        out
    }

    pub fn summary(&self, taxonomy: Option<&Taxonomy>) -> PlanSummary {
        let centroids = match &self.centroids {
            Centroids::Numeric(c) => c.iter().map(|v| serde_json::json!(v)).collect(),
            Centroids::Categorical(c) => c
                .iter()
                .map(|&id| match taxonomy {
                    Some(t) => serde_json::json!(t.label(id)),
                    None => serde_json::json!(id.index()),
                })
                .collect(),
        };
        PlanSummary {
            attribute: self.attribute.clone(),
            k: self.k,
            cluster_sizes: self.sizes.clone(),
            centroids,
        }
    }
}

/// Diagnostic view of a plan.
#[derive(Clone, Debug, Serialize)]
pub struct PlanSummary {
    pub attribute: String,
    pub k: usize,
    pub cluster_sizes: Vec<usize>,
    pub centroids: Vec<serde_json::Value>,
}

/// Record-level partition shared by every attribute.
#[derive(Clone, Debug)]
pub struct MultivariatePlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub sizes: Vec<usize>,
    /// `centroids[cluster][attribute]`.
    pub centroids: Vec<Vec<f64>>,
    pub order: Vec<usize>,
    pub order_key: &'static str,
}

impl MultivariatePlan {
    pub fn cluster_count(&self) -> usize {
        self.sizes.len()
    }

    pub fn microaggregated_column(&self, attribute: usize) -> Vec<f64> {
        self.assignments
            .iter()
            .map(|&g| self.centroids[g][attribute])
            .collect()
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k < 1 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    Ok(())
}

/// Cuts a ranked sequence into runs of `k`; the last run takes the remainder.
/// Returns per-record cluster ids (indexed by record) and cluster sizes.
pub fn partition_ranked(order: &[usize], k: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = order.len();
    check_k(k, n)?;
    let clusters = n / k;
    let mut assignments = vec![0; n];
    let mut sizes = vec![k; clusters];
    sizes[clusters - 1] = n - (clusters - 1) * k;
    for (rank, &record) in order.iter().enumerate() {
        assignments[record] = (rank / k).min(clusters - 1);
    }
    Ok((assignments, sizes))
}

/// Running mean; exact when all inputs are equal.
fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut m = 0.0;
    for (i, x) in values.enumerate() {
        m += (x - m) / (i + 1) as f64;
    }
    m
}

fn numeric_centroids(column: &[f64], order: &[usize], sizes: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        out.push(mean(order[start..start + s].iter().map(|&r| column[r])));
        start += s;
    }
    out
}

/// Stable ranking by value, original index breaking ties.
fn rank_numeric(column: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..column.len()).collect();
    order.sort_by(|&a, &b| column[a].total_cmp(&column[b]).then(a.cmp(&b)));
    order
}

pub fn individual_ranking_numeric(
    attribute: &str,
    column: &[f64],
    k: usize,
) -> Result<ClusterPlan> {
    let order = rank_numeric(column);
    let (assignments, sizes) = partition_ranked(&order, k)?;
    let centroids = numeric_centroids(column, &order, &sizes);
    Ok(ClusterPlan {
        attribute: attribute.to_string(),
        k,
        assignments,
        sizes,
        centroids: Centroids::Numeric(centroids),
        order,
    })
}

/// Rank of each distinct value: distance to the most marginal value,
/// ascending, with label order breaking ties. The most marginal value is the
/// one with the largest marginality against the whole value multiset (ties
/// again by label).
pub fn categorical_order_key(
    taxonomy: &Taxonomy,
    values: &[NodeId],
) -> Result<BTreeMap<NodeId, usize>> {
    if values.is_empty() {
        return Err(Error::Empty("categorical value set"));
    }
    let counts = ValueCounts::from_ids(values);
    let table = MarginalityTable::new(taxonomy, &counts, counts.distinct());
    let most_marginal = table.argmax(taxonomy);
    let mut distinct: Vec<(NodeId, f64)> = counts
        .distinct()
        .map(|v| (v, taxonomy.distance(v, most_marginal)))
        .collect();
    distinct.sort_by(|a, b| {
        a.1.total_cmp(&b.1)
            .then_with(|| taxonomy.cmp_labels(a.0, b.0))
    });
    Ok(distinct
        .into_iter()
        .enumerate()
        .map(|(rank, (v, _))| (v, rank))
        .collect())
}

/// Label-level view of [`categorical_order_key`]: distinct labels in rank order.
pub fn categorical_order(taxonomy: &Taxonomy, labels: &[&str]) -> Result<Vec<String>> {
    let ids = labels
        .iter()
        .map(|l| taxonomy.id(l))
        .collect::<Result<Vec<_>>>()?;
    let key = categorical_order_key(taxonomy, &ids)?;
    let mut ranked: Vec<(usize, NodeId)> = key.into_iter().map(|(v, r)| (r, v)).collect();
    ranked.sort();
    Ok(ranked
        .into_iter()
        .map(|(_, v)| taxonomy.label(v).to_string())
        .collect())
}

pub fn individual_ranking_categorical(
    attribute: &str,
    taxonomy: &Taxonomy,
    column: &[NodeId],
    k: usize,
) -> Result<ClusterPlan> {
    check_k(k, column.len())?;
    let key = categorical_order_key(taxonomy, column)?;
    let mut order: Vec<usize> = (0..column.len()).collect();
    order.sort_by_key(|&r| (key[&column[r]], r));
    let (assignments, sizes) = partition_ranked(&order, k)?;
    let mut centroids = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in &sizes {
        let counts: ValueCounts = order[start..start + s].iter().map(|&r| column[r]).collect();
        centroids.push(taxonomy.marginality_centroid(&counts)?);
        start += s;
    }
    Ok(ClusterPlan {
        attribute: attribute.to_string(),
        k,
        assignments,
        sizes,
        centroids: Centroids::Categorical(centroids),
        order,
    })
}

/// Individual ranking on one attribute of a dataset, dispatching on its kind.
pub fn individual_ranking(data: &Dataset, attribute: usize, k: usize) -> Result<ClusterPlan> {
    let schema = &data.schema()[attribute];
    match data.column(attribute) {
        Column::Numeric(values) => individual_ranking_numeric(&schema.name, values, k),
        Column::Categorical(values) => {
            let t = schema.taxonomy().ok_or_else(|| Error::Unsupported {
                attribute: schema.name.clone(),
                reason: "categorical attribute without taxonomy".into(),
            })?;
            individual_ranking_categorical(&schema.name, t, values, k)
        }
    }
}

/// Record-level microaggregation over a data-independent total order: the
/// L1 distance from each record to the lower corner of the domain box, after
/// scaling every attribute by its sensitivity. Ties go to the lower record
/// index.
pub fn multivariate_baseline(data: &Dataset, k: usize) -> Result<MultivariatePlan> {
    check_k(k, data.n())?;
    let mut numeric = Vec::with_capacity(data.m());
    for (attr, col) in data.schema().iter().zip(data.columns()) {
        let (lower, upper) = attr.bounds().ok_or_else(|| Error::Unsupported {
            attribute: attr.name.clone(),
            reason: "multivariate baseline is numeric-only".into(),
        })?;
        let values = col.as_numeric().expect("numeric schema has numeric column");
        numeric.push((values, lower, upper - lower));
    }
    let keys: Vec<f64> = (0..data.n())
        .map(|r| {
            numeric
                .iter()
                .map(|(v, lower, delta)| (v[r] - lower) / delta)
                .sum()
        })
        .collect();
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.sort_by(|&a, &b| match keys[a].total_cmp(&keys[b]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    let (assignments, sizes) = partition_ranked(&order, k)?;
    let mut centroids = vec![Vec::with_capacity(data.m()); sizes.len()];
    for (values, _, _) in &numeric {
        for (g, c) in numeric_centroids(values, &order, &sizes)
            .into_iter()
            .enumerate()
        {
            centroids[g].push(c);
        }
    }
    Ok(MultivariatePlan {
        k,
        assignments,
        sizes,
        centroids,
        order,
        order_key: "normalized L1 distance to the lower domain corner",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AttributeSchema;
    use proptest::prelude::*;

    fn centroids(plan: &ClusterPlan) -> Vec<f64> {
        plan.centroids.as_numeric().unwrap().to_vec()
    }

    /// Sort, cut, average: written independently of the implementation.
    fn brute_force(column: &[f64], k: usize) -> Vec<f64> {
        let mut sorted = column.to_vec();
        sorted.sort_by(f64::total_cmp);
        let clusters = column.len() / k;
        (0..clusters)
            .map(|g| {
                let end = if g + 1 == clusters {
                    column.len()
                } else {
                    (g + 1) * k
                };
                let slice = &sorted[g * k..end];
                slice.iter().sum::<f64>() / slice.len() as f64
            })
            .collect()
    }

    #[test]
    fn four_values_k2() {
        let p = individual_ranking_numeric("x", &[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(p.assignments, vec![0, 0, 1, 1]);
        assert_eq!(centroids(&p), vec![1.5, 3.5]);
        assert_eq!(centroids(&p), brute_force(&[1.0, 2.0, 3.0, 4.0], 2));
    }

    #[test]
    fn remainder_goes_to_last_cluster() {
        let p = individual_ranking_numeric("x", &[5.0, 1.0, 3.0, 2.0, 4.0], 2).unwrap();
        assert_eq!(p.sizes, vec![2, 3]);
        assert_eq!(centroids(&p), vec![1.5, 4.0]);
        assert_eq!(
            p.microaggregated(),
            Column::Numeric(vec![4.0, 1.5, 4.0, 1.5, 4.0])
        );
    }

    #[test]
    fn k1_is_identity() {
        let col = [3.0, -1.0, 7.5, 3.0];
        let p = individual_ranking_numeric("x", &col, 1).unwrap();
        assert_eq!(p.microaggregated(), Column::Numeric(col.to_vec()));
    }

    #[test]
    fn invalid_k() {
        assert!(matches!(
            individual_ranking_numeric("x", &[1.0, 2.0], 3),
            Err(Error::InvalidK { k: 3, n: 2 })
        ));
        assert!(individual_ranking_numeric("x", &[1.0, 2.0], 0).is_err());
        assert!(individual_ranking_numeric("x", &[], 1).is_err());
    }

    fn chain() -> Taxonomy {
        Taxonomy::parse("root\nroot\tx\nroot\ty\nx\ta\ny\tb\n").unwrap()
    }

    #[test]
    fn categorical_order_examples() {
        let t = chain();
        assert_eq!(categorical_order(&t, &["a", "a"]).unwrap(), vec!["a"]);
        // a and b tie on marginality; `a` wins by label and ranks first.
        assert_eq!(categorical_order(&t, &["a", "b"]).unwrap(), vec!["a", "b"]);
        // marginalities: a = b = 1.585, root = 1.474 -> a* = a; δ(root,a)=0.737 < δ(b,a)=0.848
        assert_eq!(
            categorical_order(&t, &["a", "b", "root"]).unwrap(),
            vec!["a", "root", "b"]
        );
        // b more marginal when it is the outlier of the multiset
        assert_eq!(
            categorical_order(&t, &["a", "a", "a", "b"]).unwrap(),
            vec!["b", "a"]
        );
        assert!(categorical_order(&t, &[]).is_err());
        assert!(categorical_order(&t, &["zz"]).is_err());
    }

    #[test]
    fn categorical_ranking_uses_marginality_centroids() {
        let t = chain();
        let col: Vec<NodeId> = ["a", "b", "a", "b"]
            .iter()
            .map(|l| t.id(l).unwrap())
            .collect();
        let p = individual_ranking_categorical("c", &t, &col, 2).unwrap();
        let Centroids::Categorical(c) = &p.centroids else {
            panic!()
        };
        let labels: Vec<&str> = c.iter().map(|&id| t.label(id)).collect();
        assert_eq!(labels, vec!["a", "b"]);
        assert_eq!(p.assignments, vec![0, 1, 0, 1]);
    }

    fn unit_dataset(points: &[(f64, f64)]) -> Dataset {
        Dataset::new(
            vec![
                AttributeSchema::numeric("u", 0.0, 1.0).unwrap(),
                AttributeSchema::numeric("v", 0.0, 1.0).unwrap(),
            ],
            vec![
                Column::Numeric(points.iter().map(|p| p.0).collect()),
                Column::Numeric(points.iter().map(|p| p.1).collect()),
            ],
        )
        .unwrap()
    }

    #[test]
    fn multivariate_order_key_example() {
        let d = unit_dataset(&[(0.0, 0.0), (1.0, 1.0), (0.0, 1.0), (1.0, 0.0)]);
        let p = multivariate_baseline(&d, 2).unwrap();
        assert_eq!(p.order, vec![0, 2, 3, 1]);
        assert_eq!(p.assignments, vec![0, 1, 0, 1]);
        assert_eq!(p.centroids, vec![vec![0.0, 0.5], vec![1.0, 0.5]]);
    }

    #[test]
    fn multivariate_identical_records() {
        let d = unit_dataset(&[(0.25, 0.75); 4]);
        let p = multivariate_baseline(&d, 2).unwrap();
        assert_eq!(p.centroids, vec![vec![0.25, 0.75]; 2]);
    }

    #[test]
    fn multivariate_rejects_categorical() {
        let t = std::sync::Arc::new(chain());
        let d = Dataset::new(
            vec![AttributeSchema::categorical("c", t.clone())],
            vec![Column::Categorical(vec![t.root(); 2])],
        )
        .unwrap();
        assert!(matches!(
            multivariate_baseline(&d, 1),
            Err(Error::Unsupported { .. })
        ));
    }

    proptest! {
        #[test]
        fn cluster_invariants(col in prop::collection::vec(-1e3f64..1e3, 1..80), k_seed in 1usize..20) {
            let k = 1 + k_seed % col.len();
            let p = individual_ranking_numeric("x", &col, k).unwrap();
            let n = col.len();
            prop_assert_eq!(p.sizes.iter().sum::<usize>(), n);
            prop_assert!(p.sizes.iter().all(|&s| s >= k));
            prop_assert!(p.sizes.iter().filter(|&&s| s > k).count() <= 1);
            prop_assert!(p.sizes.iter().all(|&s| s < 2 * k));
            // contiguity: ids non-decreasing along the ranked order
            prop_assert!(p.order.windows(2).all(|w| p.assignments[w[0]] <= p.assignments[w[1]]));
            // agrees with the brute-force sort-and-average
            for (a, b) in centroids(&p).iter().zip(brute_force(&col, k)) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
            // mean preservation
            let Column::Numeric(masked) = p.microaggregated() else { unreachable!() };
            let m0 = col.iter().sum::<f64>() / n as f64;
            let m1 = masked.iter().sum::<f64>() / n as f64;
            prop_assert!((m0 - m1).abs() <= 1e-9 * (1.0 + m0.abs()));
            // idempotence
            let again = individual_ranking_numeric("x", &masked, k).unwrap();
            prop_assert_eq!(centroids(&again), centroids(&p));
        }

        #[test]
        fn single_attribute_baseline_matches_individual_ranking(
            col in prop::collection::vec(0.0f64..100.0, 1..60), k_seed in 1usize..10
        ) {
            let k = 1 + k_seed % col.len();
            let d = Dataset::new(
                vec![AttributeSchema::numeric("x", 0.0, 100.0).unwrap()],
                vec![Column::Numeric(col.clone())],
            ).unwrap();
            let mv = multivariate_baseline(&d, k).unwrap();
            let ir = individual_ranking_numeric("x", &col, k).unwrap();
            prop_assert_eq!(mv.assignments, ir.assignments);
        }
    }
}
