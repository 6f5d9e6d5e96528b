//! Brute-force verifiers for the privacy claims.
//!
//! * [`centroid_shift_check`] perturbs one value at a time over a grid and measures
//!   how far the rank-matched centroids move in total.
//! * [`exact_expmech_distribution`] recomputes the exponential mechanism's
//!   selection probabilities from ancestor sets directly, without the
//!   taxonomy's LCA-based distance.
//! * [`exact_dp_ratio`] enumerates every output of the categorical mechanism
//!   on a pair of neighbouring clusters and returns the worst log ratio.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mechanisms::{CandidateScope, NoiseSharing};
use crate::microaggregation::individual_ranking_numeric;
use crate::taxonomy::Taxonomy;

/// Slack on floating comparisons against the centroid-shift bound.
pub const SHIFT_TOLERANCE: f64 = 1e-9;

/// Largest candidate set the exact distribution will enumerate.
pub const MAX_EXACT_CANDIDATES: usize = 1000;

/// Largest number of output tuples [`exact_dp_ratio`] will enumerate.
pub const MAX_EXACT_TUPLES: usize = 2_000_000;

#[derive(Clone, Debug)]
pub struct SensitivityProbe {
    pub column: Vec<f64>,
    pub k: usize,
    pub delta_cap: f64,
    pub grid_points: usize,
    /// Replacement values are clipped to this domain when given.
    pub domain: Option<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShiftReport {
    pub max_shift: f64,
    pub bound: f64,
    pub passed: bool,
    /// `(record index, replacement)` attaining `max_shift`.
    pub worst: Option<(usize, f64)>,
    pub evaluations: usize,
}

fn centroids(column: &[f64], k: usize) -> Result<Vec<f64>> {
    Ok(individual_ranking_numeric("probe", column, k)?
        .centroids
        .as_numeric()
        .expect("numeric plan")
        .to_vec())
}

/// Total centroid movement, clusters matched by rank.
pub fn centroid_shift(before: &[f64], after: &[f64]) -> f64 {
    before.iter().zip(after).map(|(a, b)| (a - b).abs()).sum()
}

pub fn centroid_shift_check(probe: &SensitivityProbe) -> Result<ShiftReport> {
    let n = probe.column.len();
    if probe.k < 1 || probe.k > n {
        return Err(Error::InvalidK { k: probe.k, n });
    }
    if probe.grid_points < 3 {
        return Err(Error::InvalidParameter(
            "grid needs at least 3 points".into(),
        ));
    }
    if !(probe.delta_cap.is_finite() && probe.delta_cap >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta cap {}",
            probe.delta_cap
        )));
    }
    let base = centroids(&probe.column, probe.k)?;
    let mut work = probe.column.clone();
    let mut max_shift: f64 = 0.0;
    let mut worst = None;
    let mut evaluations = 0;
    let steps = (probe.grid_points - 1) as f64;

    for i in 0..n {
        let x = probe.column[i];
        let (lo, hi) = match probe.domain {
            Some((l, u)) => ((x - probe.delta_cap).max(l), (x + probe.delta_cap).min(u)),
            None => (x - probe.delta_cap, x + probe.delta_cap),
        };
        // evenly spaced grid with both endpoints, plus any existing values in
        // reach so ties with other records get exercised
        let mut replacements: Vec<f64> = (0..probe.grid_points)
            .map(|s| lo + (hi - lo) * s as f64 / steps)
            .collect();
        replacements.extend(
            probe
                .column
                .iter()
                .copied()
                .filter(|v| (lo..=hi).contains(v)),
        );
        for r in replacements {
            work[i] = r;
            let shift = centroid_shift(&base, &centroids(&work, probe.k)?);
            evaluations += 1;
            if shift > max_shift {
                max_shift = shift;
                worst = Some((i, r));
            }
        }
        work[i] = x;
    }
    let bound = probe.delta_cap / probe.k as f64;
    Ok(ShiftReport {
        max_shift,
        bound,
        passed: max_shift <= bound + SHIFT_TOLERANCE,
        worst,
        evaluations,
    })
}

/// δ from explicit ancestor-set arithmetic.
fn set_distance(a: &BTreeSet<&str>, b: &BTreeSet<&str>) -> f64 {
    let union = a.union(b).count() as f64;
    let inter = a.intersection(b).count() as f64;
    (1.0 + (union - inter) / union).log2()
}

/// Exact selection probabilities of the categorical exponential mechanism.
/// `epsilon = 0` is accepted and gives the uniform distribution.
pub fn exact_expmech_distribution(
    taxonomy: &Taxonomy,
    cluster_values: &[&str],
    epsilon: f64,
    sensitivity_q: f64,
    scope: CandidateScope,
) -> Result<BTreeMap<String, f64>> {
    if cluster_values.is_empty() {
        return Err(Error::Empty("cluster values"));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0)
        || !(sensitivity_q.is_finite() && sensitivity_q > 0.0)
    {
        return Err(Error::InvalidParameter(format!(
            "epsilon {epsilon}, quality sensitivity {sensitivity_q}"
        )));
    }
    let value_sets = cluster_values
        .iter()
        .map(|v| taxonomy.ancestors(v))
        .collect::<Result<Vec<_>>>()?;
    let candidates: BTreeSet<&str> = match scope {
        CandidateScope::Taxonomy => taxonomy.nodes().map(|id| taxonomy.label(id)).collect(),
        CandidateScope::SpannedSubtree => value_sets.iter().flatten().copied().collect(),
    };
    if candidates.len() > MAX_EXACT_CANDIDATES {
        return Err(Error::InvalidParameter(format!(
            "{} candidates exceeds the exact-enumeration limit",
            candidates.len()
        )));
    }
    let exponents: Vec<(&str, f64)> = candidates
        .iter()
        .map(|&c| {
            let phi_c = taxonomy.ancestors(c).expect("candidate is a node");
            let marginality: f64 = cluster_values
                .iter()
                .zip(&value_sets)
                .filter(|(v, _)| **v != c)
                .map(|(_, phi_v)| set_distance(&phi_c, phi_v))
                .sum();
            (c, -epsilon * marginality / (2.0 * sensitivity_q))
        })
        .collect();
    let max = exponents
        .iter()
        .map(|e| e.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<(&str, f64)> = exponents
        .iter()
        .map(|&(c, e)| (c, (e - max).exp()))
        .collect();
    let total: f64 = weights.iter().map(|w| w.1).sum();
    Ok(weights
        .into_iter()
        .map(|(c, w)| (c.to_string(), w / total))
        .collect())
}

/// Worst `|ln(P₁(o) / P₂(o))|` over every output `o` of the categorical
/// mechanism on two neighbouring clusters.
///
/// With [`NoiseSharing::PerCluster`] the cluster releases one label shared
/// by all members. With [`NoiseSharing::PerRecord`] every member gets an
/// independent draw and outputs are label tuples. An output possible on only
/// one side yields `f64::INFINITY`.
pub fn exact_dp_ratio(
    taxonomy: &Taxonomy,
    cluster_a: &[&str],
    cluster_b: &[&str],
    epsilon: f64,
    sensitivity_q: f64,
    sharing: NoiseSharing,
    scope: CandidateScope,
) -> Result<f64> {
    if cluster_a.len() != cluster_b.len() {
        return Err(Error::ShapeMismatch(
            "neighbouring clusters differ in size".into(),
        ));
    }
    let p = exact_expmech_distribution(taxonomy, cluster_a, epsilon, sensitivity_q, scope)?;
    let q = exact_expmech_distribution(taxonomy, cluster_b, epsilon, sensitivity_q, scope)?;
    let outputs: Vec<&String> = p
        .keys()
        .chain(q.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let prob = |d: &BTreeMap<String, f64>, o: &String| d.get(o).copied().unwrap_or(0.0);

    let log_ratio = |pa: f64, pb: f64| -> Option<f64> {
        match (pa > 0.0, pb > 0.0) {
            (true, true) => Some((pa / pb).ln().abs()),
            (false, false) => None,
            _ => Some(f64::INFINITY),
        }
    };

    match sharing {
        NoiseSharing::PerCluster => Ok(outputs
            .iter()
            .filter_map(|o| log_ratio(prob(&p, o), prob(&q, o)))
            .fold(0.0, f64::max)),
        NoiseSharing::PerRecord => {
            let arity = cluster_a.len();
            let total = (outputs.len() as f64).powi(arity as i32);
            if total > MAX_EXACT_TUPLES as f64 {
                return Err(Error::InvalidParameter(format!(
                    "{total} output tuples exceeds the exact-enumeration limit"
                )));
            }
            let mut worst: f64 = 0.0;
            let mut digits = vec![0usize; arity];
            loop {
                let (mut pa, mut pb) = (1.0, 1.0);
                for &d in &digits {
                    pa *= prob(&p, outputs[d]);
                    pb *= prob(&q, outputs[d]);
                }
                if let Some(r) = log_ratio(pa, pb) {
                    worst = worst.max(r);
                }
                // odometer increment
                let mut pos = 0;
                loop {
                    if pos == arity {
                        return Ok(worst);
                    }
                    digits[pos] += 1;
                    if digits[pos] < outputs.len() {
                        break;
                    }
                    digits[pos] = 0;
                    pos += 1;
                }
            }
        }
    }
}
