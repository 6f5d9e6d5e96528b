//! Noise calibration and injection.
//!
//! The proposed release (`ir-dp`) microaggregates each attribute on its own,
//! then perturbs every cluster centroid with a single Laplace draw of scale
//! `Δ(Aᵢ) / (k · ε/m)`. All records of a cluster share that draw; drawing
//! fresh noise per record would multiply the effective sensitivity by `k`.
//! Categorical attributes get their centroid picked by the exponential
//! mechanism with quality `-marginality`.
//!
//! Each attribute draws from its own ChaCha20 stream (stream id = attribute
//! index) seeded from the release seed, so attributes can be processed in
//! parallel and still reproduce the serial output bit for bit.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AttributeKind, Column, Dataset, NeighborPair};
use crate::error::{Error, Result};
use crate::microaggregation::{individual_ranking, multivariate_baseline, Centroids};
use crate::taxonomy::{MarginalityTable, NodeId, Taxonomy, ValueCounts};

/// Sensitivity assumed for the marginality quality function. Replacing one
/// cluster member moves any candidate's marginality by one distance term,
/// and distances are below 1.
pub const QUALITY_SENSITIVITY: f64 = 1.0;

/// Total budget and its even split over `m` attributes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon_total: f64,
    pub m: usize,
}

impl PrivacyBudget {
    pub fn new(epsilon_total: f64, m: usize) -> Result<Self> {
        if !(epsilon_total.is_finite() && epsilon_total > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon_total}"
            )));
        }
        if m == 0 {
            return Err(Error::InvalidParameter(
                "budget split over zero attributes".into(),
            ));
        }
        Ok(Self { epsilon_total, m })
    }

    pub fn per_attribute(&self) -> f64 {
        self.epsilon_total / self.m as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ir-dp")]
    IrDp,
    #[serde(rename = "plain-laplace")]
    PlainLaplace,
    #[serde(rename = "mv-dp")]
    MvDp,
    #[serde(rename = "ir-only")]
    IrOnly,
    #[serde(rename = "mv-only")]
    MvOnly,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::IrDp,
        Method::PlainLaplace,
        Method::MvDp,
        Method::IrOnly,
        Method::MvOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::IrDp => "ir-dp",
            Method::PlainLaplace => "plain-laplace",
            Method::MvDp => "mv-dp",
            Method::IrOnly => "ir-only",
            Method::MvOnly => "mv-only",
        }
    }

    pub fn is_private(self) -> bool {
        matches!(self, Method::IrDp | Method::PlainLaplace | Method::MvDp)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub method: Method,
    pub k: usize,
    pub budget: PrivacyBudget,
    pub seed: u64,
    pub clamp: bool,
}

impl MechanismConfig {
    pub fn new(method: Method, k: usize, epsilon_total: f64, m: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            method,
            k,
            budget: PrivacyBudget::new(epsilon_total, m)?,
            seed,
            clamp: true,
        })
    }

    pub fn with_clamp(mut self, clamp: bool) -> Self {
        self.clamp = clamp;
        self
    }

    /// `k` as the mechanism uses it; plain Laplace ignores microaggregation.
    pub fn effective_k(&self) -> usize {
        match self.method {
            Method::PlainLaplace => 1,
            _ => self.k,
        }
    }
}

/// Noise drawn for one numeric attribute.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoisePlan {
    pub attribute: String,
    pub scale: f64,
    /// One draw per cluster for microaggregated releases, one per record for
    /// plain Laplace.
    pub draws: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Release {
    pub data: Dataset,
    /// Aligned with attributes; `None` for categorical and noise-free ones.
    pub noise: Vec<Option<NoisePlan>>,
}

/// Whether repeated centroid values share one draw. `PerRecord` is the
/// broken variant: it is not differentially private at the advertised
/// budget and only exists so the audit tooling has something to catch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseSharing {
    PerCluster,
    PerRecord,
}

/// Which nodes the exponential mechanism may return.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CandidateScope {
    /// Every node of the taxonomy. The output space does not depend on the
    /// data, which the privacy guarantee needs.
    Taxonomy,
    /// Only nodes spanned by the cluster's values and their ancestors.
    SpannedSubtree,
}

pub fn ir_dp_scale(sensitivity: f64, k: usize, budget: &PrivacyBudget) -> f64 {
    sensitivity / (k as f64 * budget.per_attribute())
}

pub fn plain_laplace_scale(sensitivity: f64, budget: &PrivacyBudget) -> f64 {
    budget.m as f64 * sensitivity / budget.epsilon_total
}

/// `(n/k) · Δ / (k · ε)`: every one of the `n/k` released centroids can move
/// by `Δ/k` when one record changes.
pub fn mv_dp_scale(sensitivity: f64, n: usize, k: usize, epsilon_total: f64) -> f64 {
    (n as f64 / k as f64) * sensitivity / (k as f64 * epsilon_total)
}

/// Seeded generator for one attribute's noise.
pub fn attribute_rng(seed: u64, attribute: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(attribute as u64);
    rng
}

/// Inverse CDF of the zero-mean Laplace distribution at `u ∈ (0, 1)`.
pub fn laplace_from_uniform(u: f64, scale: f64) -> f64 {
    if u < 0.5 {
        scale * (2.0 * u).ln()
    } else {
        -scale * (2.0 * (1.0 - u)).ln()
    }
}

pub fn laplace_sample<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> Result<f64> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "Laplace scale must be positive, got {scale}"
        )));
    }
    let u: f64 = rng.sample(rand::distr::Open01);
    Ok(laplace_from_uniform(u, scale))
}

/// Selection weights `exp(ε·q / 2Δq)` with `q = -marginality`, normalised.
/// Candidates are returned in node order.
pub fn exponential_weights(
    taxonomy: &Taxonomy,
    values: &ValueCounts,
    candidates: impl IntoIterator<Item = NodeId>,
    epsilon: f64,
    sensitivity_q: f64,
) -> Vec<(NodeId, f64)> {
    let table = MarginalityTable::new(taxonomy, values, candidates);
    let exponents: Vec<(NodeId, f64)> = table
        .scores
        .iter()
        .map(|(&c, &m)| (c, epsilon * -m / (2.0 * sensitivity_q)))
        .collect();
    let max = exponents
        .iter()
        .map(|&(_, e)| e)
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<(NodeId, f64)> = exponents
        .into_iter()
        .map(|(c, e)| (c, (e - max).exp()))
        .collect();
    let total: f64 = weights.iter().map(|&(_, w)| w).sum();
    weights.into_iter().map(|(c, w)| (c, w / total)).collect()
}

fn sample_weighted<R: Rng + ?Sized>(weights: &[(NodeId, f64)], rng: &mut R) -> NodeId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(node, p) in weights {
        acc += p;
        if u < acc {
            return node;
        }
    }
    // u landed in the rounding slack above the cumulative sum
    weights
        .iter()
        .rev()
        .find(|&&(_, p)| p > 0.0)
        .map(|&(n, _)| n)
        .expect("at least one positive weight")
}

fn candidates(taxonomy: &Taxonomy, values: &ValueCounts, scope: CandidateScope) -> Vec<NodeId> {
    match scope {
        CandidateScope::Taxonomy => taxonomy.nodes().collect(),
        CandidateScope::SpannedSubtree => taxonomy.spanned_subtree(values).into_iter().collect(),
    }
}

fn check_em_params(epsilon: f64, sensitivity_q: f64) -> Result<()> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon must be positive and finite, got {epsilon}"
        )));
    }
    if !(sensitivity_q.is_finite() && sensitivity_q > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "quality sensitivity must be positive, got {sensitivity_q}"
        )));
    }
    Ok(())
}

/// Samples a differentially private centroid for one cluster.
pub fn exponential_mechanism_centroid<R: Rng + ?Sized>(
    taxonomy: &Taxonomy,
    cluster_values: &[NodeId],
    epsilon: f64,
    sensitivity_q: f64,
    scope: CandidateScope,
    rng: &mut R,
) -> Result<NodeId> {
    if cluster_values.is_empty() {
        return Err(Error::Empty("cluster values"));
    }
    check_em_params(epsilon, sensitivity_q)?;
    let counts = ValueCounts::from_ids(cluster_values);
    let weights = exponential_weights(
        taxonomy,
        &counts,
        candidates(taxonomy, &counts, scope),
        epsilon,
        sensitivity_q,
    );
    Ok(sample_weighted(&weights, rng))
}

fn clamp_to(value: f64, bounds: (f64, f64), clamp: bool) -> f64 {
    if clamp {
        value.clamp(bounds.0, bounds.1)
    } else {
        value
    }
}

fn require_numeric(data: &Dataset, method: Method) -> Result<()> {
    match data.schema().iter().find(|a| !a.is_numeric()) {
        Some(a) => Err(Error::Unsupported {
            attribute: a.name.clone(),
            reason: format!("{method} handles numeric attributes only"),
        }),
        None => Ok(()),
    }
}

fn check_budget(data: &Dataset, budget: &PrivacyBudget) -> Result<()> {
    if budget.m != data.m() {
        return Err(Error::InvalidParameter(format!(
            "budget split over m={} but dataset has {} attributes",
            budget.m,
            data.m()
        )));
    }
    Ok(())
}

/// Per-attribute work, run in parallel with results kept in attribute order.
fn per_attribute<F>(data: &Dataset, f: F) -> Result<(Vec<Column>, Vec<Option<NoisePlan>>)>
where
    F: Fn(usize) -> Result<(Column, Option<NoisePlan>)> + Sync + Send,
{
    let results: Vec<Result<(Column, Option<NoisePlan>)>> =
        (0..data.m()).into_par_iter().map(f).collect();
    let mut columns = Vec::with_capacity(data.m());
    let mut noise = Vec::with_capacity(data.m());
    for r in results {
        let (c, p) = r?;
        columns.push(c);
        noise.push(p);
    }
    Ok((columns, noise))
}

/// Individual-ranking microaggregation followed by per-cluster noise.
pub fn ir_dp_release(data: &Dataset, config: &MechanismConfig) -> Result<Release> {
    ir_dp_release_with(
        data,
        config,
        NoiseSharing::PerCluster,
        CandidateScope::Taxonomy,
    )
}

pub fn ir_dp_release_with(
    data: &Dataset,
    config: &MechanismConfig,
    sharing: NoiseSharing,
    scope: CandidateScope,
) -> Result<Release> {
    check_budget(data, &config.budget)?;
    let k = config.k;
    if k < 1 || k > data.n() {
        return Err(Error::InvalidK { k, n: data.n() });
    }
    let eps_attr = config.budget.per_attribute();
    let (columns, noise) = per_attribute(data, |a| {
        let attr = &data.schema()[a];
        let plan = individual_ranking(data, a, k)?;
        let mut rng = attribute_rng(config.seed, a);
        match (&attr.kind, &plan.centroids) {
            (AttributeKind::Numeric { lower, upper, .. }, Centroids::Numeric(centroids)) => {
                let scale = ir_dp_scale(attr.sensitivity(), k, &config.budget);
                let (values, draws) = match sharing {
                    NoiseSharing::PerCluster => {
                        let draws = centroids
                            .iter()
                            .map(|_| laplace_sample(scale, &mut rng))
                            .collect::<Result<Vec<_>>>()?;
                        let values = plan
                            .assignments
                            .iter()
                            .map(|&g| {
                                clamp_to(centroids[g] + draws[g], (*lower, *upper), config.clamp)
                            })
                            .collect();
                        (values, draws)
                    }
                    NoiseSharing::PerRecord => {
                        let draws = plan
                            .assignments
                            .iter()
                            .map(|_| laplace_sample(scale, &mut rng))
                            .collect::<Result<Vec<_>>>()?;
                        let values = plan
                            .assignments
                            .iter()
                            .zip(&draws)
                            .map(|(&g, d)| {
                                clamp_to(centroids[g] + d, (*lower, *upper), config.clamp)
                            })
                            .collect();
                        (values, draws)
                    }
                };
                Ok((
                    Column::Numeric(values),
                    Some(NoisePlan {
                        attribute: attr.name.clone(),
                        scale,
                        draws,
                    }),
                ))
            }
            (AttributeKind::Categorical { taxonomy }, Centroids::Categorical(_)) => {
                let column = data.column(a).as_categorical().expect("categorical column");
                let values = match sharing {
                    NoiseSharing::PerCluster => {
                        let mut chosen = Vec::with_capacity(plan.cluster_count());
                        for members in plan.members() {
                            let cluster: Vec<NodeId> = members.iter().map(|&r| column[r]).collect();
                            chosen.push(exponential_mechanism_centroid(
                                taxonomy,
                                &cluster,
                                eps_attr,
                                QUALITY_SENSITIVITY,
                                scope,
                                &mut rng,
                            )?);
                        }
                        plan.assignments.iter().map(|&g| chosen[g]).collect()
                    }
                    NoiseSharing::PerRecord => {
                        let members = plan.members();
                        let clusters: Vec<Vec<NodeId>> = members
                            .iter()
                            .map(|m| m.iter().map(|&r| column[r]).collect())
                            .collect();
                        let mut out = Vec::with_capacity(column.len());
                        for &g in &plan.assignments {
                            out.push(exponential_mechanism_centroid(
                                taxonomy,
                                &clusters[g],
                                eps_attr,
                                QUALITY_SENSITIVITY,
                                scope,
                                &mut rng,
                            )?);
                        }
                        out
                    }
                };
                Ok((Column::Categorical(values), None))
            }
            _ => unreachable!("plan kind follows attribute kind"),
        }
    })?;
    Ok(Release {
        data: data.with_columns(columns)?,
        noise,
    })
}

/// Independent noise per record and attribute at scale `mΔ/ε`; categorical
/// values go through a per-record exponential mechanism over the whole
/// taxonomy.
pub fn plain_laplace_release(data: &Dataset, config: &MechanismConfig) -> Result<Release> {
    check_budget(data, &config.budget)?;
    let eps_attr = config.budget.per_attribute();
    let (columns, noise) = per_attribute(data, |a| {
        let attr = &data.schema()[a];
        let mut rng = attribute_rng(config.seed, a);
        match (&attr.kind, data.column(a)) {
            (AttributeKind::Numeric { lower, upper, .. }, Column::Numeric(values)) => {
                let scale = plain_laplace_scale(attr.sensitivity(), &config.budget);
                let draws = values
                    .iter()
                    .map(|_| laplace_sample(scale, &mut rng))
                    .collect::<Result<Vec<_>>>()?;
                let out = values
                    .iter()
                    .zip(&draws)
                    .map(|(v, d)| clamp_to(v + d, (*lower, *upper), config.clamp))
                    .collect();
                Ok((
                    Column::Numeric(out),
                    Some(NoisePlan {
                        attribute: attr.name.clone(),
                        scale,
                        draws,
                    }),
                ))
            }
            (AttributeKind::Categorical { taxonomy }, Column::Categorical(values)) => {
                let out = values
                    .iter()
                    .map(|&v| {
                        exponential_mechanism_centroid(
                            taxonomy,
                            &[v],
                            eps_attr,
                            QUALITY_SENSITIVITY,
                            CandidateScope::Taxonomy,
                            &mut rng,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((Column::Categorical(out), None))
            }
            _ => unreachable!("column kind follows attribute kind"),
        }
    })?;
    Ok(Release {
        data: data.with_columns(columns)?,
        noise,
    })
}

/// Multivariate baseline: one record-level partition, per-cluster noise at
/// the whole-dataset centroid sensitivity.
pub fn mv_dp_release(data: &Dataset, config: &MechanismConfig) -> Result<Release> {
    check_budget(data, &config.budget)?;
    require_numeric(data, Method::MvDp)?;
    let plan = multivariate_baseline(data, config.k)?;
    let (columns, noise) = per_attribute(data, |a| {
        let attr = &data.schema()[a];
        let (lower, upper) = attr.bounds().expect("numeric");
        let scale = mv_dp_scale(
            attr.sensitivity(),
            data.n(),
            config.k,
            config.budget.epsilon_total,
        );
        let mut rng = attribute_rng(config.seed, a);
        let draws = (0..plan.cluster_count())
            .map(|_| laplace_sample(scale, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let values = plan
            .assignments
            .iter()
            .map(|&g| {
                clamp_to(
                    plan.centroids[g][a] + draws[g],
                    (lower, upper),
                    config.clamp,
                )
            })
            .collect();
        Ok((
            Column::Numeric(values),
            Some(NoisePlan {
                attribute: attr.name.clone(),
                scale,
                draws,
            }),
        ))
    })?;
    Ok(Release {
        data: data.with_columns(columns)?,
        noise,
    })
}

/// Individual ranking alone, no noise (not private).
pub fn ir_only_release(data: &Dataset, k: usize) -> Result<Release> {
    let (columns, noise) = per_attribute(data, |a| {
        Ok((individual_ranking(data, a, k)?.microaggregated(), None))
    })?;
    Ok(Release {
        data: data.with_columns(columns)?,
        noise,
    })
}

/// Multivariate baseline alone, no noise (not private).
pub fn mv_only_release(data: &Dataset, k: usize) -> Result<Release> {
    require_numeric(data, Method::MvOnly)?;
    let plan = multivariate_baseline(data, k)?;
    let columns = (0..data.m())
        .map(|a| Column::Numeric(plan.microaggregated_column(a)))
        .collect();
    Ok(Release {
        data: data.with_columns(columns)?,
        noise: vec![None; data.m()],
    })
}

pub fn release(data: &Dataset, config: &MechanismConfig) -> Result<Release> {
    match config.method {
        Method::IrDp => ir_dp_release(data, config),
        Method::PlainLaplace => plain_laplace_release(data, config),
        Method::MvDp => mv_dp_release(data, config),
        Method::IrOnly => ir_only_release(data, config.k),
        Method::MvOnly => mv_only_release(data, config.k),
    }
}

/// Noise scale per attribute a configuration implies (`None` for categorical
/// attributes or noise-free methods).
pub fn noise_scales(data: &Dataset, config: &MechanismConfig) -> Vec<Option<f64>> {
    data.schema()
        .iter()
        .map(|attr| {
            if !attr.is_numeric() {
                return None;
            }
            let delta = attr.sensitivity();
            match config.method {
                Method::IrDp => Some(ir_dp_scale(delta, config.k, &config.budget)),
                Method::PlainLaplace => Some(plain_laplace_scale(delta, &config.budget)),
                Method::MvDp => Some(mv_dp_scale(
                    delta,
                    data.n(),
                    config.k,
                    config.budget.epsilon_total,
                )),
                Method::IrOnly | Method::MvOnly => None,
            }
        })
        .collect()
}

/// Bin index of `value` for the given ascending interior edges; values below
/// the first edge land in bin 0, values at or above the last in bin
/// `edges.len()`.
pub fn bucket(value: f64, edges: &[f64]) -> usize {
    edges.partition_point(|&e| e <= value)
}

/// z-score used for the confidence intervals of the bucketed check.
pub const DP_CHECK_Z: f64 = 4.0;

/// Fewest trials [`dp_property_check`] accepts.
pub const DP_CHECK_MIN_TRIALS: usize = 1000;

#[derive(Clone, Debug, Serialize)]
pub struct FlaggedBucket {
    pub outcome: String,
    pub base_count: usize,
    pub modified_count: usize,
    pub conservative_log_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DpCheckReport {
    pub epsilon: f64,
    pub trials: usize,
    pub buckets: usize,
    /// Largest `|ln(p̂₁/p̂₂)|` over outcomes seen on both sides.
    pub max_log_ratio: f64,
    /// Largest log-ratio still supported after shrinking both estimates to
    /// the edges of their confidence intervals.
    pub max_conservative_log_ratio: f64,
    pub flagged: Vec<FlaggedBucket>,
}

impl DpCheckReport {
    pub fn passed(&self) -> bool {
        self.flagged.is_empty()
    }
}

fn wilson(count: usize, trials: usize, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = count as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Empirical check of the ε-DP inequality on one neighbor pair.
///
/// `mechanism(dataset, trial_seed)` must map to a discrete outcome (bucket
/// continuous outputs with [`bucket`]). Each side runs `trials` times; a
/// bucket is flagged when the probability ratio exceeds `e^ε` even after
/// moving both estimates to the unfavourable ends of their Wilson intervals.
pub fn dp_property_check<O, F>(
    mechanism: F,
    neighbor: &NeighborPair,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<DpCheckReport>
where
    O: Ord + fmt::Debug + Send,
    F: Fn(&Dataset, u64) -> Result<O> + Sync,
{
    if trials < DP_CHECK_MIN_TRIALS {
        return Err(Error::InvalidParameter(format!(
            "{trials} trials is below the minimum of {DP_CHECK_MIN_TRIALS}"
        )));
    }
    let run = |data: &Dataset, salt: u64| -> Result<BTreeMap<O, usize>> {
        let outcomes: Vec<O> = (0..trials as u64)
            .into_par_iter()
            .map(|t| mechanism(data, crate::seeding::mix_seed(seed, &[salt, t])))
            .collect::<Result<_>>()?;
        let mut counts = BTreeMap::new();
        for o in outcomes {
            *counts.entry(o).or_insert(0) += 1;
        }
        Ok(counts)
    };
    let base = run(&neighbor.base, 1)?;
    let modified = run(&neighbor.modified, 2)?;

    let mut merged: BTreeMap<&O, (usize, usize)> = BTreeMap::new();
    for (o, &c) in &base {
        merged.entry(o).or_default().0 = c;
    }
    for (o, &c) in &modified {
        merged.entry(o).or_default().1 = c;
    }

    let mut max_log_ratio: f64 = 0.0;
    let mut max_conservative: f64 = 0.0;
    let mut flagged = Vec::new();
    for (outcome, &(c1, c2)) in &merged {
        if c1 > 0 && c2 > 0 {
            max_log_ratio = max_log_ratio.max((c1 as f64 / c2 as f64).ln().abs());
        }
        let (lo1, hi1) = wilson(c1, trials, DP_CHECK_Z);
        let (lo2, hi2) = wilson(c2, trials, DP_CHECK_Z);
        let conservative = [(lo1 / hi2).ln(), (lo2 / hi1).ln(), 0.0]
            .into_iter()
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
        max_conservative = max_conservative.max(conservative);
        if conservative > epsilon {
            flagged.push(FlaggedBucket {
                outcome: format!("{outcome:?}"),
                base_count: c1,
                modified_count: c2,
                conservative_log_ratio: conservative,
            });
        }
    }
    Ok(DpCheckReport {
        epsilon,
        trials,
        buckets: merged.len(),
        max_log_ratio,
        max_conservative_log_ratio: max_conservative,
        flagged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AttributeSchema, Value};
    use std::sync::Arc;

    fn numeric(values: &[f64], lower: f64, upper: f64) -> Dataset {
        Dataset::new(
            vec![AttributeSchema::numeric("x", lower, upper).unwrap()],
            vec![Column::Numeric(values.to_vec())],
        )
        .unwrap()
    }

    #[test]
    fn budget_split() {
        let b = PrivacyBudget::new(1.0, 4).unwrap();
        assert_eq!(b.per_attribute() * 4.0, 1.0);
        assert!(PrivacyBudget::new(0.0, 1).is_err());
        assert!(PrivacyBudget::new(-1.0, 1).is_err());
        assert!(PrivacyBudget::new(1.0, 0).is_err());
        assert!(PrivacyBudget::new(f64::NAN, 1).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("mdav".parse::<Method>().is_err());
    }

    #[test]
    fn inverse_cdf_median_is_zero() {
        assert_eq!(laplace_from_uniform(0.5, 3.0), 0.0);
        assert!(laplace_from_uniform(0.25, 1.0) < 0.0);
        assert_eq!(
            laplace_from_uniform(0.25, 1.0),
            -laplace_from_uniform(0.75, 1.0)
        );
    }

    #[test]
    fn laplace_rejects_bad_scale() {
        let mut rng = attribute_rng(0, 0);
        assert!(laplace_sample(0.0, &mut rng).is_err());
        assert!(laplace_sample(-1.0, &mut rng).is_err());
    }

    #[test]
    fn laplace_moments() {
        let mut rng = attribute_rng(11, 0);
        let n = 1_000_000;
        let scale = 4.0;
        let draws: Vec<f64> = (0..n)
            .map(|_| laplace_sample(scale, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!(
            (var / (2.0 * scale * scale) - 1.0).abs() < 0.02,
            "var {var}"
        );
    }

    #[test]
    fn scale_formulas() {
        let b = PrivacyBudget::new(1.0, 1).unwrap();
        assert_eq!(plain_laplace_scale(100.0, &b), 100.0);
        assert_eq!(ir_dp_scale(100.0, 1, &b), 100.0);
        let b13 = PrivacyBudget::new(2.0, 13).unwrap();
        assert!((ir_dp_scale(5.0, 1, &b13) - plain_laplace_scale(5.0, &b13)).abs() < 1e-12);
    }

    #[test]
    fn shared_draw_per_cluster() {
        let d = numeric(&[1.0, 2.0, 3.0, 4.0], 0.0, 10.0);
        let cfg = MechanismConfig::new(Method::IrDp, 2, 1.0, 1, 5)
            .unwrap()
            .with_clamp(false);
        let r = ir_dp_release(&d, &cfg).unwrap();
        let v = r.data.column(0).as_numeric().unwrap();
        assert_eq!(v[0], v[1]);
        assert_eq!(v[2], v[3]);
        assert_ne!(v[0], v[2]);
        let plan = r.noise[0].as_ref().unwrap();
        assert_eq!(plan.draws.len(), 2);
        assert_eq!(plan.scale, 10.0 / 2.0);
        assert_eq!(v[0], 1.5 + plan.draws[0]);
    }

    #[test]
    fn huge_epsilon_recovers_centroids() {
        let d = numeric(&[1.0, 2.0, 3.0, 4.0], 0.0, 10.0);
        let cfg = MechanismConfig::new(Method::IrDp, 2, 1e6, 1, 9).unwrap();
        let r = ir_dp_release(&d, &cfg).unwrap();
        let v = r.data.column(0).as_numeric().unwrap();
        assert!((v[0] - 1.5).abs() < 1e-3 && (v[3] - 3.5).abs() < 1e-3);
    }

    #[test]
    fn k_larger_than_n_is_an_error() {
        let d = numeric(&[1.0, 2.0], 0.0, 10.0);
        let cfg = MechanismConfig::new(Method::IrDp, 3, 1.0, 1, 0).unwrap();
        assert!(matches!(
            ir_dp_release(&d, &cfg),
            Err(Error::InvalidK { .. })
        ));
    }

    #[test]
    fn plain_laplace_noise_is_independent() {
        let d = numeric(&[5.0, 5.0], 0.0, 10.0);
        let cfg = MechanismConfig::new(Method::PlainLaplace, 1, 1.0, 1, 3)
            .unwrap()
            .with_clamp(false);
        let r = plain_laplace_release(&d, &cfg).unwrap();
        let v = r.data.column(0).as_numeric().unwrap();
        assert_ne!(v[0], v[1]);
    }

    #[test]
    fn clamping_keeps_values_in_domain() {
        let d = numeric(&[0.0, 1.0, 9.0, 10.0], 0.0, 10.0);
        for method in [Method::IrDp, Method::PlainLaplace, Method::MvDp] {
            let cfg = MechanismConfig::new(method, 2, 0.01, 1, 1).unwrap();
            let r = release(&d, &cfg).unwrap();
            assert!(r.data.validate_bounds().is_ok(), "{method}");
        }
    }

    #[test]
    fn seeded_determinism() {
        let d = numeric(&[1.0, 7.0, 3.0, 4.0, 2.0, 8.0], 0.0, 10.0);
        for method in Method::ALL {
            let cfg = MechanismConfig::new(method, 2, 1.0, 1, 77).unwrap();
            assert_eq!(
                release(&d, &cfg).unwrap().data,
                release(&d, &cfg).unwrap().data
            );
        }
    }

    #[test]
    fn crossover_at_n_over_m() {
        let (n, m) = (1080usize, 12usize); // n/m = 90, an integer
        let b = PrivacyBudget::new(1.0, m).unwrap();
        let k = n / m;
        assert!((ir_dp_scale(1.0, k, &b) - mv_dp_scale(1.0, n, k, 1.0)).abs() < 1e-15);
        assert!(ir_dp_scale(1.0, k - 1, &b) < mv_dp_scale(1.0, n, k - 1, 1.0));
        assert!(ir_dp_scale(1.0, k + 1, &b) > mv_dp_scale(1.0, n, k + 1, 1.0));
    }

    fn toy_taxonomy() -> Arc<Taxonomy> {
        Arc::new(Taxonomy::parse("r\nr\tp\nr\tq\np\ta\np\tb\n").unwrap())
    }

    #[test]
    fn exponential_mechanism_limits() {
        let t = toy_taxonomy();
        let a = t.id("a").unwrap();
        let b = t.id("b").unwrap();
        let mut rng = attribute_rng(4, 0);
        // Large ε: always the marginality centroid.
        let cluster = [a, a, b];
        let centroid = t
            .marginality_centroid(&ValueCounts::from_ids(&cluster))
            .unwrap();
        for _ in 0..1000 {
            let got = exponential_mechanism_centroid(
                &t,
                &cluster,
                1e9,
                1.0,
                CandidateScope::Taxonomy,
                &mut rng,
            )
            .unwrap();
            assert_eq!(got, centroid);
        }
        // Spanned scope never leaves the spanned subtree.
        let spanned = t.spanned_subtree(&ValueCounts::from_ids(&cluster));
        for _ in 0..1000 {
            let got = exponential_mechanism_centroid(
                &t,
                &cluster,
                0.01,
                1.0,
                CandidateScope::SpannedSubtree,
                &mut rng,
            )
            .unwrap();
            assert!(spanned.contains(&got));
        }
        assert!(exponential_mechanism_centroid(
            &t,
            &[],
            1.0,
            1.0,
            CandidateScope::Taxonomy,
            &mut rng
        )
        .is_err());
        assert!(exponential_mechanism_centroid(
            &t,
            &[a],
            0.0,
            1.0,
            CandidateScope::Taxonomy,
            &mut rng
        )
        .is_err());
        assert!(exponential_mechanism_centroid(
            &t,
            &[a],
            1.0,
            0.0,
            CandidateScope::Taxonomy,
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn tiny_epsilon_is_uniform() {
        let t = toy_taxonomy();
        let a = t.id("a").unwrap();
        let mut rng = attribute_rng(8, 0);
        let trials = 100_000;
        let mut counts = vec![0usize; t.len()];
        for _ in 0..trials {
            let got = exponential_mechanism_centroid(
                &t,
                &[a, a],
                1e-9,
                1.0,
                CandidateScope::Taxonomy,
                &mut rng,
            )
            .unwrap();
            counts[got.index()] += 1;
        }
        let expected = 1.0 / t.len() as f64;
        for c in counts {
            assert!((c as f64 / trials as f64 - expected).abs() < 0.02 * expected.max(0.1));
        }
    }

    #[test]
    fn categorical_release_outputs_taxonomy_nodes() {
        let t = toy_taxonomy();
        let col: Vec<NodeId> = ["a", "b", "q", "a", "p", "b"]
            .iter()
            .map(|l| t.id(l).unwrap())
            .collect();
        let d = Dataset::new(
            vec![AttributeSchema::categorical("c", t.clone())],
            vec![Column::Categorical(col)],
        )
        .unwrap();
        for method in [Method::IrDp, Method::PlainLaplace, Method::IrOnly] {
            let cfg = MechanismConfig::new(method, 2, 1.0, 1, 2).unwrap();
            let r = release(&d, &cfg).unwrap();
            let out = r.data.column(0).as_categorical().unwrap();
            assert!(out.iter().all(|id| id.index() < t.len()));
        }
        let cfg = MechanismConfig::new(Method::MvDp, 2, 1.0, 1, 2).unwrap();
        assert!(matches!(release(&d, &cfg), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn budget_must_match_attribute_count() {
        let d = numeric(&[1.0, 2.0], 0.0, 10.0);
        let cfg = MechanismConfig::new(Method::IrDp, 1, 1.0, 3, 0).unwrap();
        assert!(release(&d, &cfg).is_err());
    }

    #[test]
    fn bucket_edges() {
        let edges = [-1.0, 0.0, 1.0];
        assert_eq!(bucket(-5.0, &edges), 0);
        assert_eq!(bucket(-1.0, &edges), 1);
        assert_eq!(bucket(0.5, &edges), 2);
        assert_eq!(bucket(7.0, &edges), 3);
    }

    /// One cluster of two records on [0, 1]; the neighbor moves one record
    /// across the whole domain.
    fn two_record_pair() -> NeighborPair {
        NeighborPair::new(numeric(&[0.0, 0.0], 0.0, 1.0), 1, vec![Value::Numeric(1.0)]).unwrap()
    }

    fn bucketed(sharing: NoiseSharing) -> impl Fn(&Dataset, u64) -> Result<(usize, usize)> + Sync {
        move |d: &Dataset, seed| {
            let cfg = MechanismConfig::new(Method::IrDp, 2, 1.0, 1, seed)
                .unwrap()
                .with_clamp(false);
            let r = ir_dp_release_with(d, &cfg, sharing, CandidateScope::Taxonomy)?;
            let v = r.data.column(0).as_numeric().unwrap();
            let edges = [-1.0, -0.5, 0.0, 0.5, 1.0, 1.5];
            Ok((bucket(v[0], &edges), bucket(v[1], &edges)))
        }
    }

    #[test]
    fn dp_check_identical_datasets() {
        let d = numeric(&[0.0, 0.0], 0.0, 1.0);
        let pair = NeighborPair::new(d, 0, vec![Value::Numeric(0.0)]).unwrap();
        let report =
            dp_property_check(bucketed(NoiseSharing::PerCluster), &pair, 1.0, 50_000, 1).unwrap();
        assert!(report.passed());
        assert_eq!(report.max_conservative_log_ratio, 0.0);
        assert!(report.max_log_ratio < 0.35, "{report:?}");
    }

    #[test]
    fn dp_check_passes_shared_noise_and_flags_per_record_noise() {
        let pair = two_record_pair();
        let good =
            dp_property_check(bucketed(NoiseSharing::PerCluster), &pair, 1.0, 200_000, 3).unwrap();
        assert!(good.passed(), "{good:?}");
        let bad =
            dp_property_check(bucketed(NoiseSharing::PerRecord), &pair, 1.0, 200_000, 3).unwrap();
        assert!(!bad.passed(), "{bad:?}");
    }

    #[test]
    fn dp_check_requires_enough_trials() {
        let pair = two_record_pair();
        assert!(dp_property_check(bucketed(NoiseSharing::PerCluster), &pair, 1.0, 10, 0).is_err());
    }
}
