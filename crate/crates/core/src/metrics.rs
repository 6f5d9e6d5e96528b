//! Utility metrics: relative error with a sanity bound, variance deltas and
//! Jensen–Shannon divergence over domain-binned histograms.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::Serialize;

use crate::data::{AttributeKind, Column, Dataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricConfig {
    /// Sanity bound is `(upper - lower) / sanity_divisor`.
    pub sanity_divisor: f64,
    /// Equal-width bins over `[lower, upper]` for continuous attributes.
    pub numeric_bins: usize,
    /// Per-attribute override of the schema's discrete flag.
    pub discrete: Option<Vec<bool>>,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            sanity_divisor: 100.0,
            numeric_bins: 100,
            discrete: None,
        }
    }
}

impl MetricConfig {
    fn is_discrete(&self, data: &Dataset, attribute: usize) -> bool {
        self.discrete
            .as_ref()
            .and_then(|d| d.get(attribute).copied())
            .unwrap_or_else(|| data.schema()[attribute].is_discrete())
    }

    fn validate(&self) -> Result<()> {
        if !(self.sanity_divisor.is_finite() && self.sanity_divisor > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sanity divisor {}",
                self.sanity_divisor
            )));
        }
        if self.numeric_bins == 0 {
            return Err(Error::InvalidParameter(
                "numeric_bins must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

fn check_shape(original: &Dataset, masked: &Dataset) -> Result<()> {
    if original.n() != masked.n() || original.m() != masked.m() {
        return Err(Error::ShapeMismatch(format!(
            "original is {}x{}, masked is {}x{}",
            original.n(),
            original.m(),
            masked.n(),
            masked.m()
        )));
    }
    for (a, b) in original.schema().iter().zip(masked.schema()) {
        if a.name != b.name || a.is_numeric() != b.is_numeric() {
            return Err(Error::ShapeMismatch(format!(
                "attribute `{}` does not match `{}`",
                a.name, b.name
            )));
        }
    }
    Ok(())
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    values.sum::<f64>() / n as f64
}

/// Per-attribute and dataset-level mean relative error. Numeric values use
/// `|a - a'| / max(sanity_bound, |a|)`; categorical values use the semantic
/// distance between original and masked labels.
pub fn relative_error(
    original: &Dataset,
    masked: &Dataset,
    cfg: &MetricConfig,
) -> Result<(IndexMap<String, f64>, f64)> {
    check_shape(original, masked)?;
    cfg.validate()?;
    let mut per_attribute = IndexMap::with_capacity(original.m());
    for (a, attr) in original.schema().iter().enumerate() {
        let re = match (&attr.kind, original.column(a), masked.column(a)) {
            (
                AttributeKind::Numeric { lower, upper, .. },
                Column::Numeric(x),
                Column::Numeric(y),
            ) => {
                let sanity = (upper - lower) / cfg.sanity_divisor;
                mean(
                    x.iter()
                        .zip(y)
                        .map(|(a, b)| (a - b).abs() / sanity.max(a.abs())),
                )
            }
            (
                AttributeKind::Categorical { taxonomy },
                Column::Categorical(x),
                Column::Categorical(y),
            ) => mean(x.iter().zip(y).map(|(&a, &b)| taxonomy.distance(a, b))),
            _ => unreachable!("kinds checked"),
        };
        per_attribute.insert(attr.name.clone(), re);
    }
    let dataset = mean(per_attribute.values().copied());
    Ok((per_attribute, dataset))
}

/// Population variance (divides by n).
pub fn variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

/// `|σ²(A') - σ²(A)| / σ²(A)` per numeric attribute. `None` when the original
/// variance is zero.
pub fn variance_delta(
    original: &Dataset,
    masked: &Dataset,
) -> Result<IndexMap<String, Option<f64>>> {
    check_shape(original, masked)?;
    let mut out = IndexMap::new();
    for (a, attr) in original.schema().iter().enumerate() {
        if let (Column::Numeric(x), Column::Numeric(y)) = (original.column(a), masked.column(a)) {
            let v0 = variance(x);
            let v1 = variance(y);
            let delta = (v0 != 0.0).then(|| (v1 - v0).abs() / v0.abs());
            out.insert(attr.name.clone(), delta);
        }
    }
    Ok(out)
}

/// Jensen–Shannon divergence with base-2 logarithms, so the result lies in
/// `[0, 1]`. Both inputs are normalised first; `0 · log(0/x)` counts as 0.
pub fn jsd_from_counts(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "histograms must share bins");
    let sp: f64 = p.iter().sum();
    let sq: f64 = q.iter().sum();
    let half_kl = |x: f64, m: f64| if x > 0.0 { x * (x / m).log2() } else { 0.0 };
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let (a, b) = (a / sp, b / sq);
        let m = 0.5 * (a + b);
        if m > 0.0 {
            total += 0.5 * (half_kl(a, m) + half_kl(b, m));
        }
    }
    total.clamp(0.0, 1.0)
}

fn histograms(
    original: &Dataset,
    masked: &Dataset,
    attribute: usize,
    cfg: &MetricConfig,
) -> (Vec<f64>, Vec<f64>) {
    let attr = &original.schema()[attribute];
    match (
        &attr.kind,
        original.column(attribute),
        masked.column(attribute),
    ) {
        (AttributeKind::Numeric { lower, upper, .. }, Column::Numeric(x), Column::Numeric(y)) => {
            if cfg.is_discrete(original, attribute) {
                // one bin per integer domain value; values are rounded and
                // out-of-domain ones go to the edge bin
                let (lo, hi) = (lower.ceil(), upper.floor());
                let key = |v: f64| v.round().clamp(lo, hi) as i64;
                let mut bins: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
                for &v in x {
                    bins.entry(key(v)).or_default().0 += 1.0;
                }
                for &v in y {
                    bins.entry(key(v)).or_default().1 += 1.0;
                }
                bins.into_values().unzip()
            } else {
                let bins = cfg.numeric_bins;
                let width = (upper - lower) / bins as f64;
                // out-of-domain values fall into the nearest edge bin
                let index =
                    |v: f64| (((v - lower) / width).floor().max(0.0) as usize).min(bins - 1);
                let mut p = vec![0.0; bins];
                let mut q = vec![0.0; bins];
                for &v in x {
                    p[index(v)] += 1.0;
                }
                for &v in y {
                    q[index(v)] += 1.0;
                }
                (p, q)
            }
        }
        (
            AttributeKind::Categorical { taxonomy },
            Column::Categorical(x),
            Column::Categorical(y),
        ) => {
            let mut p = vec![0.0; taxonomy.len()];
            let mut q = vec![0.0; taxonomy.len()];
            for v in x {
                p[v.index()] += 1.0;
            }
            for v in y {
                q[v.index()] += 1.0;
            }
            (p, q)
        }
        _ => unreachable!("kinds checked"),
    }
}

/// Per-attribute and dataset-level JSD between original and masked
/// histograms.
pub fn jsd(
    original: &Dataset,
    masked: &Dataset,
    cfg: &MetricConfig,
) -> Result<(IndexMap<String, f64>, f64)> {
    check_shape(original, masked)?;
    cfg.validate()?;
    if original.n() == 0 {
        return Err(Error::Empty("dataset for JSD"));
    }
    let mut per_attribute = IndexMap::with_capacity(original.m());
    for (a, attr) in original.schema().iter().enumerate() {
        let (p, q) = histograms(original, masked, a, cfg);
        per_attribute.insert(attr.name.clone(), jsd_from_counts(&p, &q));
    }
    let dataset = mean(per_attribute.values().copied());
    Ok((per_attribute, dataset))
}

#[derive(Clone, Debug, Serialize)]
pub struct UtilityReport {
    pub re_per_attribute: IndexMap<String, f64>,
    pub re_dataset: f64,
    pub jsd_per_attribute: IndexMap<String, f64>,
    pub jsd_dataset: f64,
    pub variance_delta_per_attribute: IndexMap<String, Option<f64>>,
    pub params: serde_json::Value,
}

impl UtilityReport {
    pub fn evaluate(
        original: &Dataset,
        masked: &Dataset,
        cfg: &MetricConfig,
        params: serde_json::Value,
    ) -> Result<Self> {
        let (re_per_attribute, re_dataset) = relative_error(original, masked, cfg)?;
        let (jsd_per_attribute, jsd_dataset) = jsd(original, masked, cfg)?;
        let variance_delta_per_attribute = variance_delta(original, masked)?;
        Ok(Self {
            re_per_attribute,
            re_dataset,
            jsd_per_attribute,
            jsd_dataset,
            variance_delta_per_attribute,
            params,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat CSV form: dataset-level scalars followed by per-attribute RE, JSD
    /// and variance delta columns.
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["re_dataset".to_string(), "jsd_dataset".to_string()];
        cols.extend(self.re_per_attribute.keys().map(|k| format!("re:{k}")));
        cols.extend(self.jsd_per_attribute.keys().map(|k| format!("jsd:{k}")));
        cols.extend(
            self.variance_delta_per_attribute
                .keys()
                .map(|k| format!("var_delta:{k}")),
        );
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.re_dataset.to_string(), self.jsd_dataset.to_string()];
        cols.extend(self.re_per_attribute.values().map(f64::to_string));
        cols.extend(self.jsd_per_attribute.values().map(f64::to_string));
        cols.extend(
            self.variance_delta_per_attribute
                .values()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default()),
        );
        cols.join(",")
    }
}
