//! Single releases with reports, and seeded sweeps over parameter grids.

use std::io::Write;

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mechanisms::{noise_scales, release, MechanismConfig, Method, Release};
use crate::metrics::{MetricConfig, UtilityReport};
use crate::seeding::mix_seed_str;

pub const SWEEP_CSV_HEADER: &str = "method,k,epsilon,m,re_mean,jsd_mean,run_count";

pub const DEFAULT_RUNS: usize = 10;

/// Runs one mechanism and scores it against the input. The report's
/// `params` echo the configuration, the per-attribute budget and the noise
/// scales actually used.
pub fn run_release(
    data: &Dataset,
    config: &MechanismConfig,
    metrics: &MetricConfig,
) -> Result<(Release, UtilityReport)> {
    if config.budget.m != data.m() {
        return Err(Error::InvalidParameter(format!(
            "budget split over {} attributes but dataset has {}",
            config.budget.m,
            data.m()
        )));
    }
    let out = release(data, config)?;
    let scales: IndexMap<&str, Option<f64>> = data
        .schema()
        .iter()
        .map(|a| a.name.as_str())
        .zip(noise_scales(data, config))
        .collect();
    let params = json!({
        "method": config.method.name(),
        "k": config.k,
        "epsilon": config.budget.epsilon_total,
        "m": config.budget.m,
        "epsilon_per_attribute": config.budget.per_attribute(),
        "n": data.n(),
        "seed": config.seed,
        "clamp": config.clamp,
        "noise_scales": scales,
    });
    let report = UtilityReport::evaluate(data, &out.data, metrics, params)?;
    Ok((out, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub methods: Vec<Method>,
    pub k_values: Vec<usize>,
    pub epsilon_values: Vec<f64>,
    /// Each subset restricts both the release and the metrics. An empty list
    /// means one subset holding every attribute.
    pub attribute_subsets: Vec<Vec<String>>,
    pub runs: usize,
    pub master_seed: u64,
    pub clamp: bool,
}

impl SweepSpec {
    pub fn new(methods: Vec<Method>, k_values: Vec<usize>, epsilon_values: Vec<f64>) -> Self {
        Self {
            methods,
            k_values,
            epsilon_values,
            attribute_subsets: Vec::new(),
            runs: DEFAULT_RUNS,
            master_seed: 0,
            clamp: true,
        }
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("sweep has no methods".into()));
        }
        if self.k_values.is_empty() {
            return Err(Error::InvalidParameter("sweep has no k values".into()));
        }
        if self.epsilon_values.is_empty() {
            return Err(Error::InvalidParameter(
                "sweep has no epsilon values".into(),
            ));
        }
        if self.runs == 0 {
            return Err(Error::InvalidParameter("runs must be at least 1".into()));
        }
        if let Some(&k) = self.k_values.iter().find(|&&k| k == 0) {
            return Err(Error::InvalidK { k, n: data.n() });
        }
        if let Some(e) = self
            .epsilon_values
            .iter()
            .find(|e| !(e.is_finite() && **e > 0.0))
        {
            return Err(Error::InvalidParameter(format!("epsilon {e}")));
        }
        for subset in &self.attribute_subsets {
            if subset.is_empty() {
                return Err(Error::Empty("attribute subset"));
            }
            if let Some(name) = subset.iter().find(|a| data.attribute_index(a).is_none()) {
                return Err(Error::Schema(format!(
                    "unknown attribute `{name}` in subset"
                )));
            }
        }
        Ok(())
    }

    fn subsets(&self, data: &Dataset) -> Vec<Vec<String>> {
        if self.attribute_subsets.is_empty() {
            vec![data.schema().iter().map(|a| a.name.clone()).collect()]
        } else {
            self.attribute_subsets.clone()
        }
    }
}

/// Metrics of one seeded run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub re: f64,
    pub jsd: f64,
    pub re_per_attribute: IndexMap<String, f64>,
    pub jsd_per_attribute: IndexMap<String, f64>,
    pub variance_delta: IndexMap<String, Option<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub method: Method,
    pub k: usize,
    pub epsilon: f64,
    pub attributes: Vec<String>,
    pub status: CellStatus,
    pub error: Option<String>,
    pub re_mean: Option<f64>,
    pub jsd_mean: Option<f64>,
    pub re_mean_per_attribute: IndexMap<String, f64>,
    pub jsd_mean_per_attribute: IndexMap<String, f64>,
    /// Mean over the runs where the delta is defined.
    pub variance_delta_mean: IndexMap<String, Option<f64>>,
    pub runs: Vec<RunRecord>,
}

impl CellResult {
    pub fn m(&self) -> usize {
        self.attributes.len()
    }

    pub fn run_count(&self) -> usize {
        self.runs.len()
    }

    pub fn csv_row(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.method,
            self.k,
            self.epsilon,
            self.m(),
            fmt(self.re_mean),
            fmt(self.jsd_mean),
            self.run_count()
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub spec: SweepSpec,
    pub cells: Vec<CellResult>,
}

impl SweepReport {
    pub fn cell(&self, method: Method, k: usize, epsilon: f64, m: usize) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.k == k && c.epsilon == epsilon && c.m() == m)
    }

    pub fn write_csv(&self, mut sink: impl Write) -> Result<()> {
        writeln!(sink, "{SWEEP_CSV_HEADER}")?;
        for cell in &self.cells {
            writeln!(sink, "{}", cell.csv_row())?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep report serializes")
    }
}

/// Key hashed into every run seed. Stable across releases of this crate.
pub fn cell_key(method: Method, k: usize, epsilon: f64, attributes: &[String]) -> String {
    format!(
        "{}|{}|{:?}|{}",
        method.name(),
        k,
        epsilon,
        attributes.join(",")
    )
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

fn run_cell(
    data: &Dataset,
    method: Method,
    k: usize,
    epsilon: f64,
    attributes: &[String],
    spec: &SweepSpec,
    metrics: &MetricConfig,
) -> CellResult {
    let mut cell = CellResult {
        method,
        k,
        epsilon,
        attributes: attributes.to_vec(),
        status: CellStatus::Ok,
        error: None,
        re_mean: None,
        jsd_mean: None,
        re_mean_per_attribute: IndexMap::new(),
        jsd_mean_per_attribute: IndexMap::new(),
        variance_delta_mean: IndexMap::new(),
        runs: Vec::with_capacity(spec.runs),
    };
    let key = cell_key(method, k, epsilon, attributes);
    let outcome = (|| -> Result<Vec<RunRecord>> {
        let subset = data.select(attributes)?;
        (0..spec.runs)
            .map(|run| {
                let seed = mix_seed_str(spec.master_seed, &key, run as u64);
                let cfg = MechanismConfig::new(method, k, epsilon, subset.m(), seed)?
                    .with_clamp(spec.clamp);
                let (_, report) = run_release(&subset, &cfg, metrics)?;
                Ok(RunRecord {
                    seed,
                    re: report.re_dataset,
                    jsd: report.jsd_dataset,
                    re_per_attribute: report.re_per_attribute,
                    jsd_per_attribute: report.jsd_per_attribute,
                    variance_delta: report.variance_delta_per_attribute,
                })
            })
            .collect()
    })();
    match outcome {
        Ok(runs) => {
            cell.re_mean = mean(runs.iter().map(|r| r.re));
            cell.jsd_mean = mean(runs.iter().map(|r| r.jsd));
            for name in attributes {
                let re = mean(runs.iter().map(|r| r.re_per_attribute[name.as_str()]));
                let jsd = mean(runs.iter().map(|r| r.jsd_per_attribute[name.as_str()]));
                let var = mean(runs.iter().filter_map(|r| r.variance_delta[name.as_str()]));
                cell.re_mean_per_attribute
                    .insert(name.clone(), re.unwrap_or(f64::NAN));
                cell.jsd_mean_per_attribute
                    .insert(name.clone(), jsd.unwrap_or(f64::NAN));
                cell.variance_delta_mean.insert(name.clone(), var);
            }
            cell.runs = runs;
        }
        Err(e) => {
            cell.status = CellStatus::Failed;
            cell.error = Some(e.to_string());
        }
    }
    cell
}

/// Runs every `(method, k, ε, subset)` cell of the grid. Cells run in
/// parallel; runs within a cell are sequential. Output order is the grid
/// order (method, then k, then ε, then subset) regardless of scheduling.
/// A failing cell is reported as failed and does not stop the sweep.
pub fn run_sweep(data: &Dataset, spec: &SweepSpec, metrics: &MetricConfig) -> Result<SweepReport> {
    spec.validate(data)?;
    let subsets = spec.subsets(data);
    let mut grid = Vec::new();
    for &method in &spec.methods {
        for &k in &spec.k_values {
            for &eps in &spec.epsilon_values {
                for subset in &subsets {
                    grid.push((method, k, eps, subset));
                }
            }
        }
    }
    let cells = grid
        .par_iter()
        .map(|&(method, k, eps, subset)| run_cell(data, method, k, eps, subset, spec, metrics))
        .collect();
    Ok(SweepReport {
        spec: SweepSpec {
            attribute_subsets: subsets,
            ..spec.clone()
        },
        cells,
    })
}
