//! Synthetic census-like tables for trend experiments.
//!
//! Columns alternate between uniform and log-normal draws, scaled up with
//! the column index so attributes have different magnitudes. Bounds are
//! inferred the same way as for loaded data: `[0, 1.5 · max]`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, LogNormal, Uniform};

use crate::data::{infer_numeric_bounds, AttributeSchema, Column, Dataset, DEFAULT_BOUND_FACTOR};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub m: usize,
    /// Standard deviation of the underlying normal for log-normal columns.
    pub log_sigma: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn census_like(seed: u64) -> Self {
        Self {
            n: 1080,
            m: 8,
            log_sigma: 1.0,
            seed,
        }
    }
}

fn column_scale(j: usize) -> f64 {
    1000.0 * (j + 1) as f64
}

/// Even-indexed columns are uniform on `[0, scale)`, odd-indexed ones are
/// log-normal with median `scale`.
pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    if spec.n < 2 || spec.m == 0 {
        return Err(Error::InvalidParameter(format!(
            "synthetic shape {}x{}",
            spec.n, spec.m
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut schema = Vec::with_capacity(spec.m);
    let mut columns = Vec::with_capacity(spec.m);
    for j in 0..spec.m {
        let scale = column_scale(j);
        let values: Vec<f64> = if j % 2 == 0 {
            let dist =
                Uniform::new(0.0, scale).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            dist.sample_iter(&mut rng).take(spec.n).collect()
        } else {
            let dist = LogNormal::new(scale.ln(), spec.log_sigma)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            dist.sample_iter(&mut rng).take(spec.n).collect()
        };
        let (lower, upper) = infer_numeric_bounds(&values, DEFAULT_BOUND_FACTOR)?;
        let kind = if j % 2 == 0 { "u" } else { "ln" };
        schema.push(AttributeSchema::numeric(
            format!("{kind}{j}"),
            lower,
            upper,
        )?);
        columns.push(Column::Numeric(values));
    }
    Dataset::new(schema, columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_bounds_and_determinism() {
        let spec = SynthSpec::census_like(3);
        let a = generate(&spec).unwrap();
        assert_eq!((a.n(), a.m()), (1080, 8));
        a.validate_bounds().unwrap();
        assert_eq!(a.schema()[1].name, "ln1");
        let (lo, hi) = a.schema()[0].bounds().unwrap();
        let max = a
            .column(0)
            .as_numeric()
            .unwrap()
            .iter()
            .copied()
            .fold(0.0, f64::max);
        assert_eq!(lo, 0.0);
        assert_eq!(hi, 1.5 * max);
        assert_eq!(a, generate(&spec).unwrap());
        assert_ne!(a, generate(&SynthSpec::census_like(4)).unwrap());
    }

    #[test]
    fn rejects_degenerate_shapes() {
        let mut spec = SynthSpec::census_like(0);
        spec.m = 0;
        assert!(generate(&spec).is_err());
    }
}
