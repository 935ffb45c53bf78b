//! Plug-in mutual information and Pearson chi-squared tests on sampled variables.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use super::model::{Gender, PopulationSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DependenceError {
    #[error("no samples to measure")]
    Empty,
    #[error("variable {0} has a single observed level")]
    Degenerate(Variable),
    #[error("unknown variable {0:?} (expected one of W, G, Z, S, Y)")]
    UnknownVariable(String),
}

/// A column of [`PopulationSample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variable {
    W,
    G,
    Z,
    S,
    Y,
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Variable {
    type Err = DependenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "W" => Ok(Variable::W),
            "G" => Ok(Variable::G),
            "Z" => Ok(Variable::Z),
            "S" => Ok(Variable::S),
            "Y" => Ok(Variable::Y),
            _ => Err(DependenceError::UnknownVariable(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceReport {
    pub n: usize,
    pub mi_nats: f64,
    pub chi2: f64,
    pub p_value: f64,
    pub dof: usize,
}

impl fmt::Display for DependenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} mi={:.6} nats chi2={:.3} dof={} p={:.3e}",
            self.n, self.mi_nats, self.chi2, self.dof, self.p_value
        )
    }
}

/// Maps each sample to a dense level code for one variable.
fn codes(samples: &[PopulationSample], var: Variable) -> Vec<usize> {
    match var {
        Variable::W => samples.iter().map(|s| s.w).collect(),
        Variable::G => samples
            .iter()
            .map(|s| match s.g {
                Gender::Female => 0,
                Gender::Male => 1,
            })
            .collect(),
        Variable::Z => samples.iter().map(|s| s.z as usize).collect(),
        Variable::S => samples.iter().map(|s| s.s as usize).collect(),
        Variable::Y => {
            let mut intern: HashMap<&str, usize> = HashMap::new();
            samples
                .iter()
                .map(|s| {
                    let next = intern.len();
                    *intern.entry(s.y_word.as_str()).or_insert(next)
                })
                .collect()
        }
    }
}

fn distinct(codes: &[usize]) -> usize {
    let mut v = codes.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

struct Table {
    n: f64,
    cells: BTreeMap<(usize, usize), f64>,
    rows: BTreeMap<usize, f64>,
    cols: BTreeMap<usize, f64>,
}

impl Table {
    fn mi(&self) -> f64 {
        self.cells
            .iter()
            .map(|(&(x, y), &c)| {
                let p = c / self.n;
                p * (c * self.n / (self.rows[&x] * self.cols[&y])).ln()
            })
            .sum::<f64>()
            .max(0.0)
    }

    fn chi2(&self) -> f64 {
        let mut stat = 0.0;
        for (&x, &rx) in &self.rows {
            for (&y, &cy) in &self.cols {
                let expected = rx * cy / self.n;
                let observed = self.cells.get(&(x, y)).copied().unwrap_or(0.0);
                stat += (observed - expected).powi(2) / expected;
            }
        }
        stat
    }

    fn dof(&self) -> usize {
        (self.rows.len() - 1) * (self.cols.len() - 1)
    }
}

fn tabulate(xs: &[usize], ys: &[usize], idx: impl Iterator<Item = usize>) -> Table {
    let mut t = Table {
        n: 0.0,
        cells: BTreeMap::new(),
        rows: BTreeMap::new(),
        cols: BTreeMap::new(),
    };
    for i in idx {
        t.n += 1.0;
        *t.cells.entry((xs[i], ys[i])).or_default() += 1.0;
        *t.rows.entry(xs[i]).or_default() += 1.0;
        *t.cols.entry(ys[i]).or_default() += 1.0;
    }
    t
}

/// Measures dependence between `x` and `y`, optionally within strata of `condition`.
///
/// Conditional MI is the stratum-weighted average of per-stratum MI; the
/// chi-squared statistic and degrees of freedom are summed over strata.
pub fn dependence_report(
    samples: &[PopulationSample],
    x: Variable,
    y: Variable,
    condition: Option<Variable>,
) -> Result<DependenceReport, DependenceError> {
    if samples.is_empty() {
        return Err(DependenceError::Empty);
    }
    let xs = codes(samples, x);
    let ys = codes(samples, y);
    if distinct(&xs) < 2 {
        return Err(DependenceError::Degenerate(x));
    }
    if distinct(&ys) < 2 {
        return Err(DependenceError::Degenerate(y));
    }

    let n = samples.len();
    let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    match condition {
        Some(c) => {
            for (i, code) in codes(samples, c).into_iter().enumerate() {
                strata.entry(code).or_default().push(i);
            }
        }
        None => {
            strata.insert(0, (0..n).collect());
        }
    }

    let mut mi = 0.0;
    let mut chi2 = 0.0;
    let mut dof = 0;
    for members in strata.values() {
        let t = tabulate(&xs, &ys, members.iter().copied());
        mi += t.n / n as f64 * t.mi();
        let d = t.dof();
        if d > 0 {
            chi2 += t.chi2();
            dof += d;
        }
    }
    if dof == 0 {
        // Every stratum pins one of the variables.
        return Err(DependenceError::Degenerate(condition.unwrap_or(x)));
    }
    let p_value = ChiSquared::new(dof as f64)
        .expect("dof >= 1")
        .sf(chi2)
        .clamp(0.0, 1.0);
    Ok(DependenceReport { n, mi_nats: mi, chi2, p_value, dof })
}
