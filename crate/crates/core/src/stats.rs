//! Per-axis averaging of gendered mass, Pearson's r, and polynomial least
//! squares with a t-based confidence band for the mean response.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::scm::Gender;
use crate::scorer::GenderMass;
use crate::templates::ProbeText;

pub const MIN_DEGREE: usize = 1;
pub const MAX_DEGREE: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("series has zero variance")]
    Degenerate,
    #[error("need at least {need} points, have {have}")]
    TooFewPoints { need: usize, have: usize },
    #[error("lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("polynomial degree {0} outside [1, 5]")]
    Degree(usize),
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("series csv: {0}")]
    Csv(String),
}

/// Averaged masses for one axis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub w_index: usize,
    pub w_value: String,
    pub mean_female: f64,
    pub mean_male: f64,
    pub n_probes: usize,
}

impl SeriesPoint {
    pub fn mean(&self, g: Gender) -> f64 {
        match g {
            Gender::Female => self.mean_female,
            Gender::Male => self.mean_male,
        }
    }
}

/// Sum of `values` after sorting, so the result does not depend on input order.
fn ordered_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

/// One point per distinct `w_index`, ordered by index.
pub fn aggregate(masses: &[(ProbeText, GenderMass)]) -> Vec<SeriesPoint> {
    let mut groups: BTreeMap<usize, (String, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (probe, mass) in masses {
        let entry = groups
            .entry(probe.w_index)
            .or_insert_with(|| (probe.w_value.clone(), Vec::new(), Vec::new()));
        if probe.w_value < entry.0 {
            entry.0 = probe.w_value.clone();
        }
        entry.1.push(mass.female);
        entry.2.push(mass.male);
    }
    groups
        .into_iter()
        .map(|(w_index, (w_value, mut f, mut m))| {
            let n = f.len();
            SeriesPoint {
                w_index,
                w_value,
                mean_female: ordered_sum(&mut f) / n as f64,
                mean_male: ordered_sum(&mut m) / n as f64,
                n_probes: n,
            }
        })
        .collect()
}

/// Sample Pearson correlation.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(StatsError::TooFewPoints { need: 3, have: xs.len() });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    // Relative threshold: a series that is constant up to rounding has no trend.
    let scale = |m: f64| (m.abs().max(1.0) * 1e-13).powi(2) * n;
    if sxx <= scale(mx) || syy <= scale(my) {
        return Err(StatsError::Degenerate);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Weighted least-squares polynomial with the pieces needed for its band.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyFit {
    pub coeffs: Vec<f64>,
    /// `(X^T W X)^{-1}`
    pub cov_unscaled: DMatrix<f64>,
    /// Residual mean square.
    pub s2: f64,
    pub t_crit: f64,
}

fn design_row(x: f64, p: usize) -> DVector<f64> {
    DVector::from_iterator(p, (0..p).map(|j| x.powi(j as i32)))
}

impl PolyFit {
    pub fn solve(xs: &[f64], ys: &[f64], weights: &[f64], degree: usize) -> Result<Self, StatsError> {
        let n = xs.len();
        let p = degree + 1;
        if n < p + 1 {
            return Err(StatsError::TooFewPoints { need: p + 1, have: n });
        }
        let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let a = DMatrix::from_fn(n, p, |i, j| sw[i] * xs[i].powi(j as i32));
        let b = DVector::from_iterator(n, ys.iter().zip(&sw).map(|(y, s)| y * s));
        let qr = a.qr();
        let r = qr.r();
        let max_diag = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        if (0..p).any(|i| r[(i, i)].abs() <= max_diag * 1e-12) {
            return Err(StatsError::RankDeficient(format!(
                "degree {degree} over {n} points"
            )));
        }
        let qtb = qr.q().transpose() * &b;
        let coeffs = r
            .solve_upper_triangular(&qtb)
            .ok_or_else(|| StatsError::RankDeficient("singular R".into()))?;
        let r_inv = r
            .clone()
            .try_inverse()
            .ok_or_else(|| StatsError::RankDeficient("singular R".into()))?;
        let cov_unscaled = &r_inv * r_inv.transpose();

        let rss: f64 = (0..n)
            .map(|i| {
                let fitted: f64 = (0..p).map(|j| coeffs[j] * xs[i].powi(j as i32)).sum();
                weights[i] * (ys[i] - fitted).powi(2)
            })
            .sum();
        let dof = (n - p) as f64;
        let t_crit = StudentsT::new(0.0, 1.0, dof)
            .expect("positive dof")
            .inverse_cdf(0.975);
        Ok(Self {
            coeffs: coeffs.iter().copied().collect(),
            cov_unscaled,
            s2: rss / dof,
            t_crit,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// Half-width of the 95% band for the mean response at `x`.
    pub fn half_width(&self, x: f64) -> f64 {
        let row = design_row(x, self.coeffs.len());
        let q = (row.transpose() * &self.cov_unscaled * &row)[(0, 0)].max(0.0);
        self.t_crit * (self.s2 * q).sqrt()
    }

    pub fn band(&self, x: f64) -> (f64, f64) {
        let y = self.eval(x);
        let h = self.half_width(x);
        (y - h, y + h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiPoint {
    pub x: f64,
    pub lower_f: f64,
    pub upper_f: f64,
    pub lower_m: f64,
    pub upper_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub degree: usize,
    pub coeffs_female: Vec<f64>,
    pub coeffs_male: Vec<f64>,
    pub slope_female: f64,
    pub slope_male: f64,
    /// `None` when the series has zero variance.
    pub pearson_female: Option<f64>,
    pub pearson_male: Option<f64>,
    pub ci: Vec<CiPoint>,
    #[serde(skip)]
    models: Option<Box<[PolyFit; 2]>>,
}

impl FitResult {
    pub fn pearson(&self, g: Gender) -> Option<f64> {
        match g {
            Gender::Female => self.pearson_female,
            Gender::Male => self.pearson_male,
        }
    }

    pub fn slope(&self, g: Gender) -> f64 {
        match g {
            Gender::Female => self.slope_female,
            Gender::Male => self.slope_male,
        }
    }

    pub fn is_degenerate(&self, g: Gender) -> bool {
        self.pearson(g).is_none()
    }

    /// The fitted models, present on results computed in this process.
    pub fn model(&self, g: Gender) -> Option<&PolyFit> {
        self.models.as_ref().map(|m| &m[g as usize])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit serializes")
    }
}

/// `w_index / max(w_index)`, the normalized position on the axis.
pub fn normalized_x(series: &[SeriesPoint]) -> Vec<f64> {
    let top = series.iter().map(|p| p.w_index).max().unwrap_or(0).max(1) as f64;
    series.iter().map(|p| p.w_index as f64 / top).collect()
}

/// Fits mean masses against the normalized axis index.
///
/// Points are weighted by `n_probes` only when the counts differ. Slopes
/// always come from a separate degree-1 fit. A zero-variance series yields
/// `None` for its Pearson coefficient rather than an error.
pub fn fit(series: &[SeriesPoint], degree: usize) -> Result<FitResult, StatsError> {
    if !(MIN_DEGREE..=MAX_DEGREE).contains(&degree) {
        return Err(StatsError::Degree(degree));
    }
    if series.len() < degree + 2 {
        return Err(StatsError::TooFewPoints { need: degree + 2, have: series.len() });
    }
    let mut idx: Vec<usize> = series.iter().map(|p| p.w_index).collect();
    idx.sort_unstable();
    if idx.windows(2).any(|w| w[0] == w[1]) || idx.last() == Some(&0) {
        return Err(StatsError::RankDeficient("duplicate x after normalization".into()));
    }

    let xs = normalized_x(series);
    let equal = series.windows(2).all(|w| w[0].n_probes == w[1].n_probes);
    let weights: Vec<f64> = series
        .iter()
        .map(|p| if equal { 1.0 } else { p.n_probes as f64 })
        .collect();
    let yf: Vec<f64> = series.iter().map(|p| p.mean_female).collect();
    let ym: Vec<f64> = series.iter().map(|p| p.mean_male).collect();

    let female = PolyFit::solve(&xs, &yf, &weights, degree)?;
    let male = PolyFit::solve(&xs, &ym, &weights, degree)?;
    let (slope_female, slope_male) = if degree == 1 {
        (female.coeffs[1], male.coeffs[1])
    } else {
        (
            PolyFit::solve(&xs, &yf, &weights, 1)?.coeffs[1],
            PolyFit::solve(&xs, &ym, &weights, 1)?.coeffs[1],
        )
    };
    let ci = xs
        .iter()
        .map(|&x| {
            let (lower_f, upper_f) = female.band(x);
            let (lower_m, upper_m) = male.band(x);
            CiPoint { x, lower_f, upper_f, lower_m, upper_m }
        })
        .collect();
    let lenient = |r: Result<f64, StatsError>| match r {
        Ok(v) => Ok(Some(v)),
        Err(StatsError::Degenerate) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(FitResult {
        degree,
        coeffs_female: female.coeffs.clone(),
        coeffs_male: male.coeffs.clone(),
        slope_female,
        slope_male,
        pearson_female: lenient(pearson_r(&xs, &yf))?,
        pearson_male: lenient(pearson_r(&xs, &ym))?,
        ci,
        models: Some(Box::new([female, male])),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub label: String,
    pub slope_female: String,
    pub r_female: String,
    pub slope_male: String,
    pub r_male: String,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"))
}

/// One row per run, three decimals, `n/a` for undefined correlations.
pub fn report_table(runs: &[(String, FitResult)]) -> Vec<ReportRow> {
    runs.iter()
        .map(|(label, f)| ReportRow {
            label: label.clone(),
            slope_female: cell(Some(f.slope_female)),
            r_female: cell(f.pearson_female),
            slope_male: cell(Some(f.slope_male)),
            r_male: cell(f.pearson_male),
        })
        .collect()
}

pub fn render_report(rows: &[ReportRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>17}  {:>17}", "", "Female", "Male");
    let _ = writeln!(
        out,
        "{:<width$}  {:>8} {:>8}  {:>8} {:>8}",
        "Run", "Slope", "r", "Slope", "r"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8} {:>8}  {:>8} {:>8}",
            r.label, r.slope_female, r.r_female, r.slope_male, r.r_male
        );
    }
    out
}

pub fn write_series_csv<W: Write>(series: &[SeriesPoint], mut out: W) -> std::io::Result<()> {
    let mut wtr = csv::Writer::from_writer(&mut out);
    let io = |e: csv::Error| std::io::Error::other(e.to_string());
    wtr.write_record(["w_index", "w_value", "mean_female", "mean_male", "n_probes"])
        .map_err(io)?;
    for p in series {
        wtr.write_record([
            p.w_index.to_string(),
            p.w_value.clone(),
            p.mean_female.to_string(),
            p.mean_male.to_string(),
            p.n_probes.to_string(),
        ])
        .map_err(io)?;
    }
    wtr.flush()
}

pub fn read_series_csv<R: Read>(input: R) -> Result<Vec<SeriesPoint>, StatsError> {
    let mut rdr = csv::Reader::from_reader(input);
    let err = |e: csv::Error| StatsError::Csv(e.to_string());
    let headers = rdr.headers().map_err(err)?;
    if headers != vec!["w_index", "w_value", "mean_female", "mean_male", "n_probes"] {
        return Err(StatsError::Csv(format!("unexpected header {headers:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(err)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn point(w: usize, f: f64, m: f64) -> SeriesPoint {
        SeriesPoint { w_index: w, w_value: w.to_string(), mean_female: f, mean_male: m, n_probes: 36 }
    }

    fn probe(w: usize) -> ProbeText {
        ProbeText {
            text: "[MASK]".into(),
            w_index: w,
            w_value: format!("v{w}"),
            verb: None,
            life_stage: None,
            template_id: 0,
        }
    }

    #[test]
    fn aggregate_examples() {
        let masses: Vec<_> = (0..36)
            .map(|_| (probe(4), GenderMass { female: 0.5, male: 0.1 }))
            .collect();
        let s = aggregate(&masses);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].mean_female, 0.5);
        assert_eq!(s[0].n_probes, 36);

        let s = aggregate(&[
            (probe(1), GenderMass { female: 0.2, male: 0.0 }),
            (probe(0), GenderMass { female: 0.9, male: 0.0 }),
            (probe(1), GenderMass { female: 0.4, male: 0.0 }),
        ]);
        assert_eq!(s.iter().map(|p| p.w_index).collect::<Vec<_>>(), [0, 1]);
        assert_abs_diff_eq!(s[1].mean_female, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn pearson_examples() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.5];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert_abs_diff_eq!(pearson_r(&xs, &ys).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert_abs_diff_eq!(pearson_r(&xs, &neg).unwrap(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pearson_r(&[0.0, 1.0, 2.0], &[0.0, 1.0, 0.0]).unwrap(), 0.0, epsilon = 1e-15);
        assert_eq!(pearson_r(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]), Err(StatsError::Degenerate));
        assert_eq!(pearson_r(&[0.0, 1.0, 2.0], &[0.3, 0.3, 0.3]), Err(StatsError::Degenerate));
        assert!(matches!(pearson_r(&[0.0, 1.0], &[0.0, 1.0]), Err(StatsError::TooFewPoints { .. })));
    }

    #[test]
    fn exact_line() {
        let series: Vec<_> = (0..22)
            .map(|w| {
                let x = w as f64 / 21.0;
                point(w, 0.1 + 0.5 * x, 0.6 - 0.2 * x)
            })
            .collect();
        let f = fit(&series, 1).unwrap();
        assert_abs_diff_eq!(f.slope_female, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f.slope_male, -0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(f.pearson_female.unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.pearson_male.unwrap(), -1.0, epsilon = 1e-12);
        for c in &f.ci {
            assert_abs_diff_eq!(c.upper_f - c.lower_f, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn fit_preconditions() {
        let series: Vec<_> = (0..4).map(|w| point(w, w as f64, 0.0)).collect();
        assert_eq!(fit(&series, 0).unwrap_err(), StatsError::Degree(0));
        assert_eq!(fit(&series, 6).unwrap_err(), StatsError::Degree(6));
        assert!(matches!(fit(&series, 3), Err(StatsError::TooFewPoints { .. })));
        let dup = vec![point(0, 0.1, 0.0), point(1, 0.2, 0.0), point(1, 0.3, 0.0), point(2, 0.1, 0.0)];
        assert!(matches!(fit(&dup, 1), Err(StatsError::RankDeficient(_))));
    }

    #[test]
    fn constant_series_is_flagged() {
        let series: Vec<_> = (0..6).map(|w| point(w, 0.4, 0.0)).collect();
        let f = fit(&series, 1).unwrap();
        assert!(f.is_degenerate(Gender::Female));
        assert!(f.is_degenerate(Gender::Male));
        assert_abs_diff_eq!(f.slope_female, 0.0, epsilon = 1e-12);
        let json: serde_json::Value = serde_json::from_str(&f.to_json()).unwrap();
        assert!(json["pearson_female"].is_null());
    }

    #[test]
    fn higher_degree_residuals_sum_to_zero() {
        let series: Vec<_> = (0..22)
            .map(|w| point(w, ((w * 7919) % 13) as f64 / 13.0, 0.1))
            .collect();
        let f = fit(&series, 3).unwrap();
        let xs = normalized_x(&series);
        let model = f.model(Gender::Female).unwrap();
        let resid: f64 = series.iter().zip(&xs).map(|(p, &x)| p.mean_female - model.eval(x)).sum();
        assert_abs_diff_eq!(resid, 0.0, epsilon = 1e-9);
        assert_eq!(f.coeffs_female.len(), 4);
        for c in &f.ci {
            let y = model.eval(c.x);
            assert!(c.lower_f <= y && y <= c.upper_f);
        }
    }

    #[test]
    fn unequal_counts_are_weighted() {
        // A heavy point at the end pulls the weighted line toward itself.
        let mut series: Vec<_> = (0..5).map(|w| point(w, 0.1 * w as f64, 0.0)).collect();
        series[4].mean_female = 1.0;
        let unweighted = fit(&series, 1).unwrap().slope_female;
        series[4].n_probes = 360;
        let weighted = fit(&series, 1).unwrap().slope_female;
        assert!(weighted > unweighted);
    }

    #[test]
    fn report_rows() {
        let mut f = fit(&(0..5).map(|w| point(w, w as f64 * 0.1, 0.2)).collect::<Vec<_>>(), 1).unwrap();
        f.slope_female = 0.235;
        f.pearson_female = Some(0.826);
        f.slope_male = -0.016;
        f.pearson_male = Some(-0.116);
        let mut degenerate = f.clone();
        degenerate.pearson_female = None;
        let rows = report_table(&[("BERT large".into(), f), ("flat".into(), degenerate)]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].label, "BERT large");
        assert_eq!(
            (rows[0].slope_female.as_str(), rows[0].r_female.as_str(), rows[0].slope_male.as_str(), rows[0].r_male.as_str()),
            ("0.235", "0.826", "-0.016", "-0.116")
        );
        assert_eq!(rows[1].r_female, "n/a");
        let text = render_report(&rows);
        assert!(text.contains("0.235"));
        assert!(text.lines().nth(2).unwrap().starts_with("BERT large"));
    }

    #[test]
    fn series_csv_round_trip() {
        let series = vec![point(0, 0.25, 0.5), point(1, 1.0 / 3.0, 0.125)];
        let mut buf = Vec::new();
        write_series_csv(&series, &mut buf).unwrap();
        assert!(buf.starts_with(b"w_index,w_value,mean_female,mean_male,n_probes\n"));
        assert_eq!(read_series_csv(buf.as_slice()).unwrap(), series);
    }

    proptest! {
        #[test]
        fn aggregate_is_permutation_invariant(
            raw in prop::collection::vec((0usize..5, 0.0..1.0f64, 0.0..1.0f64), 1..60),
            seed in any::<u64>(),
        ) {
            let masses: Vec<_> = raw.iter().map(|&(w, f, m)| (probe(w), GenderMass { female: f, male: m })).collect();
            let mut shuffled = masses.clone();
            let n = shuffled.len();
            let mut state = seed;
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (state >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(aggregate(&masses), aggregate(&shuffled));
        }
    }
}
