use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::templates::{builtin_lexicon, GenderLexicon};

#[derive(Debug, Error)]
pub enum ScmError {
    #[error("invalid SCM parameters: {0}")]
    Config(String),
    #[error("posterior undefined at w={0}: both access probabilities are zero")]
    UndefinedPosterior(usize),
    #[error("lexicon has no {0} words to draw from")]
    EmptyLexiconColumn(Gender),
    #[error("csv export failed: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Female => "female",
            Gender::Male => "male",
        })
    }
}

/// Structural-equation parameters for the access variable.
///
/// `P(Z=1 | w, g) = clamp(base_g + gain_g * w / (K-1), 0, 1)` with `W`
/// uniform over `K` levels and `G ~ Bernoulli(p_female)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmParams {
    pub p_female: f64,
    pub axis_levels: usize,
    pub access_base_f: f64,
    pub access_gain_f: f64,
    pub access_base_m: f64,
    pub access_gain_m: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl Default for ScmParams {
    fn default() -> Self {
        Self {
            p_female: 0.5,
            axis_levels: 22,
            access_base_f: 0.2,
            access_gain_f: 0.6,
            access_base_m: 0.5,
            access_gain_m: 0.0,
            rng_seed: 0x5EED,
        }
    }
}

impl ScmParams {
    /// Same access curve for both genders, so selection carries no gender signal.
    pub fn symmetric() -> Self {
        Self {
            access_base_f: 0.5,
            access_gain_f: 0.0,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ScmError> {
        if self.axis_levels < 2 {
            return Err(ScmError::Config(format!(
                "axis_levels must be >= 2, got {}",
                self.axis_levels
            )));
        }
        if !(0.0..=1.0).contains(&self.p_female) {
            return Err(ScmError::Config(format!(
                "p_female must lie in [0, 1], got {}",
                self.p_female
            )));
        }
        let coeffs = [
            self.access_base_f,
            self.access_gain_f,
            self.access_base_m,
            self.access_gain_m,
        ];
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(ScmError::Config("access coefficients must be finite".into()));
        }
        Ok(())
    }

    /// `w / (K-1)`, in `[0, 1]`.
    pub fn normalized(&self, w: usize) -> f64 {
        w as f64 / (self.axis_levels - 1) as f64
    }

    pub fn access_prob(&self, w: usize, g: Gender) -> f64 {
        let (base, gain) = match g {
            Gender::Female => (self.access_base_f, self.access_gain_f),
            Gender::Male => (self.access_base_m, self.access_gain_m),
        };
        (base + gain * self.normalized(w)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationSample {
    pub w: usize,
    pub g: Gender,
    pub z: bool,
    pub s: bool,
    pub y_word: String,
}

// Independent ChaCha streams per exogenous variable.
const STREAM_W: u64 = 0;
const STREAM_G: u64 = 1;
const STREAM_U_Z: u64 = 2;
const STREAM_Y: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn sample_population(params: &ScmParams, n: usize) -> Result<Vec<PopulationSample>, ScmError> {
    sample_population_with(params, n, &builtin_lexicon())
}

/// Draws `n` individuals; `y_word` comes uniformly from the distinct words of
/// the lexicon column matching the sampled gender.
pub fn sample_population_with(
    params: &ScmParams,
    n: usize,
    lexicon: &GenderLexicon,
) -> Result<Vec<PopulationSample>, ScmError> {
    params.validate()?;
    if n == 0 {
        return Err(ScmError::Config("sample size must be >= 1".into()));
    }
    let female = lexicon.distinct_words(Gender::Female);
    let male = lexicon.distinct_words(Gender::Male);
    if female.is_empty() {
        return Err(ScmError::EmptyLexiconColumn(Gender::Female));
    }
    if male.is_empty() {
        return Err(ScmError::EmptyLexiconColumn(Gender::Male));
    }

    let mut rng_w = stream(params.rng_seed, STREAM_W);
    let mut rng_g = stream(params.rng_seed, STREAM_G);
    let mut rng_u = stream(params.rng_seed, STREAM_U_Z);
    let mut rng_y = stream(params.rng_seed, STREAM_Y);

    let samples = (0..n)
        .map(|_| {
            let w = rng_w.random_range(0..params.axis_levels);
            let g = if rng_g.random_bool(params.p_female) {
                Gender::Female
            } else {
                Gender::Male
            };
            let u: f64 = rng_u.random();
            let z = u < params.access_prob(w, g);
            let column = match g {
                Gender::Female => &female,
                Gender::Male => &male,
            };
            let y_word = column[rng_y.random_range(0..column.len())].to_string();
            PopulationSample { w, g, z, s: z, y_word }
        })
        .collect();
    Ok(samples)
}

/// Keeps the samples with `s = 1`, in order.
pub fn apply_selection(samples: &[PopulationSample]) -> Vec<PopulationSample> {
    samples.iter().filter(|s| s.s).cloned().collect()
}

/// `P(G = female | W = w, S = 1)` by Bayes over the access function.
pub fn posterior_female_given_w(params: &ScmParams, w: usize) -> Result<f64, ScmError> {
    params.validate()?;
    if w >= params.axis_levels {
        return Err(ScmError::Config(format!(
            "w={w} outside 0..{}",
            params.axis_levels
        )));
    }
    let f = params.p_female * params.access_prob(w, Gender::Female);
    let m = (1.0 - params.p_female) * params.access_prob(w, Gender::Male);
    if f + m == 0.0 {
        return Err(ScmError::UndefinedPosterior(w));
    }
    Ok(f / (f + m))
}

/// `P(S = 1)` averaged over uniform `W` and Bernoulli `G`.
pub fn expected_selection_rate(params: &ScmParams) -> f64 {
    let k = params.axis_levels;
    (0..k)
        .map(|w| {
            params.p_female * params.access_prob(w, Gender::Female)
                + (1.0 - params.p_female) * params.access_prob(w, Gender::Male)
        })
        .sum::<f64>()
        / k as f64
}

/// Closed-form joint `P(w, g | S = 1)`, rows indexed by `w`, columns `[female, male]`.
pub fn selected_joint(params: &ScmParams) -> Result<Vec<[f64; 2]>, ScmError> {
    params.validate()?;
    let k = params.axis_levels;
    let raw: Vec<[f64; 2]> = (0..k)
        .map(|w| {
            [
                params.p_female * params.access_prob(w, Gender::Female),
                (1.0 - params.p_female) * params.access_prob(w, Gender::Male),
            ]
        })
        .collect();
    let total: f64 = raw.iter().map(|r| r[0] + r[1]).sum();
    if total == 0.0 {
        return Err(ScmError::Config("no individual can be selected".into()));
    }
    Ok(raw.into_iter().map(|[f, m]| [f / total, m / total]).collect())
}

/// Exact `I(W; G | S = 1)` in nats.
pub fn analytic_selected_mi(params: &ScmParams) -> Result<f64, ScmError> {
    let joint = selected_joint(params)?;
    let pg = [
        joint.iter().map(|r| r[0]).sum::<f64>(),
        joint.iter().map(|r| r[1]).sum::<f64>(),
    ];
    let mi = joint
        .iter()
        .map(|row| {
            let pw = row[0] + row[1];
            row.iter()
                .zip(pg)
                .filter(|(&p, _)| p > 0.0)
                .map(|(&p, g)| p * (p / (pw * g)).ln())
                .sum::<f64>()
        })
        .sum();
    Ok(mi)
}

/// Writes samples as CSV with header `w,g,z,s,y_word`.
pub fn write_samples_csv<W: Write>(samples: &[PopulationSample], out: W) -> Result<(), ScmError> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["w", "g", "z", "s", "y_word"])?;
    for s in samples {
        wtr.write_record([
            s.w.to_string(),
            s.g.to_string(),
            (s.z as u8).to_string(),
            (s.s as u8).to_string(),
            s.y_word.clone(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hand_bayes_examples() {
        let p = ScmParams::default();
        assert_abs_diff_eq!(posterior_female_given_w(&p, 0).unwrap(), 0.2 / 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(posterior_female_given_w(&p, 21).unwrap(), 0.8 / 1.3, epsilon = 1e-12);
        let sym = ScmParams::symmetric();
        for w in 0..sym.axis_levels {
            assert_abs_diff_eq!(posterior_female_given_w(&sym, w).unwrap(), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn undefined_posterior() {
        let p = ScmParams {
            access_base_f: 0.0,
            access_gain_f: 0.0,
            access_base_m: 0.0,
            access_gain_m: 0.0,
            ..ScmParams::default()
        };
        assert!(matches!(
            posterior_female_given_w(&p, 3),
            Err(ScmError::UndefinedPosterior(3))
        ));
    }

    #[test]
    fn degenerate_params() {
        let bad_k = ScmParams { axis_levels: 1, ..ScmParams::default() };
        assert!(matches!(sample_population(&bad_k, 10), Err(ScmError::Config(_))));
        let bad_p = ScmParams { p_female: 1.5, ..ScmParams::default() };
        assert!(matches!(sample_population(&bad_p, 10), Err(ScmError::Config(_))));
        assert!(matches!(
            sample_population(&ScmParams::default(), 0),
            Err(ScmError::Config(_))
        ));
    }

    #[test]
    fn access_is_clamped() {
        let p = ScmParams {
            access_base_f: -0.5,
            access_gain_f: 3.0,
            ..ScmParams::default()
        };
        for w in 0..p.axis_levels {
            let a = p.access_prob(w, Gender::Female);
            assert!((0.0..=1.0).contains(&a));
        }
        assert_eq!(p.access_prob(0, Gender::Female), 0.0);
        assert_eq!(p.access_prob(21, Gender::Female), 1.0);
    }

    #[test]
    fn selection_filters() {
        let lex = builtin_lexicon();
        let all_in = ScmParams {
            access_base_f: 1.0,
            access_gain_f: 0.0,
            access_base_m: 1.0,
            ..ScmParams::default()
        };
        let s = sample_population_with(&all_in, 500, &lex).unwrap();
        assert_eq!(apply_selection(&s), s);

        let none = ScmParams {
            access_base_f: 0.0,
            access_gain_f: 0.0,
            access_base_m: 0.0,
            ..ScmParams::default()
        };
        let s = sample_population_with(&none, 500, &lex).unwrap();
        assert!(apply_selection(&s).is_empty());
    }

    #[test]
    fn words_match_gender() {
        let lex = builtin_lexicon();
        for s in sample_population(&ScmParams::default(), 2000).unwrap() {
            assert!(lex.column_contains(s.g, &s.y_word));
            assert_eq!(s.s, s.z);
        }
    }

    #[test]
    fn csv_header() {
        let s = sample_population(&ScmParams::default(), 3).unwrap();
        let mut buf = Vec::new();
        write_samples_csv(&s, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("w,g,z,s,y_word\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn analytic_mi_zero_when_symmetric() {
        assert_abs_diff_eq!(analytic_selected_mi(&ScmParams::symmetric()).unwrap(), 0.0, epsilon = 1e-15);
        assert!(analytic_selected_mi(&ScmParams::default()).unwrap() > 0.0);
    }
}
