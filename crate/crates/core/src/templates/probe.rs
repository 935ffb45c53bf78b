use serde::{Deserialize, Serialize};

use super::{AxisCategory, AxisSpec, GenderLexicon, TemplateError};

/// Canonical mask placeholder in rendered probes.
pub const MASK: &str = "[MASK]";

pub const VERBS: [&str; 3] = ["was", "is", "will be"];

pub const LIFE_STAGES: [&str; 6] = [
    "a child",
    "a kid",
    "an adolescent",
    "a teenager",
    "an adult",
    "all grown up",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Segment<'a> {
    Text(&'a str),
    Mask,
    Verb,
    LifeStage,
    W,
}

fn parse_pattern(pattern: &str) -> Result<Vec<Segment<'_>>, TemplateError> {
    let mut out = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            out.push(Segment::Text(&rest[..open]));
        }
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| TemplateError::Pattern(format!("unclosed placeholder in {pattern:?}")))?;
        let seg = match &rest[open + 1..open + close] {
            "mask" => Segment::Mask,
            "verb" => Segment::Verb,
            "life_stage" => Segment::LifeStage,
            "w" => Segment::W,
            other => {
                return Err(TemplateError::Pattern(format!(
                    "unknown placeholder {{{other}}} in {pattern:?}"
                )))
            }
        };
        out.push(seg);
        rest = &rest[open + close + 1..];
    }
    if !rest.is_empty() {
        out.push(Segment::Text(rest));
    }
    Ok(out)
}

/// A probe pattern with `{mask}`, `{w}` and optional `{verb}`/`{life_stage}` slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub pattern: String,
    pub verbs: Vec<String>,
    pub life_stages: Vec<String>,
}

impl TemplateSpec {
    /// A pattern with the standard verb and life-stage fillers.
    pub fn new(pattern: &str) -> Result<Self, TemplateError> {
        let spec = Self {
            pattern: pattern.to_string(),
            verbs: VERBS.iter().map(|s| s.to_string()).collect(),
            life_stages: LIFE_STAGES.iter().map(|s| s.to_string()).collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let segs = parse_pattern(&self.pattern)?;
        let count = |s: Segment| segs.iter().filter(|x| **x == s).count();
        let bad = |msg: &str| Err(TemplateError::Pattern(format!("{msg}: {:?}", self.pattern)));
        if count(Segment::Mask) != 1 {
            return bad("pattern needs exactly one {mask}");
        }
        if count(Segment::W) != 1 {
            return bad("pattern needs exactly one {w}");
        }
        if count(Segment::Verb) > 1 || count(Segment::LifeStage) > 1 {
            return bad("{verb} and {life_stage} may appear at most once");
        }
        if segs.iter().any(|s| matches!(s, Segment::Text(t) if t.contains(MASK))) {
            return bad("pattern must use {mask}, not a literal mask token");
        }
        if count(Segment::Verb) == 1 && self.verbs.is_empty() {
            return bad("pattern uses {verb} but no verbs are given");
        }
        if count(Segment::LifeStage) == 1 && self.life_stages.is_empty() {
            return bad("pattern uses {life_stage} but no life stages are given");
        }
        Ok(())
    }

    fn uses(&self, seg: Segment) -> bool {
        parse_pattern(&self.pattern).is_ok_and(|s| s.contains(&seg))
    }

    /// How many probes this template yields per axis value.
    pub fn renderings_per_value(&self) -> usize {
        let v = if self.uses(Segment::Verb) { self.verbs.len() } else { 1 };
        let l = if self.uses(Segment::LifeStage) { self.life_stages.len() } else { 1 };
        v * l
    }

    /// Reads one pattern per line, each with the standard fillers.
    pub fn from_lines(text: &str) -> Result<Vec<Self>, TemplateError> {
        let specs: Vec<Self> = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.trim().is_empty())
            .map(Self::new)
            .collect::<Result<_, _>>()?;
        if specs.is_empty() {
            return Err(TemplateError::Pattern("template file has no patterns".into()));
        }
        Ok(specs)
    }
}

pub fn builtin_templates(category: AxisCategory) -> Result<Vec<TemplateSpec>, TemplateError> {
    let patterns: &[&str] = match category {
        AxisCategory::Date | AxisCategory::Place => &[
            "{mask} {verb} {life_stage} in {w}.",
            "In {w}, {mask} {verb} {life_stage}.",
        ],
        AxisCategory::Subreddit => &["{mask} {verb} {life_stage}. {w}."],
        AxisCategory::Custom => {
            return Err(TemplateError::Pattern(
                "custom templates are supplied by the caller".into(),
            ))
        }
    };
    patterns.iter().map(|p| TemplateSpec::new(p)).collect()
}

/// One rendered, gender-neutral masked input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeText {
    pub text: String,
    pub w_index: usize,
    pub w_value: String,
    pub verb: Option<String>,
    pub life_stage: Option<String>,
    pub template_id: usize,
}

pub fn mask_count(text: &str) -> usize {
    text.matches(MASK).count()
}

/// Renders every template against every axis value, axis-major then
/// template, verb and life stage.
pub fn render_probes(
    templates: &[TemplateSpec],
    axis: &AxisSpec,
) -> Result<Vec<ProbeText>, TemplateError> {
    if templates.is_empty() {
        return Err(TemplateError::Pattern("no templates given".into()));
    }
    if axis.is_empty() {
        return Err(TemplateError::Axis("axis has no values".into()));
    }
    let parsed = templates
        .iter()
        .map(|t| {
            t.validate()?;
            parse_pattern(&t.pattern)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut probes = Vec::new();
    for (w_index, w_value) in axis.values.iter().enumerate() {
        for (template_id, (spec, segs)) in templates.iter().zip(&parsed).enumerate() {
            let verbs: Vec<Option<&str>> = if segs.contains(&Segment::Verb) {
                spec.verbs.iter().map(|v| Some(v.as_str())).collect()
            } else {
                vec![None]
            };
            let stages: Vec<Option<&str>> = if segs.contains(&Segment::LifeStage) {
                spec.life_stages.iter().map(|v| Some(v.as_str())).collect()
            } else {
                vec![None]
            };
            for verb in &verbs {
                for stage in &stages {
                    let mut text = String::new();
                    for seg in segs {
                        match seg {
                            Segment::Text(t) => text.push_str(t),
                            Segment::Mask => text.push_str(MASK),
                            Segment::Verb => text.push_str(verb.unwrap_or_default()),
                            Segment::LifeStage => text.push_str(stage.unwrap_or_default()),
                            Segment::W => text.push_str(w_value),
                        }
                    }
                    probes.push(ProbeText {
                        text,
                        w_index,
                        w_value: w_value.clone(),
                        verb: verb.map(String::from),
                        life_stage: stage.map(String::from),
                        template_id,
                    });
                }
            }
        }
    }
    Ok(probes)
}

/// Words of `text` with `[MASK]` removed. A word is a whitespace-delimited
/// token stripped of leading and trailing non-alphanumeric characters, so
/// "her." is "her" but "male-pattern" stays one word.
fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(MASK)
        .flat_map(str::split_whitespace)
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
}

/// True iff no lexicon word appears as a whole word outside the mask.
pub fn validate_neutral(probe: &ProbeText, lexicon: &GenderLexicon) -> bool {
    words(&probe.text).all(|w| lexicon.gender_of(&w).is_none())
}
