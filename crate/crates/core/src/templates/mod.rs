//! Gender-neutral probe generation: the gendered lexicon, the built-in x-axis
//! value lists, and masked sentence templates.

mod axis;
mod lexicon;
mod probe;

use thiserror::Error;

pub use axis::{builtin_axis, date_axis, AxisCategory, AxisSpec, DATE_END, DATE_START, DATE_STEP};
pub use lexicon::{builtin_lexicon, GenderLexicon};
pub use probe::{
    builtin_templates, mask_count, render_probes, validate_neutral, ProbeText, TemplateSpec,
    LIFE_STAGES, MASK, VERBS,
};

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template error: {0}")]
    Pattern(String),
    #[error("axis error: {0}")]
    Axis(String),
    #[error("lexicon error: {0}")]
    Lexicon(String),
    #[error("lexicon csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
