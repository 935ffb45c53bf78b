use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::TemplateError;
use crate::scm::Gender;

const BUILTIN_PAIRS: [(&str, &str); 12] = [
    ("he", "she"),
    ("him", "her"),
    ("his", "her"),
    ("himself", "herself"),
    ("male", "female"),
    ("man", "woman"),
    ("men", "women"),
    ("husband", "wife"),
    ("father", "mother"),
    ("boyfriend", "girlfriend"),
    ("brother", "sister"),
    ("actor", "actress"),
];

/// Explicitly gendered single-token words as `(male, female)` pairs.
///
/// A column may repeat a word across pairs ("her" answers both "him" and
/// "his"); membership queries treat each column as a set. Empty cells are
/// allowed so one-sided lexicons can be expressed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenderLexicon {
    pairs: Vec<(String, String)>,
}

pub fn builtin_lexicon() -> GenderLexicon {
    GenderLexicon {
        pairs: BUILTIN_PAIRS
            .iter()
            .map(|&(m, f)| (m.to_string(), f.to_string()))
            .collect(),
    }
}

impl GenderLexicon {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self, TemplateError> {
        let pairs: Vec<(String, String)> = pairs
            .into_iter()
            .map(|(m, f)| (m.trim().to_lowercase(), f.trim().to_lowercase()))
            .collect();
        let lex = GenderLexicon { pairs };
        let male = lex.column_set(Gender::Male);
        let female = lex.column_set(Gender::Female);
        if let Some(w) = male.intersection(&female).next() {
            return Err(TemplateError::Lexicon(format!(
                "{w:?} appears in both columns"
            )));
        }
        if male.is_empty() && female.is_empty() {
            return Err(TemplateError::Lexicon("lexicon has no words".into()));
        }
        Ok(lex)
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    fn column(&self, g: Gender) -> impl Iterator<Item = &str> {
        self.pairs
            .iter()
            .map(move |(m, f)| match g {
                Gender::Male => m.as_str(),
                Gender::Female => f.as_str(),
            })
            .filter(|w| !w.is_empty())
    }

    pub fn column_set(&self, g: Gender) -> BTreeSet<&str> {
        self.column(g).collect()
    }

    /// Distinct words of one column in first-appearance order.
    pub fn distinct_words(&self, g: Gender) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.column(g).filter(|w| seen.insert(*w)).collect()
    }

    /// Distinct female words followed by distinct male words.
    pub fn vocabulary(&self) -> Vec<&str> {
        let mut v = self.distinct_words(Gender::Female);
        v.extend(self.distinct_words(Gender::Male));
        v
    }

    pub fn column_contains(&self, g: Gender, token: &str) -> bool {
        let token = token.to_lowercase();
        self.column(g).any(|w| w == token)
    }

    /// Which column, if any, a whole token belongs to (case-insensitive).
    pub fn gender_of(&self, token: &str) -> Option<Gender> {
        if self.column_contains(Gender::Female, token) {
            Some(Gender::Female)
        } else if self.column_contains(Gender::Male, token) {
            Some(Gender::Male)
        } else {
            None
        }
    }

    pub fn has_column(&self, g: Gender) -> bool {
        self.column(g).next().is_some()
    }

    /// Reads a two-column CSV with header `male,female`.
    pub fn from_csv<R: Read>(input: R) -> Result<Self, TemplateError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "male" || &headers[1] != "female" {
            return Err(TemplateError::Lexicon(format!(
                "expected header `male,female`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut pairs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            pairs.push((rec[0].to_string(), rec[1].to_string()));
        }
        Self::new(pairs)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TemplateError> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["male", "female"])?;
        for (m, f) in &self.pairs {
            wtr.write_record([m, f])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_counts() {
        let lex = builtin_lexicon();
        assert_eq!(lex.pairs().len(), 12);
        assert_eq!(lex.column_set(Gender::Female).len(), 11);
        assert_eq!(lex.column_set(Gender::Male).len(), 12);
        assert!(lex.column_set(Gender::Female).contains("she"));
        assert!(lex
            .column_set(Gender::Male)
            .is_disjoint(&lex.column_set(Gender::Female)));
        assert_eq!(lex.vocabulary().len(), 23);
    }

    #[test]
    fn membership_is_case_insensitive() {
        let lex = builtin_lexicon();
        assert_eq!(lex.gender_of("She"), Some(Gender::Female));
        assert_eq!(lex.gender_of("HIS"), Some(Gender::Male));
        assert_eq!(lex.gender_of("they"), None);
        assert_eq!(lex.gender_of("##she"), None);
    }

    #[test]
    fn csv_round_trip() {
        let lex = builtin_lexicon();
        let mut buf = Vec::new();
        lex.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"male,female\n"));
        assert_eq!(GenderLexicon::from_csv(buf.as_slice()).unwrap(), lex);
    }

    #[test]
    fn csv_rejects_bad_input() {
        assert!(GenderLexicon::from_csv("a,b\nhe,she\n".as_bytes()).is_err());
        assert!(GenderLexicon::from_csv("male,female\nthey,they\n".as_bytes()).is_err());
    }

    #[test]
    fn one_sided_lexicon() {
        let lex = GenderLexicon::from_csv("male,female\n,she\n,her\n".as_bytes()).unwrap();
        assert!(!lex.has_column(Gender::Male));
        assert_eq!(lex.distinct_words(Gender::Female), vec!["she", "her"]);
    }
}
