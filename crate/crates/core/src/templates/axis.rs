use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TemplateError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisCategory {
    Date,
    Place,
    Subreddit,
    Custom,
}

impl FromStr for AxisCategory {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "date" => Ok(AxisCategory::Date),
            "place" => Ok(AxisCategory::Place),
            "subreddit" => Ok(AxisCategory::Subreddit),
            "custom" => Ok(AxisCategory::Custom),
            other => Err(TemplateError::Axis(format!("unknown category {other:?}"))),
        }
    }
}

impl fmt::Display for AxisCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AxisCategory::Date => "date",
            AxisCategory::Place => "place",
            AxisCategory::Subreddit => "subreddit",
            AxisCategory::Custom => "custom",
        })
    }
}

/// Bottom ten then top ten of the 2021 Global Gender Gap ranking.
const PLACES: [&str; 20] = [
    "Afghanistan",
    "Yemen",
    "Iraq",
    "Pakistan",
    "Syria",
    "Democratic Republic of Congo",
    "Iran",
    "Mali",
    "Chad",
    "Saudi Arabia",
    "Switzerland",
    "Ireland",
    "Lithuania",
    "Rwanda",
    "Namibia",
    "Sweden",
    "New Zealand",
    "Norway",
    "Finland",
    "Iceland",
];

/// Subreddits with at least 400,000 commenters, by rising share of
/// self-reported female commenters.
const SUBREDDITS: [&str; 61] = [
    "GlobalOffensive",
    "pcmasterrace",
    "nfl",
    "sports",
    "The_Donald",
    "leagueoflegends",
    "Overwatch",
    "gonewild",
    "Futurology",
    "space",
    "technology",
    "gaming",
    "Jokes",
    "dataisbeautiful",
    "woahdude",
    "askscience",
    "wow",
    "anime",
    "BlackPeopleTwitter",
    "politics",
    "pokemon",
    "worldnews",
    "reddit.com",
    "interestingasfuck",
    "videos",
    "nottheonion",
    "television",
    "science",
    "atheism",
    "movies",
    "gifs",
    "Music",
    "trees",
    "EarthPorn",
    "GetMotivated",
    "pokemongo",
    "news",
    "Fitness",
    "Showerthoughts",
    "OldSchoolCool",
    "explainlikeimfive",
    "todayilearned",
    "gameofthrones",
    "AdviceAnimals",
    "DIY",
    "WTF",
    "IAmA",
    "cringepics",
    "tifu",
    "mildlyinteresting",
    "funny",
    "pics",
    "LifeProTips",
    "creepy",
    "personalfinance",
    "food",
    "AskReddit",
    "books",
    "aww",
    "sex",
    "relationships",
];

pub const DATE_START: i32 = 1801;
pub const DATE_END: i32 = 2011;
pub const DATE_STEP: i32 = 10;

/// An ordered list of x-axis values. Order carries the hypothesised access gradient.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub category: AxisCategory,
    pub values: Vec<String>,
}

impl AxisSpec {
    pub fn new(category: AxisCategory, values: Vec<String>) -> Result<Self, TemplateError> {
        if values.is_empty() {
            return Err(TemplateError::Axis("axis has no values".into()));
        }
        let mut seen = BTreeSet::new();
        for v in &values {
            if v.is_empty() {
                return Err(TemplateError::Axis("axis value is empty".into()));
            }
            if !seen.insert(v.as_str()) {
                return Err(TemplateError::Axis(format!("duplicate axis value {v:?}")));
            }
        }
        Ok(Self { category, values })
    }

    /// Parses one value per line; blank lines are skipped.
    pub fn from_lines(text: &str) -> Result<Self, TemplateError> {
        let values = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        Self::new(AxisCategory::Custom, values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn position(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }

    pub fn to_lines(&self) -> String {
        let mut s = self.values.join("\n");
        s.push('\n');
        s
    }
}

/// Years from `start` to `end` inclusive in `step` increments.
pub fn date_axis(start: i32, end: i32, step: i32) -> Result<AxisSpec, TemplateError> {
    if step <= 0 || end < start {
        return Err(TemplateError::Axis(format!(
            "bad date range {start}..={end} step {step}"
        )));
    }
    let values = (start..=end)
        .step_by(step as usize)
        .map(|y| y.to_string())
        .collect();
    AxisSpec::new(AxisCategory::Date, values)
}

pub fn builtin_axis(category: AxisCategory) -> Result<AxisSpec, TemplateError> {
    let owned = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
    match category {
        AxisCategory::Date => date_axis(DATE_START, DATE_END, DATE_STEP),
        AxisCategory::Place => AxisSpec::new(category, owned(&PLACES)),
        AxisCategory::Subreddit => AxisSpec::new(category, owned(&SUBREDDITS)),
        AxisCategory::Custom => Err(TemplateError::Axis(
            "custom axes are supplied by the caller".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn date_axis_endpoints() {
        let a = builtin_axis(AxisCategory::Date).unwrap();
        assert_eq!(a.len(), 22);
        assert_eq!(a.values.first().unwrap(), "1801");
        assert_eq!(a.values.last().unwrap(), "2011");
        assert_eq!(date_axis(1801, 2011, 30).unwrap().len(), 8);
    }

    #[test]
    fn place_and_subreddit_endpoints() {
        let p = builtin_axis(AxisCategory::Place).unwrap();
        assert_eq!(p.len(), 20);
        assert_eq!(p.values[0], "Afghanistan");
        assert_eq!(p.values[19], "Iceland");
        let s = builtin_axis(AxisCategory::Subreddit).unwrap();
        assert_eq!(s.values[0], "GlobalOffensive");
        assert_eq!(s.values.last().unwrap(), "relationships");
    }

    #[test]
    fn custom_is_not_builtin() {
        assert!(builtin_axis(AxisCategory::Custom).is_err());
    }

    #[test]
    fn custom_axis_validation() {
        let a = AxisSpec::from_lines("low\n\nmid\nhigh\n").unwrap();
        assert_eq!(a.values, vec!["low", "mid", "high"]);
        assert_eq!(a.position("mid"), Some(1));
        assert!(AxisSpec::from_lines("a\na\n").is_err());
        assert!(AxisSpec::from_lines("\n\n").is_err());
    }
}
