//! Value canonicalization and synonym dictionaries.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::str::FromStr;

use regex::Regex;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use super::IngestError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CanonKind {
    #[default]
    None,
    Date,
    Number,
    Dictionary(String),
}

/// Groups of interchangeable terms; the first term of a group is its head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynonymDictionary {
    groups: Vec<Vec<String>>,
    index: HashMap<String, usize>,
}

impl SynonymDictionary {
    pub fn new(groups: Vec<Vec<String>>) -> Result<Self, IngestError> {
        let mut index = HashMap::new();
        for (g, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(IngestError::Dictionary(format!("group {g} is empty")));
            }
            for term in group {
                let key = term.trim().to_lowercase();
                if let Some(prev) = index.insert(key.clone(), g) {
                    if prev != g {
                        return Err(IngestError::Dictionary(format!(
                            "term {key:?} appears in groups {prev} and {g}"
                        )));
                    }
                }
            }
        }
        Ok(SynonymDictionary { groups, index })
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let groups: Vec<Vec<String>> =
            serde_json::from_str(text).map_err(|e| IngestError::Dictionary(e.to_string()))?;
        Self::new(groups)
    }

    pub fn groups(&self) -> &[Vec<String>] {
        &self.groups
    }

    pub fn group_of(&self, term: &str) -> Option<&[String]> {
        self.index
            .get(&term.trim().to_lowercase())
            .map(|&g| self.groups[g].as_slice())
    }

    pub fn head(&self, term: &str) -> Option<&str> {
        self.group_of(term).map(|g| g[0].as_str())
    }

    /// Every other member of the term's group, in dictionary order.
    pub fn siblings(&self, term: &str) -> Vec<&str> {
        let key = term.trim().to_lowercase();
        self.group_of(term)
            .map(|g| {
                g.iter()
                    .filter(|t| t.trim().to_lowercase() != key)
                    .map(String::as_str)
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Named synonym dictionaries.
#[derive(Debug, Clone, Default)]
pub struct Dictionaries {
    by_name: BTreeMap<String, SynonymDictionary>,
}

impl Dictionaries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, dict: SynonymDictionary) {
        self.by_name.insert(name.into(), dict);
    }

    pub fn with(mut self, name: impl Into<String>, dict: SynonymDictionary) -> Self {
        self.insert(name, dict);
        self
    }

    pub fn get(&self, name: &str) -> Option<&SynonymDictionary> {
        self.by_name.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&SynonymDictionary, IngestError> {
        self.get(name)
            .ok_or_else(|| IngestError::UnknownDictionary(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }

    pub fn load(name: &str, path: &Path) -> Result<(String, SynonymDictionary), IngestError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
        Ok((name.to_string(), SynonymDictionary::from_json(&text)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CanonWarning {
    UnparseableDate,
    UnparseableNumber,
}

const MONTHS: [&str; 12] = [
    "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
];

fn days_in_month(year: u32, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if (year % 4 == 0 && year % 100 != 0) || year % 400 == 0 => 29,
        2 => 28,
        _ => 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DateTime {
    pub year: u32,
    pub month: u32,
    pub day: u32,
    pub time: Option<(u32, u32, u32)>,
}

impl DateTime {
    fn checked(self) -> Option<Self> {
        let ok_date = (1..=12).contains(&self.month)
            && self.day >= 1
            && self.day <= days_in_month(self.year, self.month);
        let ok_time = self
            .time
            .map_or(true, |(h, m, s)| h < 24 && m < 60 && s < 60);
        (ok_date && ok_time).then_some(self)
    }

    pub fn iso(&self) -> String {
        let date = format!("{:04}-{:02}-{:02}", self.year, self.month, self.day);
        match self.time {
            Some((h, m, s)) => format!("{date} {h:02}:{m:02}:{s:02}"),
            None => date,
        }
    }
}

fn date_patterns() -> &'static [Regex; 4] {
    static PATTERNS: OnceLock<[Regex; 4]> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        [
            Regex::new(r"^(\d{1,2})/(\d{1,2})/(\d{4})(?:\s+(\d{1,2}):(\d{2})(?::(\d{2}))?)?$").unwrap(),
            Regex::new(r"^(\d{4})-(\d{1,2})-(\d{1,2})(?:[ T](\d{1,2}):(\d{2})(?::(\d{2}))?)?$").unwrap(),
            Regex::new(r"^(\d{2})(\d{2})(\d{4})$").unwrap(),
            Regex::new(r"^([A-Za-z]{3,9})\.?\s+(\d{1,2}),\s*(\d{4})$").unwrap(),
        ]
    })
}

fn num(c: Option<regex::Match<'_>>) -> Option<u32> {
    c.and_then(|m| m.as_str().parse().ok())
}

fn time_of(c: &regex::Captures<'_>, h: usize) -> Option<(u32, u32, u32)> {
    let hour = num(c.get(h))?;
    Some((hour, num(c.get(h + 1)).unwrap_or(0), num(c.get(h + 2)).unwrap_or(0)))
}

/// Parse the accepted date layouts: `M/D/YYYY[ H:MM[:SS]]`,
/// `YYYY-MM-DD[ HH:MM[:SS]]`, `MMDDYYYY` and `Mon D, YYYY`.
pub fn parse_date(value: &str) -> Option<DateTime> {
    let v = value.trim();
    let [mdy, iso, compact, named] = date_patterns();
    if let Some(c) = mdy.captures(v) {
        return DateTime {
            month: num(c.get(1))?,
            day: num(c.get(2))?,
            year: num(c.get(3))?,
            time: time_of(&c, 4),
        }
        .checked();
    }
    if let Some(c) = iso.captures(v) {
        return DateTime {
            year: num(c.get(1))?,
            month: num(c.get(2))?,
            day: num(c.get(3))?,
            time: time_of(&c, 4),
        }
        .checked();
    }
    if let Some(c) = compact.captures(v) {
        return DateTime {
            month: num(c.get(1))?,
            day: num(c.get(2))?,
            year: num(c.get(3))?,
            time: None,
        }
        .checked();
    }
    if let Some(c) = named.captures(v) {
        let name = c.get(1)?.as_str().to_lowercase();
        let month = MONTHS.iter().position(|m| name.starts_with(m))? as u32 + 1;
        return DateTime {
            year: num(c.get(3))?,
            month,
            day: num(c.get(2))?,
            time: None,
        }
        .checked();
    }
    None
}

pub fn month_abbrev(month: u32) -> &'static str {
    const NAMES: [&str; 12] = [
        "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
    ];
    NAMES[(month - 1) as usize]
}

/// Parse a number, tolerating thousands separators and a trailing `%`.
pub fn parse_number(value: &str) -> Option<Decimal> {
    let mut v: String = value.trim().chars().filter(|c| *c != ',' && *c != '_').collect();
    if v.ends_with('%') {
        v.pop();
    }
    let v = v.trim().trim_start_matches('+');
    if v.is_empty() {
        return None;
    }
    Decimal::from_str(v)
        .or_else(|_| Decimal::from_scientific(v))
        .ok()
}

pub fn render_decimal(d: Decimal) -> String {
    let n = d.normalize();
    if n.is_zero() {
        "0".to_string()
    } else {
        n.to_string()
    }
}

/// Canonicalize, reporting values that could not be parsed for their kind.
///
/// Unparseable values come back trimmed but otherwise unchanged.
pub fn try_canonicalize(
    value: &str,
    kind: &CanonKind,
    dicts: &Dictionaries,
) -> Result<(String, Option<CanonWarning>), IngestError> {
    let trimmed = value.trim();
    Ok(match kind {
        CanonKind::None => (trimmed.to_lowercase(), None),
        CanonKind::Date => match parse_date(trimmed) {
            Some(d) => (d.iso(), None),
            None => (trimmed.to_string(), Some(CanonWarning::UnparseableDate)),
        },
        CanonKind::Number => match parse_number(trimmed) {
            Some(d) => (render_decimal(d), None),
            None => (trimmed.to_string(), Some(CanonWarning::UnparseableNumber)),
        },
        CanonKind::Dictionary(name) => {
            let dict = dicts.require(name)?;
            match dict.head(trimmed) {
                Some(head) => (head.to_string(), None),
                None => (trimmed.to_lowercase(), None),
            }
        }
    })
}

pub fn canonicalize(value: &str, kind: &CanonKind, dicts: &Dictionaries) -> Result<String, IngestError> {
    try_canonicalize(value, kind, dicts).map(|(v, _)| v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn states() -> Dictionaries {
        Dictionaries::new().with(
            "us_states",
            SynonymDictionary::new(vec![
                vec!["arizona".into(), "az".into()],
                vec!["ohio".into(), "oh".into()],
            ])
            .unwrap(),
        )
    }

    fn c(v: &str, k: CanonKind) -> String {
        canonicalize(v, &k, &states()).unwrap()
    }

    #[test]
    fn dates() {
        assert_eq!(c("1/22/2020 17:00", CanonKind::Date), "2020-01-22 17:00:00");
        assert_eq!(c("2020-09-25 04:23:21", CanonKind::Date), "2020-09-25 04:23:21");
        assert_eq!(c("1/22/2020", CanonKind::Date), "2020-01-22");
        assert_eq!(c("10062020", CanonKind::Date), "2020-10-06");
        assert_eq!(c("Oct 6, 2020", CanonKind::Date), "2020-10-06");
        assert_eq!(c("2020-10-06T08:01", CanonKind::Date), "2020-10-06 08:01:00");
    }

    #[test]
    fn bad_dates_pass_through_with_warning() {
        let d = Dictionaries::new();
        for bad in ["2/30/2020", "yesterday", "13/1/2020", "2020-01-01 25:00:00"] {
            let (v, w) = try_canonicalize(bad, &CanonKind::Date, &d).unwrap();
            assert_eq!(v, bad);
            assert_eq!(w, Some(CanonWarning::UnparseableDate));
        }
    }

    #[test]
    fn numbers() {
        assert_eq!(c("1,234", CanonKind::Number), "1234");
        assert_eq!(c("14.90%", CanonKind::Number), "14.9");
        assert_eq!(c(" 3103 ", CanonKind::Number), "3103");
        assert_eq!(c("-0.0", CanonKind::Number), "0");
        assert_eq!(c("1e3", CanonKind::Number), "1000");
        assert_eq!(c("n/a", CanonKind::Number), "n/a");
    }

    #[test]
    fn dictionary_lookup_is_case_insensitive() {
        assert_eq!(c("AZ", CanonKind::Dictionary("us_states".into())), "arizona");
        assert_eq!(c("Arizona", CanonKind::Dictionary("us_states".into())), "arizona");
        assert_eq!(c("Texas", CanonKind::Dictionary("us_states".into())), "texas");
        assert!(matches!(
            canonicalize("x", &CanonKind::Dictionary("nope".into()), &states()),
            Err(IngestError::UnknownDictionary(_))
        ));
    }

    #[test]
    fn none_lowercases_and_trims() {
        assert_eq!(c("  Hubei ", CanonKind::None), "hubei");
    }

    #[test]
    fn siblings_exclude_the_term() {
        let d = states();
        let dict = d.get("us_states").unwrap();
        assert_eq!(dict.siblings("AZ"), vec!["arizona"]);
        assert_eq!(dict.siblings("arizona"), vec!["az"]);
        assert!(dict.siblings("texas").is_empty());
    }

    #[test]
    fn overlapping_groups_rejected() {
        let r = SynonymDictionary::new(vec![vec!["a".into(), "b".into()], vec!["b".into()]]);
        assert!(r.is_err());
    }

    #[test]
    fn canon_kind_wire_format() {
        let kinds = vec![
            CanonKind::None,
            CanonKind::Date,
            CanonKind::Dictionary("us_states".into()),
        ];
        let json = serde_json::to_string(&kinds).unwrap();
        assert_eq!(json, r#"["none","date",{"dictionary":"us_states"}]"#);
    }
}
