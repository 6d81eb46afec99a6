use std::collections::BTreeSet;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::CurationError;
use crate::schema;

const CURATED: &str = include_str!("../../assets/competitions.toml");
const EXCLUSIONS: &str = include_str!("../../assets/exclusions.txt");

/// Largest dataset admitted, in bytes.
pub const SIZE_LIMIT_BYTES: u64 = 15_000_000_000;
/// Competitions must have closed after this year.
pub const MIN_CLOSE_YEAR_EXCLUSIVE: i32 = 2017;

/// Normalized description of one competition. Optional fields must be
/// present for the rules that read them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CompetitionRecord {
    pub slug: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub close_date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accepts_submissions: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submission_format: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_size_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_ml_challenge: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaderboard_present: Option<bool>,
    /// Manual judgement that the description is well specified.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description_complete: Option<bool>,
    /// Excluded benchmarks this competition is known to overlap with.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overlaps: Vec<String>,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub stages: u32,
}

fn one() -> u32 {
    1
}

fn is_one(n: &u32) -> bool {
    *n == 1
}

impl CompetitionRecord {
    /// Stage whose data and leaderboard are used. Multi-stage competitions
    /// use their second stage.
    pub fn materials_stage(&self) -> u32 {
        if self.stages >= 2 {
            2
        } else {
            1
        }
    }
}

fn need<T: Clone>(
    rec: &CompetitionRecord,
    v: &Option<T>,
    field: &'static str,
) -> Result<T, CurationError> {
    v.clone().ok_or_else(|| CurationError::IncompleteRecord {
        slug: rec.slug.clone(),
        field,
    })
}

/// One intake rule. `fires` returns true when the record is rejected.
pub trait CompetitionRule: Send + Sync {
    fn id(&self) -> &'static str;
    fn fires(&self, rec: &CompetitionRecord) -> Result<bool, CurationError>;
}

pub struct SubmissionFormat;

impl CompetitionRule for SubmissionFormat {
    fn id(&self) -> &'static str {
        "SubmissionFormat"
    }

    fn fires(&self, rec: &CompetitionRecord) -> Result<bool, CurationError> {
        let f = need(rec, &rec.submission_format, "submission_format")?;
        Ok(!matches!(
            f.trim().to_ascii_lowercase().as_str(),
            "csv" | "tsv"
        ))
    }
}

pub struct SizeLimit {
    pub max_bytes: u64,
}

impl CompetitionRule for SizeLimit {
    fn id(&self) -> &'static str {
        "SizeLimit"
    }

    fn fires(&self, rec: &CompetitionRecord) -> Result<bool, CurationError> {
        Ok(need(rec, &rec.data_size_bytes, "data_size_bytes")? >= self.max_bytes)
    }
}

pub struct ValidChallenge;

impl CompetitionRule for ValidChallenge {
    fn id(&self) -> &'static str {
        "ValidChallenge"
    }

    fn fires(&self, rec: &CompetitionRecord) -> Result<bool, CurationError> {
        Ok(!need(rec, &rec.valid_ml_challenge, "valid_ml_challenge")?)
    }
}

pub struct Leaderboard;

impl CompetitionRule for Leaderboard {
    fn id(&self) -> &'static str {
        "Leaderboard"
    }

    fn fires(&self, rec: &CompetitionRecord) -> Result<bool, CurationError> {
        Ok(!need(rec, &rec.leaderboard_present, "leaderboard_present")?)
    }
}

pub struct Description;

impl CompetitionRule for Description {
    fn id(&self) -> &'static str {
        "Description"
    }

    fn fires(&self, rec: &CompetitionRecord) -> Result<bool, CurationError> {
        Ok(!need(
            rec,
            &rec.description_complete,
            "description_complete",
        )?)
    }
}

pub struct Overlap {
    pub excluded: BTreeSet<String>,
}

impl CompetitionRule for Overlap {
    fn id(&self) -> &'static str {
        "Overlap"
    }

    fn fires(&self, rec: &CompetitionRecord) -> Result<bool, CurationError> {
        Ok(self.excluded.contains(&rec.slug)
            || rec.overlaps.iter().any(|o| self.excluded.contains(o)))
    }
}

pub struct Recency;

impl CompetitionRule for Recency {
    fn id(&self) -> &'static str {
        "Recency"
    }

    fn fires(&self, rec: &CompetitionRecord) -> Result<bool, CurationError> {
        let closed = need(rec, &rec.close_date, "close_date")?;
        let open = need(rec, &rec.accepts_submissions, "accepts_submissions")?;
        Ok(closed.year() <= MIN_CLOSE_YEAR_EXCLUSIVE || !open)
    }
}

/// Ordered intake rules.
pub struct RuleSet {
    rules: Vec<Box<dyn CompetitionRule>>,
}

impl Default for RuleSet {
    fn default() -> Self {
        Self::standard(shipped_exclusions())
    }
}

impl RuleSet {
    pub fn empty() -> Self {
        Self { rules: Vec::new() }
    }

    pub fn standard(excluded: BTreeSet<String>) -> Self {
        let mut r = Self::empty();
        r.push(Box::new(SubmissionFormat));
        r.push(Box::new(SizeLimit {
            max_bytes: SIZE_LIMIT_BYTES,
        }));
        r.push(Box::new(ValidChallenge));
        r.push(Box::new(Leaderboard));
        r.push(Box::new(Description));
        r.push(Box::new(Overlap { excluded }));
        r.push(Box::new(Recency));
        r
    }

    pub fn push(&mut self, rule: Box<dyn CompetitionRule>) {
        self.rules.push(rule);
    }

    pub fn ids(&self) -> Vec<&'static str> {
        self.rules.iter().map(|r| r.id()).collect()
    }

    pub fn rules(&self) -> &[Box<dyn CompetitionRule>] {
        &self.rules
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub pass: bool,
    pub fired: Vec<String>,
}

/// Applies every rule; passes iff none fires.
pub fn filter_competition(
    rec: &CompetitionRecord,
    rules: &RuleSet,
) -> Result<FilterVerdict, CurationError> {
    let mut fired = Vec::new();
    for rule in rules.rules() {
        if rule.fires(rec)? {
            fired.push(rule.id().to_string());
        }
    }
    Ok(FilterVerdict {
        pass: fired.is_empty(),
        fired,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultySplit {
    pub easy: Vec<String>,
    pub hard: Vec<String>,
}

pub const EASY_PREFIX: &str = "playground-series-";
pub const EASY_INTRODUCTORY: [&str; 2] = ["titanic", "house-prices-advanced-regression-techniques"];

pub fn is_easy(slug: &str) -> bool {
    slug.starts_with(EASY_PREFIX) || EASY_INTRODUCTORY.contains(&slug)
}

pub fn split_difficulty<'a>(slugs: impl IntoIterator<Item = &'a str>) -> DifficultySplit {
    let mut s = DifficultySplit::default();
    for slug in slugs {
        if is_easy(slug) {
            s.easy.push(slug.to_string());
        } else {
            s.hard.push(slug.to_string());
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleCount {
    pub rule: String,
    /// Records this rule rejects on its own.
    pub fired: usize,
    /// Records still standing after this and every earlier rule.
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunnelReport {
    pub schema: String,
    pub total: usize,
    pub incomplete: Vec<String>,
    pub rules: Vec<RuleCount>,
    pub passed: Vec<String>,
    pub split: DifficultySplit,
}

impl FunnelReport {
    pub fn fired(&self, rule: &str) -> usize {
        self.rules
            .iter()
            .find(|r| r.rule == rule)
            .map_or(0, |r| r.fired)
    }
}

pub fn run_funnel(records: &[CompetitionRecord], rules: &RuleSet) -> FunnelReport {
    let ids = rules.ids();
    let mut rows: Vec<RuleCount> = ids
        .iter()
        .map(|id| RuleCount {
            rule: id.to_string(),
            fired: 0,
            remaining: 0,
        })
        .collect();
    let mut incomplete = Vec::new();
    let mut passed = Vec::new();
    for rec in records {
        let verdict = match filter_competition(rec, rules) {
            Ok(v) => v,
            Err(e) => {
                incomplete.push(e.to_string());
                continue;
            }
        };
        let mut alive = true;
        for row in rows.iter_mut() {
            if verdict.fired.contains(&row.rule) {
                row.fired += 1;
                alive = false;
            }
            if alive {
                row.remaining += 1;
            }
        }
        if verdict.pass {
            passed.push(rec.slug.clone());
        }
    }
    let split = split_difficulty(passed.iter().map(String::as_str));
    FunnelReport {
        schema: schema::REPORT.into(),
        total: records.len(),
        incomplete,
        rules: rows,
        passed,
        split,
    }
}

#[derive(Serialize, Deserialize)]
struct RecordFile {
    schema: String,
    #[serde(default)]
    competition: Vec<CompetitionRecord>,
}

fn parse_record_text(text: &str, origin: &Path) -> Result<Vec<CompetitionRecord>, CurationError> {
    let bad = |msg: String| CurationError::Records {
        path: origin.display().to_string(),
        msg,
    };
    let is_json = origin.extension().is_some_and(|e| e == "json");
    let value: serde_json::Value = if is_json {
        serde_json::from_str(text).map_err(|e| bad(e.to_string()))?
    } else {
        let v: toml::Value = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        serde_json::to_value(v).map_err(|e| bad(e.to_string()))?
    };
    let schema_ok = value.get("schema").and_then(|s| s.as_str()) == Some(schema::COMPETITION);
    if !schema_ok {
        return Err(bad(format!("expected schema `{}`", schema::COMPETITION)));
    }
    if value.get("competition").is_some() {
        let f: RecordFile = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        Ok(f.competition)
    } else {
        let r: CompetitionRecord = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
        Ok(vec![r])
    }
}

/// Loads one record file, a multi-record file, or a directory of either.
/// Duplicate slugs are rejected.
pub fn load_records(path: &Path) -> Result<Vec<CompetitionRecord>, CurationError> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|e| CurationError::Records {
            path: p.display().to_string(),
            msg: e.to_string(),
        })
    };
    let mut out = Vec::new();
    if path.is_dir() {
        let mut files: Vec<_> = walkdir::WalkDir::new(path)
            .min_depth(1)
            .max_depth(1)
            .sort_by_file_name()
            .into_iter()
            .filter_map(Result::ok)
            .map(|e| e.into_path())
            .filter(|p| p.extension().is_some_and(|e| e == "toml" || e == "json"))
            .collect();
        files.sort();
        for f in files {
            out.extend(parse_record_text(&read(&f)?, &f)?);
        }
    } else {
        out = parse_record_text(&read(path)?, path)?;
    }
    let mut seen = BTreeSet::new();
    for r in &out {
        if !seen.insert(r.slug.as_str()) {
            return Err(CurationError::DuplicateSlug(r.slug.clone()));
        }
    }
    Ok(out)
}

/// One slug per line; `#` starts a comment.
pub fn parse_exclusions(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or_default().trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn shipped_exclusions() -> BTreeSet<String> {
    parse_exclusions(EXCLUSIONS)
}

/// A competition in the shipped curated set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CuratedCompetition {
    pub slug: String,
    /// Human-readable size with a binary K/M/G suffix, as listed.
    pub data_size: String,
    pub domain: String,
}

impl CuratedCompetition {
    pub fn size_bytes(&self) -> Option<u64> {
        parse_size(&self.data_size)
    }
}

/// Parses sizes like `956K`, `6.2M`, `1.1G` with binary multipliers.
pub fn parse_size(text: &str) -> Option<u64> {
    let t = text.trim();
    let (num, mult) = match t.chars().last()? {
        'K' => (&t[..t.len() - 1], 1u64 << 10),
        'M' => (&t[..t.len() - 1], 1 << 20),
        'G' => (&t[..t.len() - 1], 1 << 30),
        'T' => (&t[..t.len() - 1], 1 << 40),
        _ => (t, 1),
    };
    let v: f64 = num.parse().ok()?;
    (v.is_finite() && v >= 0.0).then(|| (v * mult as f64).round() as u64)
}

pub fn curated_competitions() -> Vec<CuratedCompetition> {
    #[derive(Deserialize)]
    struct F {
        schema: String,
        competition: Vec<CuratedCompetition>,
    }
    let f: F = toml::from_str(CURATED).expect("shipped competition list parses");
    debug_assert_eq!(f.schema, schema::COMPETITION);
    f.competition
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn conforming(slug: &str) -> CompetitionRecord {
        CompetitionRecord {
            slug: slug.into(),
            close_date: NaiveDate::from_ymd_opt(2023, 3, 1),
            accepts_submissions: Some(true),
            submission_format: Some("csv".into()),
            data_size_bytes: Some(10_000_000),
            valid_ml_challenge: Some(true),
            leaderboard_present: Some(true),
            description_complete: Some(true),
            overlaps: vec![],
            stages: 1,
        }
    }

    #[test]
    fn conforming_passes() {
        let v = filter_competition(&conforming("x"), &RuleSet::default()).unwrap();
        assert_eq!(
            v,
            FilterVerdict {
                pass: true,
                fired: vec![]
            }
        );
    }

    #[test]
    fn size_limit() {
        let mut r = conforming("big");
        r.data_size_bytes = Some(20_000_000_000);
        assert_eq!(
            filter_competition(&r, &RuleSet::default()).unwrap().fired,
            vec!["SizeLimit"]
        );
        r.data_size_bytes = Some(SIZE_LIMIT_BYTES - 1);
        assert!(filter_competition(&r, &RuleSet::default()).unwrap().pass);
    }

    #[test]
    fn overlap_with_excluded_benchmark() {
        let r = conforming("spooky-author-identification");
        assert_eq!(
            filter_competition(&r, &RuleSet::default()).unwrap().fired,
            vec!["Overlap"]
        );
    }

    #[test]
    fn recency_boundary() {
        let mut r = conforming("old");
        r.close_date = NaiveDate::from_ymd_opt(2017, 12, 31);
        assert_eq!(
            filter_competition(&r, &RuleSet::default()).unwrap().fired,
            vec!["Recency"]
        );
        r.close_date = NaiveDate::from_ymd_opt(2018, 1, 1);
        assert!(filter_competition(&r, &RuleSet::default()).unwrap().pass);
        r.accepts_submissions = Some(false);
        assert!(!filter_competition(&r, &RuleSet::default()).unwrap().pass);
    }

    #[test]
    fn incomplete_names_field() {
        let mut r = conforming("x");
        r.leaderboard_present = None;
        match filter_competition(&r, &RuleSet::default()) {
            Err(CurationError::IncompleteRecord { field, .. }) => {
                assert_eq!(field, "leaderboard_present")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shipped_split_counts() {
        let list = curated_competitions();
        let s = split_difficulty(list.iter().map(|c| c.slug.as_str()));
        assert_eq!((s.easy.len(), s.hard.len()), (38, 54));
        assert!(s.easy.contains(&"playground-series-s4e1".to_string()));
        assert!(s
            .hard
            .contains(&"web-traffic-time-series-forecasting".to_string()));
        assert!(s.hard.contains(&"spaceship-titanic".to_string()));
    }

    #[test]
    fn sizes() {
        assert_eq!(parse_size("956K"), Some(956 * 1024));
        assert_eq!(parse_size("1.5G"), Some(3 << 29));
        assert_eq!(parse_size("x"), None);
        assert!(curated_competitions()
            .iter()
            .all(|c| c.size_bytes().is_some()));
    }

    #[test]
    fn funnel_counts_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut big = conforming("big");
        big.data_size_bytes = Some(u64::MAX);
        let recs = vec![
            conforming("playground-series-s9e9"),
            big,
            conforming("other"),
        ];
        for r in &recs {
            let mut v = serde_json::to_value(r).unwrap();
            v["schema"] = schema::COMPETITION.into();
            std::fs::write(dir.path().join(format!("{}.json", r.slug)), v.to_string()).unwrap();
        }
        let loaded = load_records(dir.path()).unwrap();
        assert_eq!(loaded.len(), 3);
        let rep = run_funnel(&loaded, &RuleSet::default());
        assert_eq!(rep.fired("SizeLimit"), 1);
        assert_eq!(rep.rules[0].remaining, 3);
        assert_eq!(rep.rules[1].remaining, 2);
        assert_eq!(rep.split.easy, vec!["playground-series-s9e9"]);
        assert_eq!(rep.split.hard, vec!["other"]);
    }

    #[test]
    fn second_stage_materials() {
        let mut r = conforming("x");
        assert_eq!(r.materials_stage(), 1);
        r.stages = 2;
        assert_eq!(r.materials_stage(), 2);
    }
}
