use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use super::MetricSpec;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no @key[value] pairs found")]
pub struct NoPairsFound;

fn pair_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@([A-Za-z_][A-Za-z0-9_]*)\[([^\]]*)\]").unwrap())
}

/// Extracts every `@key[value]` pair. A repeated key keeps its last value.
pub fn parse_structured_answer(text: &str) -> Result<BTreeMap<String, String>, NoPairsFound> {
    let map: BTreeMap<String, String> = pair_regex()
        .captures_iter(text)
        .map(|c| (c[1].to_string(), c[2].trim().to_string()))
        .collect();
    if map.is_empty() {
        Err(NoPairsFound)
    } else {
        Ok(map)
    }
}

/// Parses a finite number, tolerating surrounding whitespace, thousands
/// separators and a trailing percent sign (kept as-is, not divided).
pub fn parse_number(text: &str) -> Option<f64> {
    let t = text.trim();
    let t = t.strip_suffix('%').unwrap_or(t).trim();
    if t.is_empty() {
        return None;
    }
    let cleaned: String = if t.contains(',') && t.split(',').skip(1).all(|g| g.len() == 3) {
        t.replace(',', "")
    } else {
        t.to_string()
    };
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn round_to(v: f64, places: u32) -> f64 {
    let f = 10f64.powi(places as i32);
    (v * f).round() / f
}

fn numbers_match(pred: f64, gold: f64, spec: &MetricSpec) -> bool {
    let pred = match spec.rounding {
        Some(d) => round_to(pred, d),
        None => pred,
    };
    let scale = pred.abs().max(gold.abs());
    (pred - gold).abs() <= spec.abs_tol.max(spec.rel_tol * scale)
}

fn normalize(text: &str, case_sensitive: bool) -> String {
    let trimmed = text.trim();
    let trimmed = trimmed
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(trimmed)
        .trim();
    let collapsed = trimmed.split_whitespace().collect::<Vec<_>>().join(" ");
    if case_sensitive {
        collapsed
    } else {
        collapsed.to_lowercase()
    }
}

fn scalar_match(pred: &str, gold: &str, spec: &MetricSpec) -> bool {
    match (parse_number(pred), parse_number(gold)) {
        (Some(p), Some(g)) => numbers_match(p, g, spec),
        _ => normalize(pred, spec.case_sensitive) == normalize(gold, spec.case_sensitive),
    }
}

/// Exact match with numeric tolerance. Structured gold answers (`@k[v]`
/// pairs) are compared key-wise and require the same key set.
pub fn match_analysis_answer(pred: &str, gold: &str, spec: &MetricSpec) -> bool {
    if let Ok(gold_pairs) = parse_structured_answer(gold) {
        let Ok(pred_pairs) = parse_structured_answer(pred) else {
            return false;
        };
        return gold_pairs.len() == pred_pairs.len()
            && gold_pairs
                .iter()
                .all(|(k, g)| pred_pairs.get(k).is_some_and(|p| scalar_match(p, g, spec)));
    }
    scalar_match(pred, gold, spec)
}
