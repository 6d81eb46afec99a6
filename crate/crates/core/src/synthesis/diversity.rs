use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::{SynthQuery, SynthesisError};

pub const DEFAULT_THRESHOLD: f64 = 0.8;

/// Text similarity in [0, 1].
pub trait SimilarityScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, a: &str, b: &str) -> f64;
}

/// Token-set ratio: compares the shared tokens against each side's full token
/// set, so reordered or padded questions still score high.
#[derive(Debug, Default, Clone, Copy)]
pub struct TokenSetRatio;

fn tokens(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn lcs(a: &[char], b: &[char]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn ratio(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * lcs(&a, &b) as f64 / (a.len() + b.len()) as f64
}

fn join<'a>(it: impl Iterator<Item = &'a String>) -> String {
    it.map(String::as_str).collect::<Vec<_>>().join(" ")
}

impl SimilarityScorer for TokenSetRatio {
    fn name(&self) -> &str {
        "token-set"
    }

    fn score(&self, a: &str, b: &str) -> f64 {
        let (ta, tb) = (tokens(a), tokens(b));
        if ta.is_empty() || tb.is_empty() {
            return if ta == tb { 1.0 } else { 0.0 };
        }
        let inter = join(ta.intersection(&tb));
        let da = join(ta.difference(&tb));
        let db = join(tb.difference(&ta));
        let glue = |x: &str, y: &str| match (x.is_empty(), y.is_empty()) {
            (true, _) => y.to_string(),
            (_, true) => x.to_string(),
            _ => format!("{x} {y}"),
        };
        let (ca, cb) = (glue(&inter, &da), glue(&inter, &db));
        let mut best = ratio(&ca, &cb);
        if !inter.is_empty() {
            best = best.max(ratio(&inter, &ca)).max(ratio(&inter, &cb));
        }
        best
    }
}

#[derive(Clone)]
pub struct ScorerRegistry {
    scorers: BTreeMap<String, Arc<dyn SimilarityScorer>>,
}

impl Default for ScorerRegistry {
    fn default() -> Self {
        let mut r = Self {
            scorers: BTreeMap::new(),
        };
        r.register(Arc::new(TokenSetRatio));
        r
    }
}

impl ScorerRegistry {
    pub fn register(&mut self, scorer: Arc<dyn SimilarityScorer>) {
        self.scorers.insert(scorer.name().to_string(), scorer);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn SimilarityScorer>, SynthesisError> {
        self.scorers
            .get(name)
            .cloned()
            .ok_or_else(|| SynthesisError::ScorerUnavailable(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.scorers.keys().map(String::as_str).collect()
    }
}

/// Keeps queries that are unlike their seed question and unlike every
/// query kept before them. Returns (index, similarity to seed) per kept query.
pub fn diversity_filter(
    queries: &[SynthQuery],
    threshold: f64,
    scorer: &dyn SimilarityScorer,
) -> Vec<(usize, f64)> {
    let mut kept: Vec<(usize, f64)> = Vec::new();
    for (i, q) in queries.iter().enumerate() {
        let to_seed = scorer.score(&q.question, &q.seed_question);
        if to_seed >= threshold {
            continue;
        }
        if kept
            .iter()
            .any(|(j, _)| scorer.score(&q.question, &queries[*j].question) >= threshold)
        {
            continue;
        }
        kept.push((i, to_seed));
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::super::testkit::query;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn token_set_scores() {
        let s = TokenSetRatio;
        assert_eq!(
            s.score("mean age of passengers", "passengers age MEAN"),
            1.0
        );
        assert_eq!(
            s.score(
                "what is the mean age",
                "what is the mean age of the survivors"
            ),
            1.0
        );
        assert!(s.score("count the rows", "median fare by class") < 0.5);
        assert_eq!(s.score("", "x"), 0.0);
    }

    #[test]
    fn ratio_matches_hand_values() {
        // "abcd" vs "abed": LCS 3, 2*3/8.
        assert!((ratio("abcd", "abed") - 0.75).abs() < 1e-12);
        assert_eq!(ratio("", ""), 1.0);
    }

    #[test]
    fn drops_seed_paraphrase_and_near_duplicates() {
        let qs = vec![
            query("a", "What is the mean age?", "What is the mean age?"),
            query(
                "b",
                "What is the mean age?",
                "How many rows have a missing fare?",
            ),
            query(
                "c",
                "What is the mean age?",
                "How many rows have missing fare",
            ),
            query(
                "d",
                "What is the mean age?",
                "Which class has the highest median fare?",
            ),
        ];
        let kept: Vec<usize> = diversity_filter(&qs, DEFAULT_THRESHOLD, &TokenSetRatio)
            .into_iter()
            .map(|k| k.0)
            .collect();
        assert_eq!(kept, vec![1, 3]);
    }

    #[test]
    fn max_threshold_drops_only_exact_matches() {
        let qs = vec![
            query("a", "What is the mean age?", "mean age what is the"),
            query("b", "What is the mean age?", "What is the median age?"),
            query("c", "What is the mean age?", "What is the median age"),
        ];
        let kept: Vec<usize> = diversity_filter(&qs, 1.0, &TokenSetRatio)
            .into_iter()
            .map(|k| k.0)
            .collect();
        assert_eq!(kept, vec![1]);
    }

    #[test]
    fn unknown_scorer() {
        assert!(matches!(
            ScorerRegistry::default().get("embed"),
            Err(SynthesisError::ScorerUnavailable(_))
        ));
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(
            qs in proptest::collection::vec(("[a-d ]{0,12}", "[a-d ]{0,12}"), 0..12),
            thr in 0.1f64..1.0,
        ) {
            let queries: Vec<SynthQuery> = qs
                .iter()
                .enumerate()
                .map(|(i, (s, q))| query(&i.to_string(), s, q))
                .collect();
            let once: Vec<SynthQuery> = diversity_filter(&queries, thr, &TokenSetRatio)
                .into_iter()
                .map(|(i, _)| queries[i].clone())
                .collect();
            let twice: Vec<SynthQuery> = diversity_filter(&once, thr, &TokenSetRatio)
                .into_iter()
                .map(|(i, _)| once[i].clone())
                .collect();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn score_is_bounded_and_symmetric(a in "[a-z ]{0,20}", b in "[a-z ]{0,20}") {
            let s = TokenSetRatio;
            let x = s.score(&a, &b);
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert!((x - s.score(&b, &a)).abs() < 1e-12);
        }
    }
}
