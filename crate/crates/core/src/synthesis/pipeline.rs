use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diversity::DEFAULT_THRESHOLD;
use super::{
    diversity_filter, generate_queries, judge, sample_trajectories, GeneratorConfig, JudgeConfig,
    SampleFailure, SampleSet, SamplingConfig, ScorerRegistry, SynthEnv, SynthPair, SynthQuery,
    SynthesisError,
};
use crate::client::ModelConfig;
use crate::harness::Trajectory;
use crate::task::TaskInstance;

pub const REPORT_SCHEMA: &str = "dseval.synth-report/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub generator: GeneratorConfig,
    pub sampler: ModelConfig,
    pub sampling: SamplingConfig,
    pub judge: JudgeConfig,
    #[serde(default = "default_threshold")]
    pub diversity_threshold: f64,
    #[serde(default = "default_scorer")]
    pub scorer: String,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}
fn default_scorer() -> String {
    "token-set".into()
}

/// Funnel counts. Stage counts are queries; `trajectories_*` count samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub schema: String,
    pub seeds: usize,
    pub attempts: usize,
    pub proposed: usize,
    pub validated: usize,
    pub sampled: usize,
    pub judged: usize,
    pub accepted: usize,
    pub diverse: usize,
    pub trajectories_sampled: usize,
    pub trajectories_judged: usize,
    pub sample_failures: usize,
    /// Seeds whose generator fell short, as (seed id, reason).
    pub seed_shortfalls: Vec<(String, String)>,
}

#[derive(Debug, Default)]
pub struct PipelineOutcome {
    pub report: SynthesisReport,
    pub pairs: Vec<SynthPair>,
    /// Every trajectory run, keyed by its conversation id.
    pub trajectories: Vec<(String, Trajectory)>,
    pub failures: Vec<(String, SampleFailure)>,
    /// Sample ids that finished, were judged, and were accepted.
    pub sampled: BTreeSet<String>,
    pub judged: BTreeSet<String>,
    pub accepted: BTreeSet<String>,
}

struct QueryRun {
    set: SampleSet,
    judged: Vec<String>,
    /// Accepted sample id and its pair.
    pair: Option<(String, SynthPair)>,
}

fn run_query(
    query: &SynthQuery,
    seed: &TaskInstance,
    cfg: &SynthConfig,
    env: &SynthEnv<'_>,
) -> Result<QueryRun, SynthesisError> {
    let set = sample_trajectories(query, seed, &cfg.sampler, &cfg.sampling, env)?;
    let mut judged = Vec::new();
    let mut pair = None;
    for (i, _, t) in &set.trajectories {
        if t.terminal != crate::harness::Terminal::Answered {
            continue;
        }
        let sid = SampleSet::sample_id(query, *i);
        let verdict = judge(
            query,
            t,
            &seed.metric,
            &cfg.judge,
            env.clients,
            &format!("{sid}/judge"),
        );
        if verdict.accept && pair.is_none() {
            let p = SynthPair {
                query: query.clone(),
                prompt: set.prompt.clone(),
                trajectory: t.clone(),
                verdict,
                seed_similarity: 0.0,
            };
            pair = Some((sid.clone(), p));
        }
        judged.push(sid);
    }
    Ok(QueryRun { set, judged, pair })
}

/// Generate, sample, judge and diversity-filter over `seeds`. Seeds and
/// queries run in parallel; each query contributes at most one pair, from
/// its lowest-numbered accepted sample.
pub fn run_pipeline(
    seeds: &[TaskInstance],
    cfg: &SynthConfig,
    env: &SynthEnv<'_>,
    scorers: &ScorerRegistry,
) -> Result<PipelineOutcome, SynthesisError> {
    let scorer = scorers.get(&cfg.scorer)?;
    cfg.sampling.validate()?;
    let mut out = PipelineOutcome {
        report: SynthesisReport {
            schema: REPORT_SCHEMA.into(),
            seeds: seeds.len(),
            ..Default::default()
        },
        ..Default::default()
    };

    let generated: Vec<_> = seeds
        .par_iter()
        .map(|s| (s, generate_queries(s, &cfg.generator, env)))
        .collect();
    let mut queries: Vec<(SynthQuery, &TaskInstance)> = Vec::new();
    for (seed, g) in generated {
        let g = match g {
            Ok(g) => g,
            Err(SynthesisError::GeneratorExhausted {
                partial,
                wanted,
                got,
            }) => {
                out.report
                    .seed_shortfalls
                    .push((seed.id.clone(), format!("{got} of {wanted} validated")));
                *partial
            }
            Err(e) => return Err(e),
        };
        out.report.attempts += g.attempts;
        out.report.proposed += g.proposed;
        out.report.validated += g.queries.len();
        out.trajectories.extend(g.trajectories);
        queries.extend(g.queries.into_iter().map(|q| (q, seed)));
    }

    let runs: Vec<QueryRun> = queries
        .par_iter()
        .map(|(q, seed)| run_query(q, seed, cfg, env))
        .collect::<Result<_, _>>()?;
    let mut accepted = Vec::new();
    for ((q, _), run) in queries.iter().zip(runs) {
        if !run.set.trajectories.is_empty() {
            out.report.sampled += 1;
        }
        if !run.judged.is_empty() {
            out.report.judged += 1;
        }
        out.report.trajectories_sampled += run.set.trajectories.len();
        out.report.trajectories_judged += run.judged.len();
        out.report.sample_failures += run.set.failures.len();
        for (i, _, t) in run.set.trajectories {
            let sid = SampleSet::sample_id(q, i);
            out.sampled.insert(sid.clone());
            out.trajectories.push((sid, t));
        }
        out.failures
            .extend(run.set.failures.into_iter().map(|f| (q.id.clone(), f)));
        out.judged.extend(run.judged);
        if let Some((sid, p)) = run.pair {
            out.accepted.insert(sid);
            accepted.push(p);
        }
    }
    out.report.accepted = accepted.len();

    let accepted_queries: Vec<SynthQuery> = accepted.iter().map(|p| p.query.clone()).collect();
    for (i, sim) in diversity_filter(&accepted_queries, cfg.diversity_threshold, scorer.as_ref()) {
        let mut p = accepted[i].clone();
        p.seed_similarity = sim;
        out.pairs.push(p);
    }
    out.report.diverse = out.pairs.len();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::testkit::*;
    use super::super::JudgeTemplate;
    use super::*;
    use crate::client::Script;
    use crate::harness::{replay, to_jsonl, EpisodeBudget, Terminal};
    use crate::task::fixtures::analysis_task;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    const ACCEPT: &str = "query_clarity: 5\neducational_value: 5\nexploratory_competence: 5\nexecution_robustness: 5\ntask_alignment: 5\nanswer_plausibility: 5\nrationale: ok";
    const REJECT: &str = "query_clarity: 2\neducational_value: 5\nexploratory_competence: 5\nexecution_robustness: 5\ntask_alignment: 5\nanswer_plausibility: 5\nrationale: vague";

    /// Per query: generator reference, then per sample (answer, judge accepts).
    type Plan = Vec<(String, Vec<(Option<u8>, bool)>)>;

    fn build(dir: &std::path::Path, plan: &Plan, k: usize) -> SynthConfig {
        let questions = [
            "How many rows?",
            "Oldest age?",
            "Which name is longest?",
            "Sum of ages?",
        ];
        let mut gen = BTreeMap::new();
        let mut samp = BTreeMap::new();
        let mut jud = BTreeMap::new();
        for (i, (reference, samples)) in plan.iter().enumerate() {
            gen.insert(
                format!("seed/propose/{i}"),
                vec![format!(
                    "<answer><question>{}</question><reference>{reference}</reference><guideline>A number.</guideline></answer>",
                    questions[i % questions.len()]
                )],
            );
            gen.insert(
                format!("seed/solve/{i}"),
                vec![format!("<answer>{reference}</answer>")],
            );
            for (s, (answer, accept)) in samples.iter().enumerate() {
                let key = format!("seed-syn{i}/sample/{s}");
                let reply = match answer {
                    Some(a) => vec![
                        "<python>print(1)</python>".to_string(),
                        format!("<answer>{a}</answer>"),
                    ],
                    None => vec!["<python>print(1)</python>".to_string(); 3],
                };
                samp.insert(key.clone(), reply);
                jud.insert(
                    format!("{key}/judge"),
                    vec![if *accept { ACCEPT } else { REJECT }.to_string()],
                );
            }
        }
        let budget = EpisodeBudget::new(2, 100_000, 600.0).unwrap();
        SynthConfig {
            generator: GeneratorConfig {
                model: scripted(
                    dir,
                    "gen",
                    &Script {
                        by_key: gen,
                        ..Default::default()
                    },
                ),
                n: plan.len(),
                max_attempts: Some(plan.len()),
                budget,
            },
            sampler: scripted(
                dir,
                "samp",
                &Script {
                    by_key: samp,
                    ..Default::default()
                },
            ),
            sampling: SamplingConfig {
                k,
                temperature: 0.8,
                budget,
            },
            judge: JudgeConfig {
                model: scripted(
                    dir,
                    "judge",
                    &Script {
                        by_key: jud,
                        ..Default::default()
                    },
                ),
                floor: 4,
                template: JudgeTemplate::default(),
            },
            diversity_threshold: 0.8,
            scorer: "token-set".into(),
        }
    }

    #[test]
    fn funnel_and_one_pair_per_query() {
        let dir = tempfile::tempdir().unwrap();
        let seed = analysis_task(dir.path(), "seed");
        let plan: Plan = vec![
            ("2".into(), vec![(Some(2), true), (Some(2), true)]),
            ("40".into(), vec![(Some(41), true), (None, true)]),
            ("3".into(), vec![(Some(3), false), (Some(3), true)]),
        ];
        let cfg = build(dir.path(), &plan, 2);
        let kit = Kit::new();
        let out = run_pipeline(&[seed], &cfg, &kit.env(), &ScorerRegistry::default()).unwrap();
        let r = &out.report;
        assert_eq!(
            (r.proposed, r.validated, r.sampled, r.judged, r.accepted),
            (3, 3, 3, 3, 2)
        );
        assert_eq!(r.trajectories_sampled, 6);
        assert_eq!(r.trajectories_judged, 5);
        assert_eq!(out.pairs.len(), 2);
        assert_eq!(
            out.accepted.iter().cloned().collect::<Vec<_>>(),
            vec![
                "seed-syn0/sample/0".to_string(),
                "seed-syn2/sample/1".to_string()
            ]
        );
        for p in &out.pairs {
            let back = replay(std::io::Cursor::new(to_jsonl(&p.trajectory))).unwrap();
            assert_eq!(back.terminal, Terminal::Answered);
            assert_eq!(back.answer.as_deref(), Some(p.query.reference.as_str()));
        }
    }

    #[test]
    fn unknown_scorer_fails_early() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = build(dir.path(), &vec![], 1);
        cfg.scorer = "embedding".into();
        let kit = Kit::new();
        assert!(matches!(
            run_pipeline(&[], &cfg, &kit.env(), &ScorerRegistry::default()),
            Err(SynthesisError::ScorerUnavailable(_))
        ));
    }

    fn plan_strategy() -> impl Strategy<Value = Plan> {
        proptest::collection::vec(
            (
                0u8..4,
                proptest::collection::vec(
                    (proptest::option::weighted(0.8, 0u8..4), any::<bool>()),
                    3,
                ),
            ),
            1..4,
        )
        .prop_map(|qs| qs.into_iter().map(|(r, s)| (r.to_string(), s)).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn accepted_within_judged_within_sampled(plan in plan_strategy()) {
            let dir = tempfile::tempdir().unwrap();
            let seed = analysis_task(dir.path(), "seed");
            let cfg = build(dir.path(), &plan, 3);
            let kit = Kit::new();
            let out = run_pipeline(&[seed], &cfg, &kit.env(), &ScorerRegistry::default()).unwrap();
            prop_assert!(out.accepted.is_subset(&out.judged));
            prop_assert!(out.judged.is_subset(&out.sampled));
            let r = &out.report;
            prop_assert!(r.proposed >= r.validated && r.validated >= r.sampled);
            prop_assert!(r.sampled >= r.judged && r.judged >= r.accepted && r.accepted >= r.diverse);
            prop_assert_eq!(out.accepted.len(), r.accepted);
            for p in &out.pairs {
                prop_assert!(p.verdict.accept && p.verdict.answer_matches);
            }
        }
    }
}
