use serde::{Deserialize, Serialize};

use super::{SynthEnv, SynthQuery, SynthesisError};
use crate::client::ModelConfig;
use crate::eval::match_analysis_answer;
use crate::harness::{EpisodeBudget, EpisodeError, Terminal, Trajectory};
use crate::task::{TaskInstance, TemplateRegistry};

pub const PROPOSE_TEMPLATE: &str = "synth-propose";

const PROPOSE_TEXT: &str = "TASK:
{{task_description}}

DATASET INFORMATION:
{{dataset_information?}}

DATASET LOCATIONS (use full paths):
{{dataset_locations}}

SEED QUESTION:
{{question?}}

INSTRUCTIONS:
1. Explore the data with code before proposing anything.
2. Propose one new question about this data that differs from the seed question and can be answered exactly.
3. Solve your question with code and check the result.
4. Reply with <answer><question>...</question><reference>...</reference><guideline>...</guideline></answer>, where reference is your verified answer and guideline states the expected answer format.
";

/// Adds the proposal prompt to `t`; harnesses driving generation need it.
pub fn register_templates(t: &mut TemplateRegistry) {
    t.register(PROPOSE_TEMPLATE, PROPOSE_TEXT)
        .expect("propose template parses");
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub model: ModelConfig,
    /// Validated queries wanted per seed.
    pub n: usize,
    /// Proposal attempts allowed per seed; defaults to three per wanted query.
    pub max_attempts: Option<usize>,
    pub budget: EpisodeBudget,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub question: String,
    pub reference: String,
    pub guideline: String,
}

fn inner<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = text[start..].find(&close)? + start;
    Some(text[start..end].trim())
}

/// Reads a proposal out of the generator's final answer.
pub fn parse_proposal(answer: &str) -> Option<Proposal> {
    let question = inner(answer, "question")?;
    let reference = inner(answer, "reference")?;
    let guideline = inner(answer, "guideline").unwrap_or("");
    (!question.is_empty() && !reference.is_empty()).then(|| Proposal {
        question: question.to_string(),
        reference: reference.to_string(),
        guideline: guideline.to_string(),
    })
}

/// Validated queries plus every generator trajectory, keyed by id.
#[derive(Debug, Clone, Default)]
pub struct Generated {
    pub queries: Vec<SynthQuery>,
    pub trajectories: Vec<(String, Trajectory)>,
    /// Proposal episodes run.
    pub attempts: usize,
    /// Attempts that yielded a well-formed proposal.
    pub proposed: usize,
}

impl Generated {
    pub fn trajectory(&self, id: &str) -> Option<&Trajectory> {
        self.trajectories
            .iter()
            .find(|(k, _)| k == id)
            .map(|(_, t)| t)
    }
}

fn episode(
    env: &SynthEnv<'_>,
    task: &TaskInstance,
    model: &ModelConfig,
    key: &str,
    session: &mut crate::sandbox::WorkerSession,
    budget: &EpisodeBudget,
) -> Option<Trajectory> {
    let mut client = env.clients.client(model, key).ok()?;
    match env
        .harness
        .run_episode(task, client.as_mut(), session, budget)
    {
        Ok(t) => Some(t),
        Err(EpisodeError::Client { partial, .. }) => Some(*partial),
        Err(_) => None,
    }
}

/// Has the generator explore the seed's data, propose a question, then
/// solve it in a fresh session. Only proposals whose self-solve matches the
/// stated reference are kept.
pub fn generate_queries(
    seed: &TaskInstance,
    cfg: &GeneratorConfig,
    env: &SynthEnv<'_>,
) -> Result<Generated, SynthesisError> {
    let mut out = Generated::default();
    if cfg.n == 0 {
        return Ok(out);
    }
    let max_attempts = cfg.max_attempts.unwrap_or(cfg.n * 3).max(cfg.n);
    let seed_question = seed
        .prompt
        .question
        .clone()
        .unwrap_or_else(|| seed.prompt.description.clone());
    let mut propose_task = seed.clone();
    propose_task.prompt.user_template = Some(PROPOSE_TEMPLATE.to_string());
    propose_task.prompt.instructions = None;

    let mut session = env.manager.acquire_worker(env.profile, seed)?;
    for attempt in 0..max_attempts {
        if out.queries.len() == cfg.n {
            break;
        }
        out.attempts += 1;
        if attempt > 0 {
            session = env.manager.cycle_worker(session)?;
        }
        let pid = format!("{}/propose/{attempt}", seed.id);
        let Some(pt) = episode(
            env,
            &propose_task,
            &cfg.model,
            &pid,
            &mut session,
            &cfg.budget,
        ) else {
            continue;
        };
        let proposal = (pt.terminal == Terminal::Answered)
            .then(|| pt.answer.as_deref().and_then(parse_proposal))
            .flatten();
        out.trajectories.push((pid, pt));
        let Some(p) = proposal else {
            continue;
        };
        out.proposed += 1;

        let query = SynthQuery {
            id: format!("{}-syn{attempt}", seed.id),
            seed_task_id: seed.id.clone(),
            seed_question: seed_question.clone(),
            question: p.question,
            reference: p.reference,
            guideline: p.guideline,
            solve_trajectory_id: format!("{}/solve/{attempt}", seed.id),
        };
        session = env.manager.cycle_worker(session)?;
        let solve_task = query.as_task(seed);
        let Some(st) = episode(
            env,
            &solve_task,
            &cfg.model,
            &query.solve_trajectory_id,
            &mut session,
            &cfg.budget,
        ) else {
            continue;
        };
        let valid = st.terminal == Terminal::Answered
            && st
                .answer
                .as_deref()
                .is_some_and(|a| match_analysis_answer(a, &query.reference, &seed.metric));
        out.trajectories
            .push((query.solve_trajectory_id.clone(), st));
        if valid {
            out.queries.push(query);
        }
    }
    if out.queries.len() < cfg.n {
        return Err(SynthesisError::GeneratorExhausted {
            wanted: cfg.n,
            got: out.queries.len(),
            partial: Box::new(out),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::testkit::*;
    use super::*;
    use crate::client::Script;
    use crate::task::fixtures::analysis_task;
    use std::collections::BTreeMap;

    fn propose(q: &str, r: &str) -> String {
        format!("<answer><question>{q}</question><reference>{r}</reference><guideline>A number.</guideline></answer>")
    }

    fn cfg(model: ModelConfig, n: usize) -> GeneratorConfig {
        GeneratorConfig {
            model,
            n,
            max_attempts: None,
            budget: EpisodeBudget::new(4, 100_000, 600.0).unwrap(),
        }
    }

    #[test]
    fn three_validated_queries() {
        let dir = tempfile::tempdir().unwrap();
        let seed = analysis_task(dir.path(), "seed");
        let mut by_key = BTreeMap::new();
        for (i, (q, r)) in [
            ("How many rows?", "2"),
            ("Oldest age?", "40"),
            ("Youngest age?", "30"),
        ]
        .iter()
        .enumerate()
        {
            by_key.insert(
                format!("seed/propose/{i}"),
                vec![
                    "<python>print(open('/data/people.csv').read())</python>".to_string(),
                    propose(q, r),
                ],
            );
            by_key.insert(
                format!("seed/solve/{i}"),
                vec![format!("<answer>{r}</answer>")],
            );
        }
        let model = scripted(
            dir.path(),
            "gen",
            &Script {
                by_key,
                ..Default::default()
            },
        );
        let kit = Kit::new();
        let g = generate_queries(&seed, &cfg(model, 3), &kit.env()).unwrap();
        assert_eq!(g.queries.len(), 3);
        for q in &g.queries {
            let t = g.trajectory(&q.solve_trajectory_id).unwrap();
            assert_eq!(t.terminal, Terminal::Answered);
            assert_eq!(t.answer.as_deref(), Some(q.reference.as_str()));
        }
        let first = g.trajectory("seed/propose/0").unwrap();
        assert!(first.turns[0].observation().unwrap().contains("ann,30"));
    }

    #[test]
    fn unsolvable_proposal_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let seed = analysis_task(dir.path(), "seed");
        let mut by_key = BTreeMap::new();
        by_key.insert("seed/propose/0".into(), vec![propose("Median?", "35")]);
        by_key.insert("seed/solve/0".into(), vec!["<answer>99</answer>".into()]);
        by_key.insert("seed/propose/1".into(), vec![propose("Count?", "2")]);
        by_key.insert("seed/solve/1".into(), vec!["<answer>2</answer>".into()]);
        let model = scripted(
            dir.path(),
            "gen",
            &Script {
                by_key,
                ..Default::default()
            },
        );
        let kit = Kit::new();
        let g = generate_queries(&seed, &cfg(model, 1), &kit.env()).unwrap();
        assert_eq!(g.queries.len(), 1);
        assert_eq!(g.queries[0].question, "Count?");
        assert_eq!(g.attempts, 2);
    }

    #[test]
    fn exhausted_and_zero() {
        let dir = tempfile::tempdir().unwrap();
        let seed = analysis_task(dir.path(), "seed");
        let model = scripted(dir.path(), "gen", &Script::default());
        let kit = Kit::new();
        assert!(generate_queries(&seed, &cfg(model.clone(), 0), &kit.env())
            .unwrap()
            .queries
            .is_empty());
        match generate_queries(&seed, &cfg(model, 2), &kit.env()) {
            Err(SynthesisError::GeneratorExhausted {
                wanted: 2,
                got: 0,
                partial,
            }) => assert_eq!(partial.attempts, 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn proposal_parsing() {
        assert_eq!(parse_proposal(&propose("q", "1")).unwrap().reference, "1");
        assert!(parse_proposal("<question>q</question>").is_none());
    }
}
