use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SynthEnv, SynthQuery, SynthesisError};
use crate::client::{Message, ModelConfig};
use crate::harness::{EpisodeBudget, EpisodeError, Terminal, Trajectory};
use crate::task::TaskInstance;

pub const DEFAULT_K: usize = 4;
pub const DEFAULT_TEMPERATURE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub k: usize,
    pub temperature: f64,
    pub budget: EpisodeBudget,
}

impl SamplingConfig {
    pub fn new(budget: EpisodeBudget) -> Self {
        Self {
            k: DEFAULT_K,
            temperature: DEFAULT_TEMPERATURE,
            budget,
        }
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        if self.k == 0 {
            return Err(SynthesisError::Config("K must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(SynthesisError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        self.budget
            .validate()
            .map_err(|e| SynthesisError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub sample: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    /// Finished samples as (sample index, session id, trajectory).
    pub trajectories: Vec<(usize, String, Trajectory)>,
    pub failures: Vec<SampleFailure>,
    /// Opening messages shared by every sample.
    pub prompt: Vec<Message>,
}

impl SampleSet {
    pub fn sample_id(query: &SynthQuery, sample: usize) -> String {
        format!("{}/sample/{sample}", query.id)
    }
}

enum One {
    Done(String, Trajectory),
    Failed(String),
}

fn one(
    task: &TaskInstance,
    model: &ModelConfig,
    key: &str,
    budget: &EpisodeBudget,
    env: &SynthEnv<'_>,
) -> One {
    let mut session = match env.manager.acquire_worker(env.profile, task) {
        Ok(s) => s,
        Err(e) => return One::Failed(e.to_string()),
    };
    let sid = session.id().to_string();
    let mut client = match env.clients.client(model, key) {
        Ok(c) => c,
        Err(e) => return One::Failed(e.to_string()),
    };
    match env
        .harness
        .run_episode(task, client.as_mut(), &mut session, budget)
    {
        Ok(t) if t.terminal == Terminal::FatalError => {
            One::Failed(t.error.unwrap_or_else(|| "fatal episode".into()))
        }
        Ok(t) => One::Done(sid, t),
        Err(EpisodeError::Client { error, .. }) => One::Failed(error.to_string()),
        Err(e) => One::Failed(e.to_string()),
    }
}

/// Runs K independent episodes for `query`, each in its own fresh session,
/// with the client's temperature set from `cfg`.
pub fn sample_trajectories(
    query: &SynthQuery,
    seed: &TaskInstance,
    model: &ModelConfig,
    cfg: &SamplingConfig,
    env: &SynthEnv<'_>,
) -> Result<SampleSet, SynthesisError> {
    cfg.validate()?;
    let task = query.as_task(seed);
    let model = model.with_temperature(cfg.temperature);
    let prompt = env
        .harness
        .opening_messages(&task, &env.profile.data_mount_root)?;
    let results: Vec<One> = (0..cfg.k)
        .into_par_iter()
        .map(|i| {
            one(
                &task,
                &model,
                &SampleSet::sample_id(query, i),
                &cfg.budget,
                env,
            )
        })
        .collect();
    let mut set = SampleSet {
        prompt,
        ..Default::default()
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            One::Done(sid, t) => set.trajectories.push((i, sid, t)),
            One::Failed(reason) => set.failures.push(SampleFailure { sample: i, reason }),
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::super::testkit::*;
    use super::*;
    use crate::client::Script;
    use crate::harness::to_jsonl;
    use crate::task::fixtures::analysis_task;
    use std::collections::{BTreeMap, BTreeSet};

    fn cfg(k: usize) -> SamplingConfig {
        SamplingConfig {
            k,
            ..SamplingConfig::new(EpisodeBudget::new(4, 100_000, 600.0).unwrap())
        }
    }

    #[test]
    fn k_samples_in_distinct_sessions() {
        let dir = tempfile::tempdir().unwrap();
        let seed = analysis_task(dir.path(), "seed");
        let q = query("q1", "What is the mean age?", "How many people?");
        let model = scripted(
            dir.path(),
            "s",
            &Script {
                default: vec![
                    "<python>print(2)</python>".into(),
                    "<answer>2</answer>".into(),
                ],
                ..Default::default()
            },
        );
        let kit = Kit::new();
        let set = sample_trajectories(&q, &seed, &model, &cfg(4), &kit.env()).unwrap();
        assert_eq!(set.trajectories.len(), 4);
        let sessions: BTreeSet<_> = set.trajectories.iter().map(|(_, s, _)| s.clone()).collect();
        assert_eq!(sessions.len(), 4);
        assert_eq!(set.prompt.len(), 2);
        assert!(set.prompt[1].content.contains("How many people?"));
    }

    #[test]
    fn fatal_sample_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let seed = analysis_task(dir.path(), "seed");
        let q = query("q1", "s", "q");
        let mut by_key = BTreeMap::new();
        by_key.insert(
            "q1/sample/2".to_string(),
            vec!["<python>exit()</python>".to_string()],
        );
        let model = scripted(
            dir.path(),
            "s",
            &Script {
                default: vec!["<answer>35</answer>".into()],
                by_key,
                ..Default::default()
            },
        );
        let kit = Kit::new();
        let set = sample_trajectories(&q, &seed, &model, &cfg(4), &kit.env()).unwrap();
        assert_eq!(set.trajectories.len(), 3);
        assert_eq!(set.failures.len(), 1);
        assert_eq!(set.failures[0].sample, 2);
    }

    #[test]
    fn zero_temperature_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let seed = analysis_task(dir.path(), "seed");
        let q = query("q1", "s", "q");
        let model = scripted(
            dir.path(),
            "s",
            &Script {
                default: vec![
                    "<python>x = [3, 1, 2]\nprint(sorted(x))</python>".into(),
                    "<answer>35</answer>".into(),
                ],
                ..Default::default()
            },
        );
        let kit = Kit::new();
        let mut c = cfg(2);
        c.temperature = 0.0;
        let a = sample_trajectories(&q, &seed, &model, &c, &kit.env()).unwrap();
        let b = sample_trajectories(&q, &seed, &model, &c, &kit.env()).unwrap();
        let dump = |s: &SampleSet| {
            s.trajectories
                .iter()
                .map(|(_, _, t)| to_jsonl(t))
                .collect::<Vec<_>>()
        };
        assert_eq!(dump(&a), dump(&b));
        assert_eq!(dump(&a)[0], dump(&a)[1]);
    }

    #[test]
    fn k_zero_rejected() {
        assert!(cfg(0).validate().is_err());
    }
}
