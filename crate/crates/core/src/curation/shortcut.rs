use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CurationError;
use crate::client::{ClientBackendRegistry, ModelConfig};
use crate::eval::match_analysis_answer;
use crate::harness::{EpisodeBudget, EpisodeError, Harness, Terminal};
use crate::sandbox::{ContainerProfile, SandboxManager};
use crate::task::TaskInstance;

#[derive(Debug, Clone)]
pub struct ShortcutConfig {
    pub judges: Vec<ModelConfig>,
    /// Correct file-less answers needed to call a task shortcut-solvable.
    pub k: usize,
    pub budget: EpisodeBudget,
}

impl ShortcutConfig {
    pub fn validate(&self) -> Result<(), CurationError> {
        if self.k == 0 || self.k > self.judges.len() {
            return Err(CurationError::Config(format!(
                "k = {} must be in 1..={}",
                self.k,
                self.judges.len()
            )));
        }
        self.budget
            .validate()
            .map_err(|e| CurationError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "vote", content = "reason", rename_all = "snake_case")]
pub enum Vote {
    Correct,
    Incorrect,
    /// The episode could not run to completion.
    Undetermined(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortcutVerdict {
    ShortcutSolvable,
    Retained,
    /// Retained because at least one vote could not be cast.
    Undetermined,
}

/// Pure threshold rule over boolean votes.
pub fn shortcut_solvable(votes: &[bool], k: usize) -> bool {
    votes.iter().filter(|v| **v).count() >= k
}

/// Folds one task's votes. Any undetermined vote keeps the task.
pub fn classify(votes: &[Vote], k: usize) -> ShortcutVerdict {
    if votes.iter().any(|v| matches!(v, Vote::Undetermined(_))) {
        return ShortcutVerdict::Undetermined;
    }
    let bools: Vec<bool> = votes.iter().map(|v| *v == Vote::Correct).collect();
    if shortcut_solvable(&bools, k) {
        ShortcutVerdict::ShortcutSolvable
    } else {
        ShortcutVerdict::Retained
    }
}

/// Runs one judge on one task with no data available.
pub trait VoteRunner: Sync {
    fn vote(&self, task: &TaskInstance, judge: &ModelConfig, budget: &EpisodeBudget) -> Vote;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskVotes {
    pub task_id: String,
    pub votes: Vec<(String, Vote)>,
    pub verdict: ShortcutVerdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortcutReport {
    pub k: usize,
    pub judges: Vec<String>,
    pub retained: Vec<String>,
    pub shortcut_solvable: Vec<String>,
    /// Retained tasks whose vote was incomplete.
    pub undetermined: Vec<String>,
    pub matrix: Vec<TaskVotes>,
}

impl ShortcutReport {
    /// Re-derives the partition at a different threshold from the recorded
    /// vote matrix.
    pub fn at_threshold(&self, k: usize) -> ShortcutReport {
        let matrix: Vec<TaskVotes> = self
            .matrix
            .iter()
            .map(|t| {
                let votes: Vec<Vote> = t.votes.iter().map(|(_, v)| v.clone()).collect();
                TaskVotes {
                    verdict: classify(&votes, k),
                    ..t.clone()
                }
            })
            .collect();
        assemble(k, self.judges.clone(), matrix)
    }
}

fn assemble(k: usize, judges: Vec<String>, matrix: Vec<TaskVotes>) -> ShortcutReport {
    let pick = |want: ShortcutVerdict| -> Vec<String> {
        matrix
            .iter()
            .filter(|t| t.verdict == want)
            .map(|t| t.task_id.clone())
            .collect()
    };
    let shortcut = pick(ShortcutVerdict::ShortcutSolvable);
    let undetermined = pick(ShortcutVerdict::Undetermined);
    let retained = matrix
        .iter()
        .filter(|t| t.verdict != ShortcutVerdict::ShortcutSolvable)
        .map(|t| t.task_id.clone())
        .collect();
    ShortcutReport {
        k,
        judges,
        retained,
        shortcut_solvable: shortcut,
        undetermined,
        matrix,
    }
}

/// Votes every (task, judge) pair in parallel and partitions the tasks.
pub fn shortcut_filter(
    tasks: &[TaskInstance],
    cfg: &ShortcutConfig,
    runner: &dyn VoteRunner,
) -> Result<ShortcutReport, CurationError> {
    cfg.validate()?;
    let pairs: Vec<(usize, usize)> = (0..tasks.len())
        .flat_map(|t| (0..cfg.judges.len()).map(move |j| (t, j)))
        .collect();
    let cast: Vec<Vote> = pairs
        .par_iter()
        .map(|&(t, j)| runner.vote(&tasks[t], &cfg.judges[j], &cfg.budget))
        .collect();
    let mut by_task: BTreeMap<usize, Vec<(String, Vote)>> = BTreeMap::new();
    for ((t, j), v) in pairs.into_iter().zip(cast) {
        by_task
            .entry(t)
            .or_default()
            .push((cfg.judges[j].model_id.clone(), v));
    }
    let matrix = by_task
        .into_iter()
        .map(|(t, votes)| {
            let plain: Vec<Vote> = votes.iter().map(|(_, v)| v.clone()).collect();
            TaskVotes {
                task_id: tasks[t].id.clone(),
                verdict: classify(&plain, cfg.k),
                votes,
            }
        })
        .collect();
    let judges = cfg.judges.iter().map(|j| j.model_id.clone()).collect();
    Ok(assemble(cfg.k, judges, matrix))
}

/// Runs real episodes in sessions that mount no task data.
pub struct EpisodeVoteRunner<'a> {
    pub manager: &'a SandboxManager,
    pub profile: &'a ContainerProfile,
    pub clients: &'a ClientBackendRegistry,
    pub harness: &'a Harness,
}

impl VoteRunner for EpisodeVoteRunner<'_> {
    fn vote(&self, task: &TaskInstance, judge: &ModelConfig, budget: &EpisodeBudget) -> Vote {
        let Some(gold) = &task.gold_answer else {
            return Vote::Undetermined("task has no gold answer".into());
        };
        let mut session = match self.manager.acquire_unmounted(self.profile) {
            Ok(s) => s,
            Err(e) => return Vote::Undetermined(e.to_string()),
        };
        if !session.mounts().is_empty() {
            return Vote::Undetermined("session unexpectedly has data mounts".into());
        }
        let mut client = match self.clients.client(judge, &task.id) {
            Ok(c) => c,
            Err(e) => return Vote::Undetermined(e.to_string()),
        };
        match self
            .harness
            .run_episode(task, client.as_mut(), &mut session, budget)
        {
            Ok(t) if t.terminal == Terminal::FatalError => {
                Vote::Undetermined(t.error.unwrap_or_else(|| "fatal episode".into()))
            }
            Ok(t) => match (&t.answer, t.terminal) {
                (Some(a), Terminal::Answered)
                    if match_analysis_answer(a, gold.reveal(), &task.metric) =>
                {
                    Vote::Correct
                }
                _ => Vote::Incorrect,
            },
            Err(EpisodeError::Client { error, .. }) => Vote::Undetermined(error.to_string()),
            Err(e) => Vote::Undetermined(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{Script, ScriptedBackend};
    use crate::sandbox::fake::FakeBackend;
    use crate::sandbox::ManagerConfig;
    use crate::task::fixtures::analysis_task;
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn threshold_examples() {
        assert!(shortcut_solvable(&[true, true, true, false, false], 3));
        assert!(!shortcut_solvable(&[false; 5], 3));
        assert!(!shortcut_solvable(&[true, true, false, false, false], 3));
    }

    #[test]
    fn undetermined_never_drops() {
        let v = vec![
            Vote::Correct,
            Vote::Correct,
            Vote::Correct,
            Vote::Undetermined("boom".into()),
            Vote::Incorrect,
        ];
        assert_eq!(classify(&v, 3), ShortcutVerdict::Undetermined);
    }

    struct Table(BTreeMap<(String, String), Vote>);

    impl VoteRunner for Table {
        fn vote(&self, task: &TaskInstance, judge: &ModelConfig, _: &EpisodeBudget) -> Vote {
            self.0[&(task.id.clone(), judge.model_id.clone())].clone()
        }
    }

    fn judges(n: usize) -> Vec<ModelConfig> {
        (0..n)
            .map(|i| ModelConfig::scripted(format!("j{i}"), ""))
            .collect()
    }

    fn budget() -> EpisodeBudget {
        EpisodeBudget::new(3, 100_000, 600.0).unwrap()
    }

    proptest! {
        #[test]
        fn raising_k_never_grows_shortcut_set(matrix in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 5), 1..12)) {
            let dir = tempfile::tempdir().unwrap();
            let tasks: Vec<TaskInstance> = (0..matrix.len()).map(|i| analysis_task(dir.path(), &format!("t{i}"))).collect();
            let mut table = BTreeMap::new();
            for (i, row) in matrix.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    table.insert((format!("t{i}"), format!("j{j}")), if *v { Vote::Correct } else { Vote::Incorrect });
                }
            }
            let cfg = ShortcutConfig { judges: judges(5), k: 1, budget: budget() };
            let base = shortcut_filter(&tasks, &cfg, &Table(table)).unwrap();
            let mut prev = base.shortcut_solvable.clone();
            let any: Vec<String> = matrix.iter().enumerate().filter(|(_, r)| r.contains(&true)).map(|(i, _)| format!("t{i}")).collect();
            prop_assert_eq!(&prev, &any);
            for k in 2..=5 {
                let cur = base.at_threshold(k).shortcut_solvable;
                prop_assert!(cur.iter().all(|t| prev.contains(t)));
                prev = cur;
            }
            let unanimous: Vec<String> = matrix.iter().enumerate().filter(|(_, r)| r.iter().all(|v| *v)).map(|(i, _)| format!("t{i}")).collect();
            prop_assert_eq!(prev, unanimous);
        }
    }

    #[test]
    fn bad_k_rejected() {
        let cfg = ShortcutConfig {
            judges: judges(2),
            k: 3,
            budget: budget(),
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn episode_runner_uses_unmounted_sessions() {
        let dir = tempfile::tempdir().unwrap();
        let task = analysis_task(dir.path(), "t1");
        let script_path = dir.path().join("script.json");
        // Two judges guess the gold answer, one tries to read the data first.
        let guess = Script {
            default: vec!["<answer>35</answer>".into()],
            ..Default::default()
        };
        let reader = Script {
            default: vec![
                "<python>print(open('/data/people.csv').read())</python>".into(),
                "<answer>unknown</answer>".into(),
            ],
            ..Default::default()
        };
        std::fs::write(&script_path, serde_json::to_string(&guess).unwrap()).unwrap();
        let reader_path = dir.path().join("reader.json");
        std::fs::write(&reader_path, serde_json::to_string(&reader).unwrap()).unwrap();
        let mut js = judges(3);
        js[0].endpoint = script_path.display().to_string();
        js[1].endpoint = script_path.display().to_string();
        js[2].endpoint = reader_path.display().to_string();

        let manager =
            SandboxManager::new(Arc::new(FakeBackend::default()), ManagerConfig::default());
        let profile = ContainerProfile::new("p", "img");
        let mut clients = ClientBackendRegistry::default();
        clients.register(Arc::new(ScriptedBackend));
        let harness = Harness::default();
        let runner = EpisodeVoteRunner {
            manager: &manager,
            profile: &profile,
            clients: &clients,
            harness: &harness,
        };
        let cfg = ShortcutConfig {
            judges: js,
            k: 2,
            budget: budget(),
        };
        let rep = shortcut_filter(std::slice::from_ref(&task), &cfg, &runner).unwrap();
        assert_eq!(rep.shortcut_solvable, vec!["t1"]);
        let votes: Vec<&Vote> = rep.matrix[0].votes.iter().map(|(_, v)| v).collect();
        assert_eq!(
            votes,
            vec![&Vote::Correct, &Vote::Correct, &Vote::Incorrect]
        );
        assert!(rep.at_threshold(3).shortcut_solvable.is_empty());
    }
}
