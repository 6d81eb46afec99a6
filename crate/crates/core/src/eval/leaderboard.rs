//! Leaderboard placement and medal bands.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Direction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Medal {
    None,
    Bronze,
    Silver,
    Gold,
}

impl Medal {
    pub fn as_str(self) -> &'static str {
        match self {
            Medal::None => "none",
            Medal::Bronze => "bronze",
            Medal::Silver => "silver",
            Medal::Gold => "gold",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LeaderboardError {
    #[error("leaderboard has no scores")]
    EmptyLeaderboard,
    #[error("rank {rank} is outside 1..={teams}")]
    InvalidRank { rank: u32, teams: u32 },
    #[error("leaderboard line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Existing team scores for one competition, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leaderboard {
    pub competition_id: String,
    direction: Direction,
    scores: Vec<f64>,
}

impl Leaderboard {
    pub fn new(
        competition_id: impl Into<String>,
        direction: Direction,
        mut scores: Vec<f64>,
    ) -> Self {
        sort_best_first(&mut scores, direction);
        Self {
            competition_id: competition_id.into(),
            direction,
            scores,
        }
    }

    /// Parses the leaderboard file format: `#`-prefixed header lines carrying
    /// `competition:` and `direction:`, then one score per line.
    pub fn parse(text: &str) -> Result<Self, LeaderboardError> {
        let mut competition_id = String::new();
        let mut direction = None;
        let mut scores = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                if let Some((k, v)) = header.split_once(':') {
                    match k.trim() {
                        "competition" => competition_id = v.trim().to_string(),
                        "direction" => {
                            direction = Some(match v.trim() {
                                "higher-better" => Direction::HigherBetter,
                                "lower-better" => Direction::LowerBetter,
                                other => {
                                    return Err(LeaderboardError::Parse {
                                        line: i + 1,
                                        message: format!("unknown direction `{other}`"),
                                    })
                                }
                            })
                        }
                        _ => {}
                    }
                }
                continue;
            }
            let v: f64 = line.parse().map_err(|_| LeaderboardError::Parse {
                line: i + 1,
                message: format!("not a score: `{line}`"),
            })?;
            if !v.is_finite() {
                return Err(LeaderboardError::Parse {
                    line: i + 1,
                    message: "score is not finite".into(),
                });
            }
            scores.push(v);
        }
        let direction = direction.ok_or(LeaderboardError::Parse {
            line: 0,
            message: "missing `# direction:` header".into(),
        })?;
        Ok(Self::new(competition_id, direction, scores))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# competition: {}\n# direction: {}\n",
            self.competition_id,
            self.direction.as_str()
        );
        for s in &self.scores {
            out.push_str(&format!("{s}\n"));
        }
        out
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Overrides the direction (the task's target metric is authoritative)
    /// and re-sorts.
    pub fn set_direction(&mut self, direction: Direction) {
        self.direction = direction;
        sort_best_first(&mut self.scores, direction);
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn team_count(&self) -> u32 {
        self.scores.len() as u32
    }

    /// Median of the existing scores.
    pub fn median(&self) -> Option<f64> {
        let n = self.scores.len();
        if n == 0 {
            return None;
        }
        let mut sorted = self.scores.clone();
        sorted.sort_by(f64::total_cmp);
        Some(if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        })
    }
}

fn sort_best_first(scores: &mut [f64], direction: Direction) {
    match direction {
        Direction::HigherBetter => scores.sort_by(|a, b| b.total_cmp(a)),
        Direction::LowerBetter => scores.sort_by(f64::total_cmp),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub rank: u32,
    pub percentile: f64,
    pub above_median: bool,
}

/// Places `score` as an additional entrant: rank is one plus the number of
/// strictly better existing scores, so ties resolve to the best shared rank.
pub fn leaderboard_position(score: f64, board: &Leaderboard) -> Result<Position, LeaderboardError> {
    let teams = board.team_count();
    if teams == 0 {
        return Err(LeaderboardError::EmptyLeaderboard);
    }
    let dir = board.direction();
    let better = board
        .scores()
        .iter()
        .filter(|&&s| dir.better(s, score))
        .count() as u32;
    let rank = better + 1;
    // Worse than every team gives rank teams + 1; clamp to the 0 floor.
    let percentile = (100.0 * (teams as f64 - rank as f64) / teams as f64).max(0.0);
    let median = board.median().ok_or(LeaderboardError::EmptyLeaderboard)?;
    Ok(Position {
        rank,
        percentile,
        above_median: dir.better(score, median),
    })
}

/// `ceil(teams * per_mille / 1000)` in integer arithmetic.
fn top_fraction(teams: u32, per_mille: u32) -> u32 {
    (teams * per_mille).div_ceil(1000)
}

/// Medal thresholds by team count. Percentage bands convert to ranks by
/// ceiling so a small board still awards its top spot.
pub fn medal(rank: u32, teams: u32) -> Result<Medal, LeaderboardError> {
    if rank == 0 || rank > teams {
        return Err(LeaderboardError::InvalidRank { rank, teams });
    }
    let (gold, silver, bronze) = match teams {
        0..=99 => (
            top_fraction(teams, 100),
            top_fraction(teams, 200),
            top_fraction(teams, 400),
        ),
        100..=249 => (10, top_fraction(teams, 200), top_fraction(teams, 400)),
        250..=999 => (10 + top_fraction(teams, 2), 50, 100),
        _ => (
            10 + top_fraction(teams, 2),
            top_fraction(teams, 50),
            top_fraction(teams, 100),
        ),
    };
    Ok(if rank <= gold {
        Medal::Gold
    } else if rank <= silver {
        Medal::Silver
    } else if rank <= bronze {
        Medal::Bronze
    } else {
        Medal::None
    })
}
