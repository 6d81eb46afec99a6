//! Task metrics, registered by id. The core set covers accuracy, RMSE, MAE
//! and log-loss; competition-specific metrics register as plugins.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use thiserror::Error;

use super::Direction;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("cannot parse table: {0}")]
    Table(String),
    #[error("submission has no row for id `{0}`")]
    MissingId(String),
    #[error("submission lacks column `{0}`")]
    MissingColumn(String),
    #[error("non-numeric value `{0}`")]
    NotNumeric(String),
    #[error("no rows to score")]
    Empty,
}

/// A parsed delimited table keyed by its first column.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self, MetricError> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let header = rdr
            .headers()
            .map_err(|e| MetricError::Table(e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let rows = rdr
            .records()
            .map(|r| {
                r.map(|r| r.iter().map(|f| f.trim().to_string()).collect())
                    .map_err(|e| MetricError::Table(e.to_string()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Label rows aligned with submission rows: `(truth, prediction)` per target
/// column, per row, in label order.
type Aligned = Vec<Vec<(String, String)>>;

fn align(submission: &Table, labels: &Table) -> Result<Aligned, MetricError> {
    if labels.rows.is_empty() {
        return Err(MetricError::Empty);
    }
    let targets: Vec<(usize, usize)> = labels
        .header
        .iter()
        .enumerate()
        .skip(1)
        .map(|(li, name)| {
            submission
                .column(name)
                .map(|si| (li, si))
                .ok_or_else(|| MetricError::MissingColumn(name.clone()))
        })
        .collect::<Result<_, _>>()?;
    let by_id: HashMap<&str, &Vec<String>> = submission
        .rows
        .iter()
        .filter_map(|r| r.first().map(|id| (id.as_str(), r)))
        .collect();
    labels
        .rows
        .iter()
        .map(|row| {
            let id = row.first().map(String::as_str).unwrap_or_default();
            let sub = by_id
                .get(id)
                .ok_or_else(|| MetricError::MissingId(id.to_string()))?;
            Ok(targets
                .iter()
                .map(|&(li, si)| {
                    (
                        row.get(li).cloned().unwrap_or_default(),
                        sub.get(si).cloned().unwrap_or_default(),
                    )
                })
                .collect())
        })
        .collect()
}

fn num(s: &str) -> Result<f64, MetricError> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| MetricError::NotNumeric(s.to_string()))
}

pub trait Metric: Send + Sync {
    fn id(&self) -> &str;
    fn direction(&self) -> Direction;
    fn score(&self, submission: &Table, labels: &Table) -> Result<f64, MetricError>;
}

struct Accuracy;

impl Metric for Accuracy {
    fn id(&self) -> &str {
        "accuracy"
    }
    fn direction(&self) -> Direction {
        Direction::HigherBetter
    }
    fn score(&self, submission: &Table, labels: &Table) -> Result<f64, MetricError> {
        let rows = align(submission, labels)?;
        let hits = rows
            .iter()
            .filter(|cells| {
                cells.iter().all(|(t, p)| match (num(t), num(p)) {
                    (Ok(a), Ok(b)) => a == b,
                    _ => t == p,
                })
            })
            .count();
        Ok(hits as f64 / rows.len() as f64)
    }
}

fn numeric_errors(submission: &Table, labels: &Table) -> Result<Vec<f64>, MetricError> {
    let mut errs = Vec::new();
    for cells in align(submission, labels)? {
        for (t, p) in cells {
            errs.push(num(&p)? - num(&t)?);
        }
    }
    if errs.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(errs)
}

struct Rmse;

impl Metric for Rmse {
    fn id(&self) -> &str {
        "rmse"
    }
    fn direction(&self) -> Direction {
        Direction::LowerBetter
    }
    fn score(&self, submission: &Table, labels: &Table) -> Result<f64, MetricError> {
        let e = numeric_errors(submission, labels)?;
        Ok((e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt())
    }
}

struct Mae;

impl Metric for Mae {
    fn id(&self) -> &str {
        "mae"
    }
    fn direction(&self) -> Direction {
        Direction::LowerBetter
    }
    fn score(&self, submission: &Table, labels: &Table) -> Result<f64, MetricError> {
        let e = numeric_errors(submission, labels)?;
        Ok(e.iter().map(|x| x.abs()).sum::<f64>() / e.len() as f64)
    }
}

/// Binary log-loss for a single probability column; categorical
/// cross-entropy over one-hot label columns otherwise. Probabilities are
/// clipped to `[1e-15, 1 - 1e-15]` and multi-column rows renormalised.
struct LogLoss;

const EPS: f64 = 1e-15;

impl Metric for LogLoss {
    fn id(&self) -> &str {
        "log_loss"
    }
    fn direction(&self) -> Direction {
        Direction::LowerBetter
    }
    fn score(&self, submission: &Table, labels: &Table) -> Result<f64, MetricError> {
        let rows = align(submission, labels)?;
        let mut total = 0.0;
        for cells in &rows {
            if cells.len() == 1 {
                let y = num(&cells[0].0)?;
                let p = num(&cells[0].1)?.clamp(EPS, 1.0 - EPS);
                total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            } else {
                let probs: Vec<f64> = cells
                    .iter()
                    .map(|(_, p)| num(p).map(|v| v.clamp(EPS, 1.0 - EPS)))
                    .collect::<Result<_, _>>()?;
                let z: f64 = probs.iter().sum();
                for ((t, _), p) in cells.iter().zip(&probs) {
                    total -= num(t)? * (p / z).ln();
                }
            }
        }
        Ok(total / rows.len() as f64)
    }
}

/// Metrics by id.
#[derive(Clone)]
pub struct MetricRegistry {
    metrics: BTreeMap<String, Arc<dyn Metric>>,
}

impl Default for MetricRegistry {
    fn default() -> Self {
        let mut r = Self {
            metrics: BTreeMap::new(),
        };
        r.register(Arc::new(Accuracy));
        r.register(Arc::new(Rmse));
        r.register(Arc::new(Mae));
        r.register(Arc::new(LogLoss));
        r
    }
}

impl MetricRegistry {
    pub fn register(&mut self, metric: Arc<dyn Metric>) {
        self.metrics.insert(metric.id().to_string(), metric);
    }

    pub fn get(&self, id: &str) -> Result<&Arc<dyn Metric>, MetricError> {
        self.metrics
            .get(id)
            .ok_or_else(|| MetricError::UnknownMetric(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.metrics.keys().map(String::as_str)
    }

    pub fn score(&self, id: &str, submission: &str, labels: &str) -> Result<f64, MetricError> {
        let metric = self.get(id)?;
        metric.score(&Table::parse(submission)?, &Table::parse(labels)?)
    }
}
