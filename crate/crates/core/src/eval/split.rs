use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::seqmodel::MAX_HISTORY_ITEMS;

/// One `(user, item, timestamp)` record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub ts: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InteractionLog {
    pub records: Vec<Interaction>,
}

impl InteractionLog {
    pub fn new(records: Vec<Interaction>) -> Self {
        Self { records }
    }

    pub fn read_jsonl(path: &Path) -> Result<Self, EvalError> {
        let reader = BufReader::new(File::open(path)?);
        let mut records = Vec::new();
        let mut offset = 0u64;
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if !line.trim().is_empty() {
                let rec: Interaction = serde_json::from_str(&line).map_err(|e| EvalError::Format {
                    offset: offset + e.column().saturating_sub(1) as u64,
                    message: format!("{} line {}: {e}", path.display(), n + 1),
                })?;
                records.push(rec);
            }
            offset += line.len() as u64 + 1;
        }
        Ok(Self { records })
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), EvalError> {
        let mut out = BufWriter::new(File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Records grouped per user (sorted by user id), each chronological.
    /// Equal timestamps keep their log order.
    pub fn by_user(&self) -> BTreeMap<&str, Vec<&Interaction>> {
        let mut users: BTreeMap<&str, Vec<&Interaction>> = BTreeMap::new();
        for r in &self.records {
            users.entry(r.user.as_str()).or_default().push(r);
        }
        for recs in users.values_mut() {
            recs.sort_by_key(|r| r.ts);
        }
        users
    }
}

/// A next-item prediction case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCase {
    pub user: String,
    /// Chronological, most recent [`MAX_HISTORY_ITEMS`] items.
    pub history: Vec<usize>,
    pub target: usize,
    /// Target never occurs in the training interactions.
    pub target_unseen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalSplit {
    /// Per-user chronological training items (interactions before `t_valid`).
    pub train: Vec<(String, Vec<usize>)>,
    pub valid: Vec<EvalCase>,
    pub test: Vec<EvalCase>,
    /// Per catalog item: occurs in a training interaction.
    pub seen: Vec<bool>,
    pub warnings: Vec<String>,
}

impl TemporalSplit {
    pub fn unseen_share(cases: &[EvalCase]) -> f64 {
        if cases.is_empty() {
            return 0.0;
        }
        cases.iter().filter(|c| c.target_unseen).count() as f64 / cases.len() as f64
    }
}

/// Splits by timestamp: training interactions are strictly before `t_valid`,
/// validation targets fall in `[t_valid, t_test)` and test targets at or after
/// `t_test`. Every evaluation target takes the user's last
/// `MAX_HISTORY_ITEMS` earlier interactions as history; targets without history are skipped.
pub fn temporal_split(
    log: &InteractionLog,
    item_ids: &[String],
    t_valid: i64,
    t_test: i64,
) -> Result<TemporalSplit, EvalError> {
    if t_valid >= t_test {
        return Err(EvalError::InvalidSplit(format!(
            "t_valid ({t_valid}) must precede t_test ({t_test})"
        )));
    }
    let index: HashMap<&str, usize> = item_ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let lookup = |item: &str| {
        index
            .get(item)
            .copied()
            .ok_or_else(|| EvalError::UnknownItem(item.to_owned()))
    };

    let mut seen = vec![false; item_ids.len()];
    for r in &log.records {
        if r.ts < t_valid {
            seen[lookup(&r.item)?] = true;
        }
    }

    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for (user, recs) in log.by_user() {
        let items: Vec<usize> = recs
            .iter()
            .map(|r| lookup(&r.item))
            .collect::<Result<_, _>>()?;
        let n_train = recs.iter().take_while(|r| r.ts < t_valid).count();
        if n_train > 0 {
            train.push((user.to_owned(), items[..n_train].to_vec()));
        }
        for (pos, r) in recs.iter().enumerate().skip(n_train) {
            if pos == 0 {
                continue;
            }
            let start = pos.saturating_sub(MAX_HISTORY_ITEMS);
            let case = EvalCase {
                user: user.to_owned(),
                history: items[start..pos].to_vec(),
                target: items[pos],
                target_unseen: !seen[items[pos]],
            };
            if r.ts < t_test {
                valid.push(case);
            } else {
                test.push(case);
            }
        }
    }

    let mut warnings = Vec::new();
    for (name, cases) in [("validation", &valid), ("test", &test)] {
        if cases.is_empty() {
            warnings.push(format!("{name} split is empty"));
        }
    }
    if train.is_empty() {
        warnings.push("training split is empty".into());
    }
    Ok(TemporalSplit {
        train,
        valid,
        test,
        seen,
        warnings,
    })
}
