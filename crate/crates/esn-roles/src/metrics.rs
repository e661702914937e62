//! Per-user behavioural metrics derived from threads, content flags and
//! the reply graph.
//!
//! All sixteen metrics are computed over public messages inside the study
//! window; callers pass messages already filtered that way. Ratios with a
//! zero denominator are 0 under the default policy, and every such cell is
//! tallied per column so the summary can show how often the fallback
//! applied.

use crate::graph::CentralityTable;
use crate::ids::UserId;
use crate::ingest::{Message, ThreadIndex};
use crate::numfmt::fmt_sig;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no eligible users to compute metrics for")]
    NoUsers,
    #[error("eligible user {0} authored no message in the provided log")]
    UserAbsent(UserId),
    #[error("zero denominator for {metric} of user {user} under the fail policy")]
    ZeroDenominator { metric: &'static str, user: UserId },
}

/// The metric columns in their fixed matrix order. V14 is split into its
/// incoming and outgoing halves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricId {
    V1,
    V2,
    V3,
    V4,
    V5,
    V6,
    V7,
    V8,
    V9,
    V10,
    V11,
    V12,
    V13,
    V14In,
    V14Out,
    V15,
}

impl MetricId {
    pub const ALL: [MetricId; 16] = [
        MetricId::V1,
        MetricId::V2,
        MetricId::V3,
        MetricId::V4,
        MetricId::V5,
        MetricId::V6,
        MetricId::V7,
        MetricId::V8,
        MetricId::V9,
        MetricId::V10,
        MetricId::V11,
        MetricId::V12,
        MetricId::V13,
        MetricId::V14In,
        MetricId::V14Out,
        MetricId::V15,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MetricId::V1 => "V1",
            MetricId::V2 => "V2",
            MetricId::V3 => "V3",
            MetricId::V4 => "V4",
            MetricId::V5 => "V5",
            MetricId::V6 => "V6",
            MetricId::V7 => "V7",
            MetricId::V8 => "V8",
            MetricId::V9 => "V9",
            MetricId::V10 => "V10",
            MetricId::V11 => "V11",
            MetricId::V12 => "V12",
            MetricId::V13 => "V13",
            MetricId::V14In => "V14in",
            MetricId::V14Out => "V14out",
            MetricId::V15 => "V15",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            MetricId::V1 => "share of threads the user contributed to",
            MetricId::V2 => "share of threads the user initiated",
            MetricId::V3 => "initiated threads per authored initial message",
            MetricId::V4 => "replies written per thread contributed to",
            MetricId::V5 => "initial messages per reply written",
            MetricId::V6 => "questions per authored initial message",
            MetricId::V7 => "share of received tags that sit in question messages",
            MetricId::V8 => "distinct users replied to per reply written",
            MetricId::V9 => "distinct repliers per reply received",
            MetricId::V10 => "mean words per message",
            MetricId::V11 => "share of messages carrying an attachment",
            MetricId::V12 => "thanks messages tagging the user per reply received",
            MetricId::V13 => "praise messages tagging the user per reply received",
            MetricId::V14In => "distinct users the user received replies from",
            MetricId::V14Out => "distinct users the user replied to",
            MetricId::V15 => "betweenness in the reply graph",
        }
    }
}

/// What to do when a ratio metric divides by zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroDenominatorPolicy {
    /// Report the metric as exactly 0. The per-column tally still counts
    /// the cell.
    #[default]
    Zero,
    /// Abort with an error naming the metric and user.
    Fail,
}

/// Metric stage switches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricPolicy {
    pub zero_denominator: ZeroDenominatorPolicy,
    /// When set, only initial messages qualify as question messages for
    /// the tag ratio (V7). By default any message whose flags satisfy the
    /// question definition counts.
    pub v7_strict_initials: bool,
}

/// The user-by-metric matrix. Rows follow `users` (sorted by id), columns
/// follow [`MetricId::ALL`].
#[derive(Clone, Debug)]
pub struct MetricMatrix {
    pub users: Vec<UserId>,
    pub values: DMatrix<f64>,
    /// Per column: number of cells whose denominator was zero.
    pub zero_denominators: Vec<u64>,
}

/// Mean, spread and range of one metric column.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ColumnStats {
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub zero_denominator_rows: u64,
}

#[derive(Default)]
struct UserCounts {
    messages: u64,
    words: u64,
    attachments: u64,
    initials: u64,
    replies: u64,
    questions_initiated: u64,
    replies_received: u64,
    threads_contributed: u64,
    threads_initiated: u64,
    distinct_replied_to: BTreeSet<UserId>,
    distinct_received_from: BTreeSet<UserId>,
    tags_received: u64,
    question_tags_received: u64,
    thanks_tags_received: u64,
    praise_tags_received: u64,
}

/// Computes the metric matrix for `eligible` users.
///
/// `messages` must be the public, windowed message set that `threads` and
/// `centrality` were built from. Every eligible user must have authored at
/// least one of these messages; anything else is a consistency error.
pub fn compute_metric_matrix(
    messages: &[Message],
    threads: &ThreadIndex,
    centrality: &CentralityTable,
    eligible: &BTreeSet<UserId>,
    policy: MetricPolicy,
) -> Result<MetricMatrix, MetricsError> {
    if eligible.is_empty() {
        return Err(MetricsError::NoUsers);
    }

    let mut counts: BTreeMap<UserId, UserCounts> = BTreeMap::new();
    for m in messages {
        let c = counts.entry(m.author_id.clone()).or_default();
        c.messages += 1;
        c.words += m.word_count;
        if m.has_attachment {
            c.attachments += 1;
        }
        if m.is_initial() {
            c.initials += 1;
            if m.flags.is_question() {
                c.questions_initiated += 1;
            }
        } else {
            c.replies += 1;
            if let Some(res) = threads.resolution(&m.message_id) {
                c.distinct_replied_to.insert(res.target_author.clone());
            }
        }
    }
    // A reply updates its target's counters too; done in a second pass so
    // the author entry above is not aliased.
    for m in messages {
        if let Some(res) = m.is_reply().then(|| threads.resolution(&m.message_id)).flatten() {
            let target = counts.entry(res.target_author.clone()).or_default();
            target.replies_received += 1;
            target.distinct_received_from.insert(m.author_id.clone());
        }
    }

    // Tag-based counters, once per (message, tagged user) pair.
    for m in messages {
        let is_question_msg = m.flags.is_question() && (!policy.v7_strict_initials || m.is_initial());
        for tagged in m.tagged_distinct() {
            let c = counts.entry(tagged.clone()).or_default();
            c.tags_received += 1;
            if is_question_msg {
                c.question_tags_received += 1;
            }
            if m.flags.thanks {
                c.thanks_tags_received += 1;
            }
            if m.flags.praise {
                c.praise_tags_received += 1;
            }
        }
    }

    for thread in threads.threads.values() {
        for participant in &thread.participants {
            counts.entry(participant.clone()).or_default().threads_contributed += 1;
        }
        counts
            .entry(thread.initial_author.clone())
            .or_default()
            .threads_initiated += 1;
    }

    let authored: BTreeSet<&UserId> = messages.iter().map(|m| &m.author_id).collect();
    for user in eligible {
        if !authored.contains(user) {
            return Err(MetricsError::UserAbsent(user.clone()));
        }
    }

    let total_threads = threads.thread_count() as u64;
    let n = eligible.len();
    let mut values = DMatrix::zeros(n, MetricId::ALL.len());
    let mut zero_denominators = vec![0u64; MetricId::ALL.len()];
    let empty = UserCounts::default();

    for (row, user) in eligible.iter().enumerate() {
        let c = counts.get(user).unwrap_or(&empty);
        let mut ratio = |col: usize,
                         metric: &'static str,
                         num: u64,
                         den: u64|
         -> Result<f64, MetricsError> {
            if den == 0 {
                zero_denominators[col] += 1;
                match policy.zero_denominator {
                    ZeroDenominatorPolicy::Zero => Ok(0.0),
                    ZeroDenominatorPolicy::Fail => Err(MetricsError::ZeroDenominator {
                        metric,
                        user: user.clone(),
                    }),
                }
            } else {
                Ok(num as f64 / den as f64)
            }
        };

        let row_values = [
            ratio(0, "V1", c.threads_contributed, total_threads)?,
            ratio(1, "V2", c.threads_initiated, total_threads)?,
            ratio(2, "V3", c.threads_initiated, c.initials)?,
            ratio(3, "V4", c.replies, c.threads_contributed)?,
            ratio(4, "V5", c.initials, c.replies)?,
            ratio(5, "V6", c.questions_initiated, c.initials)?,
            ratio(6, "V7", c.question_tags_received, c.tags_received)?,
            ratio(7, "V8", c.distinct_replied_to.len() as u64, c.replies)?,
            ratio(
                8,
                "V9",
                c.distinct_received_from.len() as u64,
                c.replies_received,
            )?,
            ratio(9, "V10", c.words, c.messages)?,
            ratio(10, "V11", c.attachments, c.messages)?,
            ratio(11, "V12", c.thanks_tags_received, c.replies_received)?,
            ratio(12, "V13", c.praise_tags_received, c.replies_received)?,
            centrality.get(user).map_or(0.0, |x| x.in_degree as f64),
            centrality.get(user).map_or(0.0, |x| x.out_degree as f64),
            centrality.get(user).map_or(0.0, |x| x.betweenness),
        ];
        for (col, v) in row_values.into_iter().enumerate() {
            values[(row, col)] = v;
        }
    }

    Ok(MetricMatrix {
        users: eligible.iter().cloned().collect(),
        values,
        zero_denominators,
    })
}

/// Column summaries of a metric matrix; the sample standard deviation uses
/// `n - 1`.
pub fn summarize_columns(matrix: &MetricMatrix) -> Result<Vec<ColumnStats>, MetricsError> {
    let n = matrix.users.len();
    if n == 0 {
        return Err(MetricsError::NoUsers);
    }
    Ok(MetricId::ALL
        .iter()
        .enumerate()
        .map(|(col, id)| {
            let column = matrix.values.column(col);
            let mean = column.sum() / n as f64;
            let var = if n > 1 {
                column.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)
            } else {
                0.0
            };
            ColumnStats {
                label: id.label().to_string(),
                mean,
                sd: var.sqrt(),
                min: column.iter().copied().fold(f64::INFINITY, f64::min),
                max: column.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                zero_denominator_rows: matrix.zero_denominators[col],
            }
        })
        .collect())
}

impl MetricMatrix {
    /// CSV serialization with values at 10 significant digits: `user_id`
    /// followed by one column per metric.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("user_id");
        for id in MetricId::ALL {
            s.push(',');
            s.push_str(id.label());
        }
        s.push('\n');
        for (row, user) in self.users.iter().enumerate() {
            s.push_str(user.as_str());
            for col in 0..MetricId::ALL.len() {
                s.push(',');
                s.push_str(&fmt_sig(self.values[(row, col)], 10));
            }
            s.push('\n');
        }
        s
    }

    /// Parses the CSV produced by [`MetricMatrix::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
        let expected: Vec<&str> = std::iter::once("user_id")
            .chain(MetricId::ALL.iter().map(|id| id.label()))
            .collect();
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(format!("unexpected metric columns: {got:?}"));
        }
        let mut users = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(|e| e.to_string())?;
            users.push(UserId::from(record.get(0).ok_or("missing user_id")?));
            let row: Result<Vec<f64>, String> = (1..=MetricId::ALL.len())
                .map(|i| {
                    record
                        .get(i)
                        .ok_or_else(|| "short row".to_string())?
                        .parse::<f64>()
                        .map_err(|e| e.to_string())
                })
                .collect();
            rows.push(row?);
        }
        let values = DMatrix::from_fn(users.len(), MetricId::ALL.len(), |r, c| rows[r][c]);
        Ok(MetricMatrix {
            users,
            values,
            zero_denominators: vec![0; MetricId::ALL.len()],
        })
    }
}
