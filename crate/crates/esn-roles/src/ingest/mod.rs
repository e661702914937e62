//! Message log ingestion: CSV parsing, content flags, thread
//! reconstruction and user eligibility.
//!
//! The ingest stage never mutates row content. Malformed rows are rejected
//! with a reason, duplicate message ids keep their first occurrence, and
//! replies whose target cannot be resolved are reattached to their thread's
//! initial message; all of it is reported rather than silently repaired.

mod eligibility;
mod keywords;
mod parse;
mod threads;

pub use eligibility::{eligible_users, EligibilityMode};
pub use keywords::{classify_content, KeywordLists};
pub use parse::{
    parse_messages, parse_timestamp, parse_users, write_messages_csv, write_users_csv, ColumnMap,
    ParsedLog, ParsedUsers, RowRejection,
};
pub use threads::{build_threads, RepairReport, ReplyResolution, Thread, ThreadIndex};

use crate::ids::{MessageId, ThreadId, UserId};
use chrono::{DateTime, Datelike, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing mandatory columns: {}", .0.join(", "))]
    MissingColumns(Vec<String>),
    #[error("message log has neither the four flag columns nor a body column to derive them from")]
    NoFlagSource,
    #[error("invalid keyword list: {0}")]
    BadKeywords(String),
    #[error("study window is empty or inverted: {start} .. {end}")]
    BadWindow { start: String, end: String },
    #[error("per-month eligibility needs a window spanning at least one full calendar month")]
    NoFullMonth,
    #[error("csv read failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Where a message was posted. Only the first three variants are public
/// spaces; direct messages never reach the analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    MainStream,
    PublicGroup,
    PrivateGroup,
    PrivateMessage,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::MainStream => "main_stream",
            Channel::PublicGroup => "public_group",
            Channel::PrivateGroup => "private_group",
            Channel::PrivateMessage => "private_message",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "main_stream" => Channel::MainStream,
            "public_group" => Channel::PublicGroup,
            "private_group" => Channel::PrivateGroup,
            "private_message" => Channel::PrivateMessage,
            _ => return None,
        })
    }

    /// Public means visible to the whole network or a joinable group, as
    /// opposed to a direct message.
    pub fn is_public(self) -> bool {
        !matches!(self, Channel::PrivateMessage)
    }
}

/// Content classification flags, either taken from precomputed log columns
/// or derived from the message body by [`classify_content`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageFlags {
    pub question_word: bool,
    pub question_mark: bool,
    pub thanks: bool,
    pub praise: bool,
}

impl MessageFlags {
    /// A message counts as a question only when it opens with interrogative
    /// wording and actually carries a question mark.
    pub fn is_question(&self) -> bool {
        self.question_word && self.question_mark
    }
}

/// One message row after parsing. Timestamps are normalized to UTC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub message_id: MessageId,
    pub author_id: UserId,
    pub created_at: DateTime<Utc>,
    pub thread_id: ThreadId,
    pub reply_to_id: Option<MessageId>,
    pub channel: Channel,
    pub group_id: Option<String>,
    pub has_attachment: bool,
    pub word_count: u64,
    pub char_count: u64,
    pub tagged_user_ids: Vec<UserId>,
    pub flags: MessageFlags,
}

impl Message {
    pub fn is_reply(&self) -> bool {
        self.reply_to_id.is_some()
    }

    pub fn is_initial(&self) -> bool {
        self.reply_to_id.is_none()
    }

    /// Distinct users tagged in this message; repeated tags of the same
    /// user count once.
    pub fn tagged_distinct(&self) -> impl Iterator<Item = &UserId> {
        let mut seen = std::collections::BTreeSet::new();
        self.tagged_user_ids
            .iter()
            .filter(move |u| seen.insert((*u).clone()))
    }
}

/// One row of the user roster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: UserId,
    pub registered_at: DateTime<Utc>,
    pub deregistered_at: Option<DateTime<Utc>>,
    pub job_title: Option<String>,
    pub location: Option<String>,
}

/// Half-open observation window `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyWindow {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl StudyWindow {
    pub fn new(start: DateTime<Utc>, end: DateTime<Utc>) -> Result<Self, IngestError> {
        if start >= end {
            return Err(IngestError::BadWindow {
                start: start.to_rfc3339(),
                end: end.to_rfc3339(),
            });
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start <= t && t < self.end
    }

    /// Calendar months fully contained in the window, as `(year, month)`
    /// pairs. Partial months at either edge are not listed.
    pub fn full_months(&self) -> Vec<(i32, u32)> {
        let mut months = Vec::new();
        let mut cursor = month_start(self.start.year(), self.start.month());
        if cursor < self.start {
            cursor = next_month(cursor);
        }
        loop {
            let end = next_month(cursor);
            if end > self.end {
                break;
            }
            months.push((cursor.year(), cursor.month()));
            cursor = end;
        }
        months
    }
}

pub(crate) fn month_start(year: i32, month: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(year, month, 1, 0, 0, 0).unwrap()
}

pub(crate) fn next_month(t: DateTime<Utc>) -> DateTime<Utc> {
    let (y, m) = (t.year(), t.month());
    if m == 12 {
        month_start(y + 1, 1)
    } else {
        month_start(y, m + 1)
    }
}

/// Keeps messages posted in public channels. Applying it twice is a no-op.
pub fn filter_public(messages: Vec<Message>) -> Vec<Message> {
    messages
        .into_iter()
        .filter(|m| m.channel.is_public())
        .collect()
}

/// Keeps messages created inside the window.
pub fn filter_window(messages: Vec<Message>, window: &StudyWindow) -> Vec<Message> {
    messages
        .into_iter()
        .filter(|m| window.contains(m.created_at))
        .collect()
}

/// Drops repeated `message_id`s, keeping the first occurrence in row
/// order. Returns the ids that were dropped, one entry per dropped row.
pub fn dedup_messages(messages: Vec<Message>) -> (Vec<Message>, Vec<MessageId>) {
    let mut seen = std::collections::HashSet::new();
    let mut kept = Vec::with_capacity(messages.len());
    let mut dropped = Vec::new();
    for m in messages {
        if seen.insert(m.message_id.clone()) {
            kept.push(m);
        } else {
            dropped.push(m.message_id);
        }
    }
    (kept, dropped)
}
