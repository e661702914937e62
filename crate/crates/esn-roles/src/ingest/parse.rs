//! CSV parsing and writing for message logs and user rosters.

use super::keywords::{CompiledKeywords, KeywordLists};
use super::{Channel, IngestError, Message, MessageFlags, UserRecord};
use crate::ids::{MessageId, ThreadId, UserId};
use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Read;

/// Maps canonical field names to the column headers used by a concrete
/// export. Defaults to the canonical headers themselves.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub message_id: String,
    pub author_id: String,
    pub created_at: String,
    pub thread_id: String,
    pub reply_to_id: String,
    pub channel: String,
    pub group_id: String,
    pub has_attachment: String,
    pub word_count: String,
    pub char_count: String,
    pub tagged_user_ids: String,
    pub flag_question_word: String,
    pub flag_question_mark: String,
    pub flag_thanks: String,
    pub flag_praise: String,
    pub body: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            message_id: "message_id".into(),
            author_id: "author_id".into(),
            created_at: "created_at".into(),
            thread_id: "thread_id".into(),
            reply_to_id: "reply_to_id".into(),
            channel: "channel".into(),
            group_id: "group_id".into(),
            has_attachment: "has_attachment".into(),
            word_count: "word_count".into(),
            char_count: "char_count".into(),
            tagged_user_ids: "tagged_user_ids".into(),
            flag_question_word: "flag_question_word".into(),
            flag_question_mark: "flag_question_mark".into(),
            flag_thanks: "flag_thanks".into(),
            flag_praise: "flag_praise".into(),
            body: "body".into(),
        }
    }
}

/// A rejected input row and the first problem found in it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RowRejection {
    pub line: u64,
    pub reason: String,
}

/// Result of parsing a message log: well-formed rows in input order plus
/// one rejection entry per malformed row.
#[derive(Clone, Debug, Default)]
pub struct ParsedLog {
    pub messages: Vec<Message>,
    pub rejections: Vec<RowRejection>,
    /// True when flags were derived from the body column instead of being
    /// read from precomputed flag columns.
    pub flags_derived: bool,
}

/// Result of parsing a user roster.
#[derive(Clone, Debug, Default)]
pub struct ParsedUsers {
    pub users: Vec<UserRecord>,
    pub rejections: Vec<RowRejection>,
}

struct Columns {
    message_id: usize,
    author_id: usize,
    created_at: usize,
    thread_id: usize,
    reply_to_id: usize,
    channel: usize,
    group_id: usize,
    has_attachment: usize,
    word_count: usize,
    char_count: usize,
    tagged_user_ids: usize,
    flags: FlagSource,
}

enum FlagSource {
    Columns {
        question_word: usize,
        question_mark: usize,
        thanks: usize,
        praise: usize,
    },
    Body {
        body: usize,
        keywords: CompiledKeywords,
    },
}

/// Accepts RFC 3339 as well as the common `T`- and space-separated local
/// forms, which are read as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(naive.and_utc());
        }
    }
    None
}

fn parse_bool01(s: &str) -> Option<bool> {
    match s {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    }
}

fn header_index(headers: &csv::StringRecord) -> std::collections::HashMap<&str, usize> {
    headers.iter().enumerate().map(|(i, h)| (h, i)).collect()
}

/// Parses a message log. The header must carry every mandatory column from
/// `columns`; rows that fail to parse become [`RowRejection`]s instead of
/// aborting the run. Flag columns win over the body column when both are
/// present; with neither, parsing fails.
pub fn parse_messages<R: Read>(
    reader: R,
    columns: &ColumnMap,
    keywords: &KeywordLists,
) -> Result<ParsedLog, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index = header_index(&headers);

    let mandatory = [
        &columns.message_id,
        &columns.author_id,
        &columns.created_at,
        &columns.thread_id,
        &columns.reply_to_id,
        &columns.channel,
        &columns.group_id,
        &columns.has_attachment,
        &columns.word_count,
        &columns.char_count,
        &columns.tagged_user_ids,
    ];
    let missing: Vec<String> = mandatory
        .iter()
        .filter(|c| !index.contains_key(c.as_str()))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(IngestError::MissingColumns(missing));
    }

    let flag_cols = [
        &columns.flag_question_word,
        &columns.flag_question_mark,
        &columns.flag_thanks,
        &columns.flag_praise,
    ];
    let flags = if flag_cols.iter().all(|c| index.contains_key(c.as_str())) {
        FlagSource::Columns {
            question_word: index[columns.flag_question_word.as_str()],
            question_mark: index[columns.flag_question_mark.as_str()],
            thanks: index[columns.flag_thanks.as_str()],
            praise: index[columns.flag_praise.as_str()],
        }
    } else if let Some(&body) = index.get(columns.body.as_str()) {
        FlagSource::Body {
            body,
            keywords: keywords.compile()?,
        }
    } else {
        return Err(IngestError::NoFlagSource);
    };

    let cols = Columns {
        message_id: index[columns.message_id.as_str()],
        author_id: index[columns.author_id.as_str()],
        created_at: index[columns.created_at.as_str()],
        thread_id: index[columns.thread_id.as_str()],
        reply_to_id: index[columns.reply_to_id.as_str()],
        channel: index[columns.channel.as_str()],
        group_id: index[columns.group_id.as_str()],
        has_attachment: index[columns.has_attachment.as_str()],
        word_count: index[columns.word_count.as_str()],
        char_count: index[columns.char_count.as_str()],
        tagged_user_ids: index[columns.tagged_user_ids.as_str()],
        flags,
    };

    let mut out = ParsedLog {
        flags_derived: matches!(cols.flags, FlagSource::Body { .. }),
        ..ParsedLog::default()
    };
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        match parse_message_row(&record, &cols) {
            Ok(m) => out.messages.push(m),
            Err(reason) => out.rejections.push(RowRejection { line, reason }),
        }
    }
    Ok(out)
}

fn field<'r>(record: &'r csv::StringRecord, idx: usize, name: &str) -> Result<&'r str, String> {
    record
        .get(idx)
        .ok_or_else(|| format!("row too short, missing {name}"))
}

fn nonempty<'v>(value: &'v str, name: &str) -> Result<&'v str, String> {
    if value.is_empty() {
        Err(format!("empty {name}"))
    } else {
        Ok(value)
    }
}

fn parse_message_row(record: &csv::StringRecord, cols: &Columns) -> Result<Message, String> {
    let message_id = nonempty(field(record, cols.message_id, "message_id")?, "message_id")?;
    let author_id = nonempty(field(record, cols.author_id, "author_id")?, "author_id")?;
    let created_raw = nonempty(field(record, cols.created_at, "created_at")?, "created_at")?;
    let created_at = parse_timestamp(created_raw)
        .ok_or_else(|| format!("unparseable timestamp {created_raw:?}"))?;
    let thread_id = nonempty(field(record, cols.thread_id, "thread_id")?, "thread_id")?;
    let reply_to = field(record, cols.reply_to_id, "reply_to_id")?;
    let channel_raw = field(record, cols.channel, "channel")?;
    let channel = Channel::parse(channel_raw)
        .ok_or_else(|| format!("unknown channel {channel_raw:?}"))?;
    let group_id = field(record, cols.group_id, "group_id")?;
    let attach_raw = field(record, cols.has_attachment, "has_attachment")?;
    let has_attachment = parse_bool01(attach_raw)
        .ok_or_else(|| format!("has_attachment must be 0 or 1, got {attach_raw:?}"))?;
    let word_count: u64 = field(record, cols.word_count, "word_count")?
        .parse()
        .map_err(|_| "word_count is not a non-negative integer".to_string())?;
    let char_count: u64 = field(record, cols.char_count, "char_count")?
        .parse()
        .map_err(|_| "char_count is not a non-negative integer".to_string())?;
    let tagged = field(record, cols.tagged_user_ids, "tagged_user_ids")?;
    let tagged_user_ids = tagged
        .split(';')
        .filter(|s| !s.is_empty())
        .map(UserId::from)
        .collect();

    let flags = match &cols.flags {
        FlagSource::Columns {
            question_word,
            question_mark,
            thanks,
            praise,
        } => {
            let read = |idx: usize, name: &str| -> Result<bool, String> {
                let raw = field(record, idx, name)?;
                parse_bool01(raw).ok_or_else(|| format!("{name} must be 0 or 1, got {raw:?}"))
            };
            MessageFlags {
                question_word: read(*question_word, "flag_question_word")?,
                question_mark: read(*question_mark, "flag_question_mark")?,
                thanks: read(*thanks, "flag_thanks")?,
                praise: read(*praise, "flag_praise")?,
            }
        }
        FlagSource::Body { body, keywords } => {
            keywords.classify(field(record, *body, "body")?)
        }
    };

    Ok(Message {
        message_id: MessageId::from(message_id),
        author_id: UserId::from(author_id),
        created_at,
        thread_id: ThreadId::from(thread_id),
        reply_to_id: if reply_to.is_empty() {
            None
        } else {
            Some(MessageId::from(reply_to))
        },
        channel,
        group_id: if group_id.is_empty() {
            None
        } else {
            Some(group_id.to_string())
        },
        has_attachment,
        word_count,
        char_count,
        tagged_user_ids,
        flags,
    })
}

/// Parses a user roster. `registered_at` is mandatory per row; a repeated
/// `user_id` rejects the later row.
pub fn parse_users<R: Read>(reader: R) -> Result<ParsedUsers, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index = header_index(&headers);

    let missing: Vec<String> = ["user_id", "registered_at", "deregistered_at"]
        .iter()
        .filter(|c| !index.contains_key(**c))
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(IngestError::MissingColumns(missing));
    }
    let user_id_col = index["user_id"];
    let registered_col = index["registered_at"];
    let deregistered_col = index["deregistered_at"];
    let job_col = index.get("job_title").copied();
    let location_col = index.get("location").copied();

    let mut out = ParsedUsers::default();
    let mut seen: HashSet<UserId> = HashSet::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse = || -> Result<UserRecord, String> {
            let user_id = nonempty(field(&record, user_id_col, "user_id")?, "user_id")?;
            let reg_raw = nonempty(
                field(&record, registered_col, "registered_at")?,
                "registered_at",
            )?;
            let registered_at = parse_timestamp(reg_raw)
                .ok_or_else(|| format!("unparseable timestamp {reg_raw:?}"))?;
            let dereg_raw = field(&record, deregistered_col, "deregistered_at")?;
            let deregistered_at = if dereg_raw.is_empty() {
                None
            } else {
                Some(
                    parse_timestamp(dereg_raw)
                        .ok_or_else(|| format!("unparseable timestamp {dereg_raw:?}"))?,
                )
            };
            let optional = |col: Option<usize>| -> Option<String> {
                col.and_then(|c| record.get(c))
                    .filter(|s| !s.is_empty())
                    .map(|s| s.to_string())
            };
            Ok(UserRecord {
                user_id: UserId::from(user_id),
                registered_at,
                deregistered_at,
                job_title: optional(job_col),
                location: optional(location_col),
            })
        };
        match parse() {
            Ok(u) => {
                if seen.insert(u.user_id.clone()) {
                    out.users.push(u);
                } else {
                    out.rejections.push(RowRejection {
                        line,
                        reason: format!("duplicate user_id {}", u.user_id),
                    });
                }
            }
            Err(reason) => out.rejections.push(RowRejection { line, reason }),
        }
    }
    Ok(out)
}

fn fmt_ts(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Serializes messages using the canonical column set (without a body
/// column). Output from this writer always re-parses without rejections.
pub fn write_messages_csv(messages: &[Message]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "message_id",
        "author_id",
        "created_at",
        "thread_id",
        "reply_to_id",
        "channel",
        "group_id",
        "has_attachment",
        "word_count",
        "char_count",
        "tagged_user_ids",
        "flag_question_word",
        "flag_question_mark",
        "flag_thanks",
        "flag_praise",
    ])
    .unwrap();
    let bit = |b: bool| if b { "1" } else { "0" };
    for m in messages {
        let tagged = m
            .tagged_user_ids
            .iter()
            .map(|u| u.as_str())
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            m.message_id.as_str(),
            m.author_id.as_str(),
            &fmt_ts(m.created_at),
            m.thread_id.as_str(),
            m.reply_to_id.as_ref().map(|r| r.as_str()).unwrap_or(""),
            m.channel.as_str(),
            m.group_id.as_deref().unwrap_or(""),
            bit(m.has_attachment),
            &m.word_count.to_string(),
            &m.char_count.to_string(),
            &tagged,
            bit(m.flags.question_word),
            bit(m.flags.question_mark),
            bit(m.flags.thanks),
            bit(m.flags.praise),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// Serializes a user roster with the canonical columns.
pub fn write_users_csv(users: &[UserRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "user_id",
        "registered_at",
        "deregistered_at",
        "job_title",
        "location",
    ])
    .unwrap();
    for u in users {
        w.write_record([
            u.user_id.as_str(),
            &fmt_ts(u.registered_at),
            &u.deregistered_at.map(fmt_ts).unwrap_or_default(),
            u.job_title.as_deref().unwrap_or(""),
            u.location.as_deref().unwrap_or(""),
        ])
        .unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}
