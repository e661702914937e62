//! Seeded synthetic message logs with planted behavioural archetypes.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{MessageId, ThreadId, UserId};
use crate::ingest::{
    month_start, next_month, write_messages_csv, write_users_csv, Channel, Message,
    MessageFlags, StudyWindow, UserRecord,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("archetype shares sum to {sum}, expected 1")]
    BadShares { sum: f64 },
    #[error("archetype {name}: {field} is {value}, outside its valid range")]
    BadField {
        name: String,
        field: &'static str,
        value: f64,
    },
    #[error("archetype name {name} appears more than once")]
    DuplicateName { name: String },
    #[error("no archetypes given")]
    NoArchetypes,
    #[error("need at least 10 users, got {n}")]
    TooFewUsers { n: usize },
    #[error("every message rate is zero, the corpus would be empty")]
    NoActivity,
    #[error("the window contains no full calendar month")]
    EmptyWindow,
}

/// How a reply picks the initial it attaches to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetPreference {
    /// Any recent initial with equal probability.
    #[default]
    Uniform,
    /// Recent initials weighted by how many threads their author has
    /// started, concentrating attention on frequent initiators.
    HubBiased,
}

/// One behavioural profile to plant in the corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub name: String,
    /// Fraction of the user population, all shares summing to 1.
    pub share: f64,
    /// Poisson mean of thread-starting messages per user per month.
    pub initial_rate: f64,
    /// Poisson mean of replies per user per month.
    pub reply_rate: f64,
    /// Chance an initial is phrased as a question (word and mark flags).
    pub question_propensity: f64,
    /// Chance any message carries an attachment.
    pub attachment_propensity: f64,
    /// Chance a reply thanks its target, tagging the target author.
    pub thanks_propensity: f64,
    /// Chance a reply praises its target, tagging the target author.
    pub praise_propensity: f64,
    pub target_preference: TargetPreference,
    /// Mean words per message, at least 1.
    pub mean_word_count: f64,
}

impl ArchetypeSpec {
    fn validate(&self) -> Result<(), SynthError> {
        let bad = |field: &'static str, value: f64| SynthError::BadField {
            name: self.name.clone(),
            field,
            value,
        };
        let check_rate = |field: &'static str, v: f64| {
            if !v.is_finite() || v < 0.0 {
                Err(bad(field, v))
            } else {
                Ok(())
            }
        };
        let check_prob = |field: &'static str, v: f64| {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                Err(bad(field, v))
            } else {
                Ok(())
            }
        };
        if !self.share.is_finite() || self.share < 0.0 {
            return Err(bad("share", self.share));
        }
        check_rate("initial_rate", self.initial_rate)?;
        check_rate("reply_rate", self.reply_rate)?;
        check_prob("question_propensity", self.question_propensity)?;
        check_prob("attachment_propensity", self.attachment_propensity)?;
        check_prob("thanks_propensity", self.thanks_propensity)?;
        check_prob("praise_propensity", self.praise_propensity)?;
        if !self.mean_word_count.is_finite() || self.mean_word_count < 1.0 {
            return Err(bad("mean_word_count", self.mean_word_count));
        }
        Ok(())
    }
}

/// Four contrasting profiles: a thread-starting networker whose posts draw
/// replies, a high-volume broadcaster who rarely replies, a reply-heavy
/// user spreading thanks across many threads, and a quiet occasional
/// asker.
pub fn default_archetypes() -> Vec<ArchetypeSpec> {
    vec![
        ArchetypeSpec {
            name: "connector".into(),
            share: 0.15,
            initial_rate: 5.0,
            reply_rate: 12.0,
            question_propensity: 0.25,
            attachment_propensity: 0.15,
            thanks_propensity: 0.4,
            praise_propensity: 0.2,
            target_preference: TargetPreference::HubBiased,
            mean_word_count: 45.0,
        },
        ArchetypeSpec {
            name: "broadcaster".into(),
            share: 0.2,
            initial_rate: 7.0,
            reply_rate: 1.5,
            question_propensity: 0.05,
            attachment_propensity: 0.75,
            thanks_propensity: 0.05,
            praise_propensity: 0.05,
            target_preference: TargetPreference::Uniform,
            mean_word_count: 70.0,
        },
        ArchetypeSpec {
            name: "replier".into(),
            share: 0.25,
            initial_rate: 0.6,
            reply_rate: 9.0,
            question_propensity: 0.08,
            attachment_propensity: 0.45,
            thanks_propensity: 0.7,
            praise_propensity: 0.5,
            target_preference: TargetPreference::Uniform,
            mean_word_count: 30.0,
        },
        ArchetypeSpec {
            name: "lurker".into(),
            share: 0.4,
            initial_rate: 0.9,
            reply_rate: 0.5,
            question_propensity: 0.85,
            attachment_propensity: 0.03,
            thanks_propensity: 0.25,
            praise_propensity: 0.08,
            target_preference: TargetPreference::Uniform,
            mean_word_count: 7.0,
        },
    ]
}

/// A generated corpus plus its planted labels.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub messages: Vec<Message>,
    pub users: Vec<UserRecord>,
    /// Archetype name per user, keyed by id.
    pub ground_truth: BTreeMap<UserId, String>,
}

impl SyntheticCorpus {
    pub fn messages_csv(&self) -> String {
        write_messages_csv(&self.messages)
    }

    pub fn users_csv(&self) -> String {
        write_users_csv(&self.users)
    }

    pub fn ground_truth_csv(&self) -> String {
        let mut out = String::from("user_id,archetype\n");
        for (user, archetype) in &self.ground_truth {
            out.push_str(user.as_str());
            out.push(',');
            out.push_str(archetype);
            out.push('\n');
        }
        out
    }

    /// Writes messages.csv, users.csv, and ground_truth.csv into the
    /// directory.
    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("messages.csv"), self.messages_csv())?;
        std::fs::write(dir.join("users.csv"), self.users_csv())?;
        std::fs::write(dir.join("ground_truth.csv"), self.ground_truth_csv())?;
        Ok(())
    }
}

/// Reads a ground-truth file back into the id-to-archetype map.
pub fn parse_ground_truth(text: &str) -> BTreeMap<UserId, String> {
    let mut out = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if idx == 0 || line.is_empty() {
            continue;
        }
        if let Some((user, archetype)) = line.split_once(',') {
            out.insert(UserId::from(user), archetype.to_string());
        }
    }
    out
}

/// Largest-remainder split of n users across shares: exact total, each
/// count within one of its ideal value.
fn population_counts(specs: &[ArchetypeSpec], n_users: usize) -> Vec<usize> {
    let ideals: Vec<f64> = specs.iter().map(|s| s.share * n_users as f64).collect();
    let mut counts: Vec<usize> = ideals.iter().map(|&v| v.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..specs.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = ideals[a] - ideals[a].floor();
        let rb = ideals[b] - ideals[b].floor();
        rb.partial_cmp(&ra).expect("finite shares").then(a.cmp(&b))
    });
    for &i in order.iter().take(n_users - assigned) {
        counts[i] += 1;
    }
    counts
}

fn poisson_count(rng: &mut ChaCha8Rng, rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let sample: f64 = Poisson::new(rate).expect("positive finite rate").sample(rng);
    sample as u64
}

struct PendingMessage {
    timestamp: DateTime<Utc>,
    author: usize,
    is_reply: bool,
    question: bool,
    thanks: bool,
    praise: bool,
    attachment: bool,
    tag_other: bool,
    word_count: u64,
}

/// A recent initial a reply can attach to.
struct PoolEntry {
    message_id: MessageId,
    thread_id: ThreadId,
    author: usize,
}

/// Generates a corpus: users split across archetypes by share, activity
/// drawn month by month from each archetype's rates, replies attached to a
/// rolling window of the 100 most recent initials. One seeded generator
/// drives every draw in a fixed order, so a seed fully determines the
/// output bytes.
pub fn generate(
    specs: &[ArchetypeSpec],
    n_users: usize,
    window: &StudyWindow,
    seed: u64,
) -> Result<SyntheticCorpus, SynthError> {
    if specs.is_empty() {
        return Err(SynthError::NoArchetypes);
    }
    for spec in specs {
        spec.validate()?;
    }
    let mut seen = Vec::new();
    for spec in specs {
        if seen.contains(&&spec.name) {
            return Err(SynthError::DuplicateName {
                name: spec.name.clone(),
            });
        }
        seen.push(&spec.name);
    }
    let share_sum: f64 = specs.iter().map(|s| s.share).sum();
    if (share_sum - 1.0).abs() > 1e-9 {
        return Err(SynthError::BadShares { sum: share_sum });
    }
    if n_users < 10 {
        return Err(SynthError::TooFewUsers { n: n_users });
    }
    if specs.iter().all(|s| s.initial_rate == 0.0 && s.reply_rate == 0.0) {
        return Err(SynthError::NoActivity);
    }
    let months = window.full_months();
    if months.is_empty() {
        return Err(SynthError::EmptyWindow);
    }

    let counts = population_counts(specs, n_users);
    let mut archetype_of = Vec::with_capacity(n_users);
    for (idx, &count) in counts.iter().enumerate() {
        archetype_of.extend(std::iter::repeat(idx).take(count));
    }

    let user_id = |i: usize| UserId::new(format!("u{i:05}"));
    let registered = window.start - Duration::days(30);
    let users: Vec<UserRecord> = (0..n_users)
        .map(|i| UserRecord {
            user_id: user_id(i),
            registered_at: registered,
            deregistered_at: None,
            job_title: None,
            location: None,
        })
        .collect();
    let ground_truth: BTreeMap<UserId, String> = (0..n_users)
        .map(|i| (user_id(i), specs[archetype_of[i]].name.clone()))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut messages: Vec<Message> = Vec::new();
    let mut next_id = 0usize;
    let make_id = |next_id: &mut usize| {
        *next_id += 1;
        MessageId::new(format!("m{:07}", *next_id))
    };
    let mut pool: VecDeque<PoolEntry> = VecDeque::new();
    let mut initials_by_author = vec![0u64; n_users];

    for &(year, month) in &months {
        let span_start = month_start(year, month);
        let span_end = next_month(span_start);
        let span_seconds = (span_end - span_start).num_seconds();

        let mut pending: Vec<PendingMessage> = Vec::new();
        for user in 0..n_users {
            let spec = &specs[archetype_of[user]];
            for _ in 0..poisson_count(&mut rng, spec.initial_rate) {
                let timestamp = span_start + Duration::seconds(rng.gen_range(0..span_seconds));
                let question = rng.gen_bool(spec.question_propensity);
                pending.push(PendingMessage {
                    timestamp,
                    author: user,
                    is_reply: false,
                    question,
                    thanks: false,
                    praise: false,
                    attachment: rng.gen_bool(spec.attachment_propensity),
                    tag_other: question && rng.gen_bool(0.5),
                    word_count: 1 + poisson_count(&mut rng, spec.mean_word_count - 1.0),
                });
            }
            for _ in 0..poisson_count(&mut rng, spec.reply_rate) {
                let timestamp = span_start + Duration::seconds(rng.gen_range(0..span_seconds));
                pending.push(PendingMessage {
                    timestamp,
                    author: user,
                    is_reply: true,
                    question: false,
                    thanks: rng.gen_bool(spec.thanks_propensity),
                    praise: rng.gen_bool(spec.praise_propensity),
                    attachment: rng.gen_bool(spec.attachment_propensity),
                    tag_other: false,
                    word_count: 1 + poisson_count(&mut rng, spec.mean_word_count - 1.0),
                });
            }
        }
        // Chronological within the month; draw order breaks timestamp ties
        // so the sort is total.
        let mut order: Vec<usize> = (0..pending.len()).collect();
        order.sort_by_key(|&i| (pending[i].timestamp, i));

        for &idx in &order {
            let p = &pending[idx];
            let spec = &specs[archetype_of[p.author]];
            if p.is_reply {
                // A reply needs an earlier initial; none exist at the very
                // start of the corpus, in which case the reply is skipped.
                if pool.is_empty() {
                    continue;
                }
                let choice = match spec.target_preference {
                    TargetPreference::Uniform => rng.gen_range(0..pool.len()),
                    TargetPreference::HubBiased => {
                        let weights: Vec<f64> = pool
                            .iter()
                            .map(|e| initials_by_author[e.author] as f64)
                            .collect();
                        WeightedIndex::new(&weights)
                            .expect("pool authors have started at least one thread")
                            .sample(&mut rng)
                    }
                };
                let target = &pool[choice];
                let tagged = if p.thanks || p.praise {
                    vec![user_id(target.author)]
                } else {
                    Vec::new()
                };
                messages.push(Message {
                    message_id: make_id(&mut next_id),
                    author_id: user_id(p.author),
                    created_at: p.timestamp,
                    thread_id: target.thread_id.clone(),
                    reply_to_id: Some(target.message_id.clone()),
                    channel: Channel::MainStream,
                    group_id: None,
                    has_attachment: p.attachment,
                    word_count: p.word_count,
                    char_count: p.word_count * 6,
                    tagged_user_ids: tagged,
                    flags: MessageFlags {
                        question_word: false,
                        question_mark: false,
                        thanks: p.thanks,
                        praise: p.praise,
                    },
                });
            } else {
                let id = make_id(&mut next_id);
                let thread = ThreadId::new(format!("t{}", &id.as_str()[1..]));
                let tagged = if p.tag_other {
                    let offset = rng.gen_range(0..n_users - 1);
                    vec![user_id((p.author + 1 + offset) % n_users)]
                } else {
                    Vec::new()
                };
                initials_by_author[p.author] += 1;
                pool.push_back(PoolEntry {
                    message_id: id.clone(),
                    thread_id: thread.clone(),
                    author: p.author,
                });
                if pool.len() > 100 {
                    pool.pop_front();
                }
                messages.push(Message {
                    message_id: id,
                    author_id: user_id(p.author),
                    created_at: p.timestamp,
                    thread_id: thread,
                    reply_to_id: None,
                    channel: Channel::MainStream,
                    group_id: None,
                    has_attachment: p.attachment,
                    word_count: p.word_count,
                    char_count: p.word_count * 6,
                    tagged_user_ids: tagged,
                    flags: MessageFlags {
                        question_word: p.question,
                        question_mark: p.question,
                        thanks: false,
                        praise: false,
                    },
                });
            }
        }
    }

    messages.sort_by(|a, b| {
        (a.created_at, a.message_id.as_str()).cmp(&(b.created_at, b.message_id.as_str()))
    });
    Ok(SyntheticCorpus {
        messages,
        users,
        ground_truth,
    })
}
