//! Thread reconstruction from parsed messages.

use super::Message;
use crate::ids::{MessageId, ThreadId, UserId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

/// A reconstructed thread: exactly one initial message plus at least one
/// reply. Replies are ordered by `(created_at, message_id)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thread {
    pub thread_id: ThreadId,
    pub initial: MessageId,
    pub initial_author: UserId,
    pub replies: Vec<MessageId>,
    /// Authors of the initial message and of every attached reply.
    pub participants: BTreeSet<UserId>,
}

/// Resolved target of one reply.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplyResolution {
    pub target_message: MessageId,
    pub target_author: UserId,
    /// True when the stated `reply_to_id` did not resolve inside the
    /// thread and the reply was reattached to the thread's initial.
    pub reattached: bool,
}

/// Everything the thread builder had to repair or flag. Nothing here stops
/// the pipeline; each list is surfaced in validation output.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RepairReport {
    /// Replies whose `reply_to_id` was missing from the log or pointed
    /// outside their own thread; reattached to the thread's initial.
    pub reattached: Vec<MessageId>,
    /// Replies created before their resolved target. Linkage is kept.
    pub order_violations: Vec<MessageId>,
    /// Replies whose thread has no initial message at all; excluded from
    /// every thread statistic.
    pub orphans: Vec<MessageId>,
    /// Messages that tag their own author. Counted normally by the metric
    /// stage; listed so the tally is visible.
    pub self_tagged: Vec<MessageId>,
}

/// Index over one message set: proper threads, initials that drew no
/// replies, and a resolution for every reply that belongs to a thread.
#[derive(Clone, Debug, Default)]
pub struct ThreadIndex {
    pub threads: BTreeMap<ThreadId, Thread>,
    /// Initial messages with zero replies, ordered by `(created_at, id)`.
    pub non_thread_initials: Vec<MessageId>,
    resolutions: HashMap<MessageId, ReplyResolution>,
    pub repairs: RepairReport,
}

impl ThreadIndex {
    pub fn thread_count(&self) -> usize {
        self.threads.len()
    }

    /// Resolution for a reply, if the reply belongs to a proper thread.
    /// Orphan replies have no resolution.
    pub fn resolution(&self, reply: &MessageId) -> Option<&ReplyResolution> {
        self.resolutions.get(reply)
    }
}

fn chrono_key(m: &Message) -> (chrono::DateTime<chrono::Utc>, &MessageId) {
    (m.created_at, &m.message_id)
}

/// Partitions messages into threads keyed by `thread_id`.
///
/// The earliest initial message of a thread id anchors the thread; further
/// initials sharing the id are indexed as non-thread initials. Replies
/// whose stated target is missing or lies in a different thread are
/// reattached to the anchor and reported. The partition depends only on
/// message fields, never on input row order.
pub fn build_threads(messages: &[Message]) -> ThreadIndex {
    let by_id: HashMap<&MessageId, &Message> =
        messages.iter().map(|m| (&m.message_id, m)).collect();

    let mut groups: BTreeMap<&ThreadId, Vec<&Message>> = BTreeMap::new();
    for m in messages {
        groups.entry(&m.thread_id).or_default().push(m);
    }

    let mut index = ThreadIndex::default();
    for (thread_id, group) in groups {
        let mut initials: Vec<&Message> = group.iter().copied().filter(|m| m.is_initial()).collect();
        let mut replies: Vec<&Message> = group.iter().copied().filter(|m| m.is_reply()).collect();
        initials.sort_by(|a, b| chrono_key(a).cmp(&chrono_key(b)));
        replies.sort_by(|a, b| chrono_key(a).cmp(&chrono_key(b)));

        let Some((anchor, extra_initials)) = initials.split_first() else {
            // No initial at all: every reply in the group is an orphan.
            index
                .repairs
                .orphans
                .extend(replies.iter().map(|m| m.message_id.clone()));
            continue;
        };
        index
            .non_thread_initials
            .extend(extra_initials.iter().map(|m| m.message_id.clone()));

        if replies.is_empty() {
            index.non_thread_initials.push(anchor.message_id.clone());
            continue;
        }

        let mut participants = BTreeSet::new();
        participants.insert(anchor.author_id.clone());
        for reply in &replies {
            participants.insert(reply.author_id.clone());
            let stated = reply.reply_to_id.as_ref().expect("reply has target");
            let (target, reattached) = match by_id.get(stated) {
                Some(t) if t.thread_id == reply.thread_id => (*t, false),
                _ => {
                    index.repairs.reattached.push(reply.message_id.clone());
                    (*anchor, true)
                }
            };
            if reply.created_at < target.created_at {
                index
                    .repairs
                    .order_violations
                    .push(reply.message_id.clone());
            }
            index.resolutions.insert(
                reply.message_id.clone(),
                ReplyResolution {
                    target_message: target.message_id.clone(),
                    target_author: target.author_id.clone(),
                    reattached,
                },
            );
        }

        index.threads.insert(
            (*thread_id).clone(),
            Thread {
                thread_id: (*thread_id).clone(),
                initial: anchor.message_id.clone(),
                initial_author: anchor.author_id.clone(),
                replies: replies.iter().map(|m| m.message_id.clone()).collect(),
                participants,
            },
        );
    }

    // Index lists must not depend on input row order.
    let order_key = |id: &MessageId| {
        let m = by_id[id];
        (m.created_at, m.message_id.clone())
    };
    index.non_thread_initials.sort_by_key(order_key);
    index.repairs.orphans.sort_by_key(order_key);
    index.repairs.reattached.sort_by_key(order_key);
    index.repairs.order_violations.sort_by_key(order_key);

    index.repairs.self_tagged = messages
        .iter()
        .filter(|m| m.tagged_user_ids.contains(&m.author_id))
        .map(|m| m.message_id.clone())
        .collect();
    index.repairs.self_tagged.sort_by_key(order_key);

    index
}
