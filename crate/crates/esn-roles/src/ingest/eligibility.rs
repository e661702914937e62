//! Selection of users active enough to profile.

use super::{IngestError, Message, StudyWindow, UserRecord};
use crate::ids::UserId;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// How message activity qualifies a user for analysis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EligibilityMode {
    /// At least `min_messages` authored public messages inside the window.
    Total,
    /// At least one authored public message in every full calendar month
    /// of the window.
    PerMonth,
}

/// Users registered over the whole window with enough public activity.
///
/// `messages` must already be public-filtered; the window is applied here
/// on timestamps. Registration qualifies when `registered_at` is at or
/// before the window start and any deregistration is at or after its end.
pub fn eligible_users(
    messages: &[Message],
    users: &[UserRecord],
    window: &StudyWindow,
    mode: EligibilityMode,
    min_messages: u64,
) -> Result<BTreeSet<UserId>, IngestError> {
    let months = window.full_months();
    if mode == EligibilityMode::PerMonth && months.is_empty() {
        return Err(IngestError::NoFullMonth);
    }

    let mut totals: BTreeMap<&UserId, u64> = BTreeMap::new();
    let mut month_hits: BTreeMap<&UserId, BTreeSet<(i32, u32)>> = BTreeMap::new();
    for m in messages {
        if !window.contains(m.created_at) {
            continue;
        }
        *totals.entry(&m.author_id).or_insert(0) += 1;
        if mode == EligibilityMode::PerMonth {
            use chrono::Datelike;
            month_hits
                .entry(&m.author_id)
                .or_default()
                .insert((m.created_at.year(), m.created_at.month()));
        }
    }

    let active = |u: &UserId| match mode {
        EligibilityMode::Total => totals.get(u).copied().unwrap_or(0) >= min_messages,
        EligibilityMode::PerMonth => month_hits
            .get(u)
            .map(|hits| months.iter().all(|m| hits.contains(m)))
            .unwrap_or(false),
    };

    Ok(users
        .iter()
        .filter(|u| u.registered_at <= window.start)
        .filter(|u| u.deregistered_at.map_or(true, |d| d >= window.end))
        .filter(|u| active(&u.user_id))
        .map(|u| u.user_id.clone())
        .collect())
}
