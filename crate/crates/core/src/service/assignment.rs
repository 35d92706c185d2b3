//! Balanced rater assignments.

use std::collections::{BTreeSet, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ServiceError;
use crate::corpus::{Clip, CorpusManifest, Sex, Status, Task, MAX_CLIP_SECONDS};
use crate::Seed;

/// Clips per participant.
pub const ASSIGNMENT_SIZE: usize = 64;
/// Clips every participant shares.
pub const SHARED_SIZE: usize = ASSIGNMENT_SIZE / 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignedClip {
    pub clip_id: String,
    pub shared: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub participant_id: String,
    /// Opaque session token handed to the participant out of band.
    pub token: String,
    pub clips: Vec<AssignedClip>,
}

impl Assignment {
    pub fn clip_ids(&self) -> impl Iterator<Item = &str> {
        self.clips.iter().map(|c| c.clip_id.as_str())
    }
}

/// Session token for a participant: hex SHA-256 of the seed and participant
/// id, truncated to 32 characters. Anyone holding the seed can recompute
/// tokens, so treat the seed as a secret when serving.
pub fn session_token(seed: Seed, participant_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"session-token");
    h.update(seed.0.to_le_bytes());
    h.update(participant_id.as_bytes());
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Target<'a> {
    status: Status,
    sex: Sex,
    language: &'a str,
    task: Task,
}

/// Slot targets for a block of 32: status alternates every slot, sex every
/// two, language every four, and tasks cycle from `task_offset`.
fn block_targets<'a>(languages: &[&'a str], task_offset: usize) -> Vec<Target<'a>> {
    (0..SHARED_SIZE)
        .map(|k| Target {
            status: Status::ALL[k % 2],
            sex: [Sex::Male, Sex::Female][(k / 2) % 2],
            language: languages[(k / 4) % languages.len()],
            task: Task::ALL[(k + task_offset) % Task::ALL.len()],
        })
        .collect()
}

struct Pool<'a> {
    clips: Vec<(&'a Clip, Status, Sex)>,
    used: HashSet<&'a str>,
}

impl<'a> Pool<'a> {
    /// Picks an unused clip matching the target, relaxing task, then
    /// language, then sex. Status is never relaxed.
    fn take(&mut self, target: &Target<'_>, rng: &mut impl rand::Rng) -> Option<&'a Clip> {
        type Pred<'p> = &'p dyn Fn(&Clip, Sex, &Target<'_>) -> bool;
        let levels: [(Pred<'_>, &str); 4] = [
            (&|c, s, t| s == t.sex && c.language == t.language && c.task == t.task, ""),
            (&|c, s, t| s == t.sex && c.language == t.language, "task"),
            (&|_, s, t| s == t.sex, "task and language"),
            (&|_, _, _| true, "task, language and sex"),
        ];
        for (pred, relaxed) in levels {
            let candidates: Vec<&'a Clip> = self
                .clips
                .iter()
                .filter(|(c, st, sx)| *st == target.status && !self.used.contains(c.clip_id.as_str()) && pred(c, *sx, target))
                .map(|(c, _, _)| *c)
                .collect();
            if let Some(&clip) = candidates.choose(rng) {
                if !relaxed.is_empty() {
                    log::warn!(
                        "assignment balance relaxed ({relaxed}) for {} {} {} {}",
                        target.status,
                        target.sex.as_str(),
                        target.language,
                        target.task
                    );
                }
                self.used.insert(clip.clip_id.as_str());
                return Some(clip);
            }
        }
        None
    }
}

/// Builds one 64-clip assignment per participant: a shared pool of 32 clips
/// plus 32 clips unique to that participant, each block balanced over
/// status, sex, language and task.
pub fn build_assignment(
    m: &CorpusManifest,
    participants: &[String],
    seed: Seed,
) -> Result<Vec<Assignment>, ServiceError> {
    if participants.is_empty() {
        return Err(ServiceError::Config("no participants".into()));
    }
    let unique: BTreeSet<&String> = participants.iter().collect();
    if unique.len() != participants.len() || participants.iter().any(String::is_empty) {
        return Err(ServiceError::Config("participant ids must be unique and non-empty".into()));
    }
    let eligible: Vec<(&Clip, Status, Sex)> = m
        .clips()
        .iter()
        .filter(|c| c.duration <= MAX_CLIP_SECONDS)
        .map(|c| {
            let s = m.owner(c);
            (c, s.status, s.sex)
        })
        .collect();
    let needed = SHARED_SIZE * (1 + participants.len());
    let per_status = needed / 2;
    for status in Status::ALL {
        let available = eligible.iter().filter(|(_, s, _)| *s == status).count();
        if eligible.len() < needed || available < per_status {
            return Err(ServiceError::InsufficientClips { needed, available: eligible.len() });
        }
    }
    let languages: Vec<&str> = eligible
        .iter()
        .map(|(c, _, _)| c.language.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut rng = seed.derive("assignment").rng();
    let mut pool = Pool { clips: eligible, used: HashSet::new() };
    let fill = |pool: &mut Pool<'_>, offset: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Result<Vec<String>, ServiceError> {
        block_targets(&languages, offset)
            .iter()
            .map(|t| {
                pool.take(t, rng)
                    .map(|c| c.clip_id.clone())
                    .ok_or(ServiceError::InsufficientClips { needed, available: pool.clips.len() })
            })
            .collect()
    };
    // Offsets 0 and 2 give the shared block two extra SVP/Repeat slots and
    // each unique block two extra Read/Recall slots: 13/13/13/13/12 overall.
    let shared = fill(&mut pool, 0, &mut rng)?;
    let mut out = Vec::with_capacity(participants.len());
    for participant in participants {
        let own = fill(&mut pool, 2, &mut rng)?;
        let mut clips: Vec<AssignedClip> = shared
            .iter()
            .map(|id| AssignedClip { clip_id: id.clone(), shared: true })
            .chain(own.into_iter().map(|id| AssignedClip { clip_id: id, shared: false }))
            .collect();
        clips.shuffle(&mut rng);
        out.push(Assignment { participant_id: participant.clone(), token: session_token(seed, participant), clips });
    }
    Ok(out)
}
