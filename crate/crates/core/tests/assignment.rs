use std::collections::{BTreeMap, BTreeSet};

use speechbench::corpus::{Clip, CorpusManifest, Sex, Status, Subject, Task};
use speechbench::service::{build_assignment, ServiceError};
use speechbench::Seed;

/// Every (status, sex, language, task) cell holds plenty of clips.
fn rich_manifest() -> CorpusManifest {
    let mut subjects = Vec::new();
    let mut clips = Vec::new();
    let mut n = 0;
    for status in Status::ALL {
        for sex in [Sex::Male, Sex::Female] {
            for lang in ["en", "fr"] {
                for k in 0..3 {
                    let sid = format!("{}-{}-{lang}-{k}", status.as_str(), sex.as_str());
                    subjects.push(Subject {
                        subject_id: sid.clone(),
                        status,
                        sex,
                        age: 60.0,
                        severity: None,
                        first_language: lang.into(),
                        split: None,
                    });
                    for task in Task::ALL {
                        for _ in 0..2 {
                            n += 1;
                            clips.push(Clip {
                                clip_id: format!("c{n}"),
                                subject_id: sid.clone(),
                                task,
                                language: lang.into(),
                                is_first_language: true,
                                duration: 20.0,
                                audio: None,
                                embedding: None,
                            });
                        }
                    }
                }
            }
        }
    }
    CorpusManifest::new(subjects, clips).unwrap()
}

#[test]
fn assignments_are_balanced_on_every_factor() {
    let m = rich_manifest();
    let participants: Vec<String> = (0..4).map(|i| format!("p{i}")).collect();
    let out = build_assignment(&m, &participants, Seed(8)).unwrap();
    let shared: Vec<BTreeSet<&str>> =
        out.iter().map(|a| a.clips.iter().filter(|c| c.shared).map(|c| c.clip_id.as_str()).collect()).collect();
    assert!(shared.windows(2).all(|w| w[0] == w[1]));
    let mut unique_seen = BTreeSet::new();
    for a in &out {
        let mut sex = BTreeMap::new();
        let mut lang = BTreeMap::new();
        let mut task = BTreeMap::new();
        let mut status = BTreeMap::new();
        for id in a.clip_ids() {
            let c = m.clip(id).unwrap();
            assert!(c.duration <= 30.0);
            let s = m.owner(c);
            *status.entry(s.status).or_insert(0) += 1;
            *sex.entry(s.sex).or_insert(0) += 1;
            *lang.entry(c.language.clone()).or_insert(0) += 1;
            *task.entry(c.task).or_insert(0) += 1;
        }
        assert_eq!(status.values().copied().collect::<Vec<_>>(), vec![32, 32]);
        assert_eq!(sex.values().copied().collect::<Vec<_>>(), vec![32, 32]);
        assert_eq!(lang.values().copied().collect::<Vec<_>>(), vec![32, 32]);
        let mut per_task: Vec<usize> = task.values().copied().collect();
        per_task.sort_unstable();
        assert_eq!(per_task, vec![12, 13, 13, 13, 13]);
        for c in a.clips.iter().filter(|c| !c.shared) {
            assert!(unique_seen.insert(c.clip_id.clone()), "unique clip {} reused", c.clip_id);
        }
    }
}

#[test]
fn assignment_is_deterministic_and_order_varies_by_participant() {
    let m = rich_manifest();
    let ps = vec!["a".to_string(), "b".to_string()];
    let x = build_assignment(&m, &ps, Seed(1)).unwrap();
    assert_eq!(x, build_assignment(&m, &ps, Seed(1)).unwrap());
    assert_ne!(x, build_assignment(&m, &ps, Seed(2)).unwrap());
    assert_ne!(x[0].token, x[1].token);
}

#[test]
fn participant_validation() {
    let m = rich_manifest();
    assert!(matches!(build_assignment(&m, &[], Seed(1)), Err(ServiceError::Config(_))));
    let dup = vec!["a".to_string(), "a".to_string()];
    assert!(matches!(build_assignment(&m, &dup, Seed(1)), Err(ServiceError::Config(_))));
    // 240 eligible clips cover at most 6 participants (32 shared + 32 each).
    let many: Vec<String> = (0..7).map(|i| i.to_string()).collect();
    assert!(matches!(build_assignment(&m, &many, Seed(1)), Err(ServiceError::InsufficientClips { .. })));
}
