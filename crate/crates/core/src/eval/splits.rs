//! Train/validation/test split generation for the evaluation protocols.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataformat::LabeledSample;
use crate::error::{Error, Result};
use crate::seed::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Protocol {
    /// Repeated random partitions of the participants into disjoint groups.
    UnseenRandomSplit {
        train: usize,
        val: usize,
        test: usize,
        repeats: usize,
    },
    /// Sample-level folds stratified by participant and class.
    SeenKFold { k: usize },
    /// The default unseen partitions, re-evaluated at every window size.
    WindowSweep { ws_list: Vec<usize> },
    /// One test participant per fold; the next participant validates.
    LeaveOneParticipantOut,
    /// Six sample-level folds.
    SeenKFold6,
}

impl Protocol {
    pub fn unseen() -> Protocol {
        Protocol::UnseenRandomSplit {
            train: 18,
            val: 4,
            test: 4,
            repeats: 10,
        }
    }

    pub fn seen5() -> Protocol {
        Protocol::SeenKFold { k: 5 }
    }

    pub fn sweep() -> Protocol {
        Protocol::WindowSweep {
            ws_list: vec![30, 35, 40, 45, 50, 55, 60],
        }
    }

    /// Short name used on the command line and in summaries.
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::UnseenRandomSplit { .. } => "unseen",
            Protocol::SeenKFold { .. } => "seen5",
            Protocol::WindowSweep { .. } => "sweep",
            Protocol::LeaveOneParticipantOut => "lopo",
            Protocol::SeenKFold6 => "seen6",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        match self {
            Protocol::UnseenRandomSplit {
                train,
                val,
                test,
                repeats,
            } => {
                if *train == 0 || *val == 0 || *test == 0 {
                    return bad("every partition needs at least one participant");
                }
                if *repeats == 0 {
                    return bad("repeats must be at least 1");
                }
            }
            Protocol::SeenKFold { k } if *k < 3 => return bad("k-fold needs k >= 3"),
            Protocol::WindowSweep { ws_list } if ws_list.is_empty() || ws_list.contains(&0) => {
                return bad("window sweep needs positive window sizes")
            }
            _ => {}
        }
        Ok(())
    }

    /// Window sizes evaluated under this protocol.
    pub fn window_sizes(&self, default_ws: usize) -> Vec<usize> {
        match self {
            Protocol::WindowSweep { ws_list } => ws_list.clone(),
            _ => vec![default_ws],
        }
    }
}

/// The parts of a sample that split generation looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleMeta {
    pub participant: u32,
    pub label: usize,
    pub session: u8,
}

impl From<&LabeledSample> for SampleMeta {
    fn from(s: &LabeledSample) -> Self {
        SampleMeta {
            participant: s.participant_id,
            label: s.label.index(),
            session: s.session_id,
        }
    }
}

/// Disjoint participant groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantSplit {
    pub train: Vec<u32>,
    pub val: Vec<u32>,
    pub test: Vec<u32>,
}

/// Disjoint sample index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn distinct(participants: &[u32]) -> Vec<u32> {
    participants
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn sorted(mut v: Vec<u32>) -> Vec<u32> {
    v.sort_unstable();
    v
}

/// `repeats` seeded random partitions of the distinct participants.
pub fn participant_partitions(
    participants: &[u32],
    train: usize,
    val: usize,
    test: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<ParticipantSplit>> {
    let ids = distinct(participants);
    let needed = train + val + test;
    if ids.len() < needed {
        return Err(Error::InsufficientParticipants {
            needed,
            available: ids.len(),
        });
    }
    Ok((0..repeats)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x554E_5345, r as u64]));
            let mut order = ids.clone();
            order.shuffle(&mut rng);
            ParticipantSplit {
                train: sorted(order[..train].to_vec()),
                val: sorted(order[train..train + val].to_vec()),
                test: sorted(order[train + val..needed].to_vec()),
            }
        })
        .collect())
}

/// One fold per participant; the next participant in id order validates.
pub fn lopo_partitions(participants: &[u32]) -> Result<Vec<ParticipantSplit>> {
    let ids = distinct(participants);
    if ids.len() < 3 {
        return Err(Error::InsufficientParticipants {
            needed: 3,
            available: ids.len(),
        });
    }
    let n = ids.len();
    Ok((0..n)
        .map(|i| {
            let val = ids[(i + 1) % n];
            ParticipantSplit {
                train: ids
                    .iter()
                    .copied()
                    .filter(|&p| p != ids[i] && p != val)
                    .collect(),
                val: vec![val],
                test: vec![ids[i]],
            }
        })
        .collect())
}

fn by_participant(meta: &[SampleMeta], p: &ParticipantSplit) -> Split {
    let pick = |group: &[u32]| -> Vec<usize> {
        (0..meta.len())
            .filter(|&i| group.binary_search(&meta[i].participant).is_ok())
            .collect()
    };
    Split {
        train: pick(&p.train),
        val: pick(&p.val),
        test: pick(&p.test),
    }
}

/// Sample-level folds: each (participant, class) group is shuffled and dealt
/// round-robin, continuing the deal across groups so fold sizes stay even.
/// Fold `i` tests, fold `i + 1` validates, the rest train.
pub fn kfold_splits(meta: &[SampleMeta], k: usize, seed: u64) -> Result<Vec<Split>> {
    if k < 3 {
        return Err(Error::InvalidConfig("k-fold needs k >= 3".into()));
    }
    let mut groups: BTreeMap<(u32, usize), Vec<usize>> = BTreeMap::new();
    for (i, m) in meta.iter().enumerate() {
        groups.entry((m.participant, m.label)).or_default().push(i);
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (&(p, label), idx) in &groups {
        let mut idx = idx.clone();
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x4B46_4F4C, p as u64, label as u64]));
        idx.shuffle(&mut rng);
        for i in idx {
            folds[next % k].push(i);
            next += 1;
        }
    }
    if folds.iter().any(Vec::is_empty) {
        return Err(Error::Empty(format!(
            "{} samples cannot fill {k} folds",
            meta.len()
        )));
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok((0..k)
        .map(|i| {
            let v = (i + 1) % k;
            let mut train: Vec<usize> = (0..k)
                .filter(|&j| j != i && j != v)
                .flat_map(|j| folds[j].clone())
                .collect();
            train.sort_unstable();
            Split {
                train,
                val: folds[v].clone(),
                test: folds[i].clone(),
            }
        })
        .collect())
}

/// Sample index splits for `protocol`. Window sweeps use the default unseen
/// partitions so every window size sees identical splits.
pub fn make_splits(protocol: &Protocol, meta: &[SampleMeta], seed: u64) -> Result<Vec<Split>> {
    protocol.validate()?;
    if meta.is_empty() {
        return Err(Error::Empty("no samples to split".into()));
    }
    let participants: Vec<u32> = meta.iter().map(|m| m.participant).collect();
    let groups = match protocol {
        Protocol::UnseenRandomSplit {
            train,
            val,
            test,
            repeats,
        } => participant_partitions(&participants, *train, *val, *test, *repeats, seed)?,
        Protocol::WindowSweep { .. } => return make_splits(&Protocol::unseen(), meta, seed),
        Protocol::LeaveOneParticipantOut => lopo_partitions(&participants)?,
        Protocol::SeenKFold { k } => return kfold_splits(meta, *k, seed),
        Protocol::SeenKFold6 => return kfold_splits(meta, 6, seed),
    };
    Ok(groups.iter().map(|g| by_participant(meta, g)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(participants: u32, per_class: usize, classes: usize) -> Vec<SampleMeta> {
        let mut out = Vec::new();
        for participant in 0..participants {
            for label in 0..classes {
                for _ in 0..per_class {
                    out.push(SampleMeta {
                        participant,
                        label,
                        session: 1,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn unseen_partitions_are_disjoint_and_complete() {
        let ids: Vec<u32> = (0..26).collect();
        let parts = participant_partitions(&ids, 18, 4, 4, 10, 3).unwrap();
        assert_eq!(parts.len(), 10);
        for p in &parts {
            assert_eq!((p.train.len(), p.val.len(), p.test.len()), (18, 4, 4));
            let all: BTreeSet<u32> = p
                .train
                .iter()
                .chain(&p.val)
                .chain(&p.test)
                .copied()
                .collect();
            assert_eq!(all.len(), 26);
        }
        assert_ne!(parts[0], parts[1]);
        assert_eq!(
            parts,
            participant_partitions(&ids, 18, 4, 4, 10, 3).unwrap()
        );
        assert_ne!(
            parts,
            participant_partitions(&ids, 18, 4, 4, 10, 4).unwrap()
        );
    }

    #[test]
    fn too_few_participants_rejected() {
        let ids: Vec<u32> = (0..20).collect();
        assert!(matches!(
            participant_partitions(&ids, 18, 4, 4, 1, 0),
            Err(Error::InsufficientParticipants {
                needed: 26,
                available: 20
            })
        ));
        assert!(lopo_partitions(&[1, 2, 1]).is_err());
    }

    #[test]
    fn lopo_gives_one_fold_per_participant() {
        let m = meta(12, 2, 5);
        let splits = make_splits(&Protocol::LeaveOneParticipantOut, &m, 0).unwrap();
        assert_eq!(splits.len(), 12);
        for (i, s) in splits.iter().enumerate() {
            assert!(s.test.iter().all(|&j| m[j].participant == i as u32));
            assert!(s
                .val
                .iter()
                .all(|&j| m[j].participant == ((i + 1) % 12) as u32));
            assert_eq!(s.train.len() + s.val.len() + s.test.len(), m.len());
        }
    }

    #[test]
    fn participant_splits_keep_people_apart() {
        let m = meta(26, 5, 4);
        for s in make_splits(&Protocol::unseen(), &m, 9).unwrap() {
            let ps = |idx: &[usize]| {
                idx.iter()
                    .map(|&i| m[i].participant)
                    .collect::<BTreeSet<_>>()
            };
            assert!(ps(&s.train).is_disjoint(&ps(&s.test)));
            assert!(ps(&s.train).is_disjoint(&ps(&s.val)));
            assert!(ps(&s.val).is_disjoint(&ps(&s.test)));
            assert_eq!(s.test.len(), 4 * 20);
        }
    }

    #[test]
    fn kfold_covers_every_participant_in_every_set() {
        let m = meta(26, 5, 4);
        let splits = make_splits(&Protocol::seen5(), &m, 1).unwrap();
        assert_eq!(splits.len(), 5);
        let mut tested = vec![0; m.len()];
        for s in &splits {
            for set in [&s.train, &s.val, &s.test] {
                let ps: BTreeSet<u32> = set.iter().map(|&i| m[i].participant).collect();
                assert_eq!(ps.len(), 26);
            }
            assert_eq!(s.test.len(), 104);
            for &i in &s.test {
                tested[i] += 1;
            }
            let all: BTreeSet<usize> = s
                .train
                .iter()
                .chain(&s.val)
                .chain(&s.test)
                .copied()
                .collect();
            assert_eq!(all.len(), m.len());
        }
        assert!(tested.iter().all(|&c| c == 1));
        assert_eq!(make_splits(&Protocol::SeenKFold6, &m, 1).unwrap().len(), 6);
    }

    #[test]
    fn sweep_reuses_unseen_splits() {
        let m = meta(26, 1, 4);
        assert_eq!(
            make_splits(&Protocol::sweep(), &m, 5).unwrap(),
            make_splits(&Protocol::unseen(), &m, 5).unwrap()
        );
    }

    #[test]
    fn invalid_protocols_rejected() {
        assert!(Protocol::SeenKFold { k: 2 }.validate().is_err());
        assert!(Protocol::WindowSweep { ws_list: vec![] }
            .validate()
            .is_err());
        assert!(Protocol::UnseenRandomSplit {
            train: 1,
            val: 1,
            test: 1,
            repeats: 0
        }
        .validate()
        .is_err());
    }
}
