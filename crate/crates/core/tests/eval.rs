use std::sync::Mutex;

use spt_core::eval::{
    check_no_leakage, run_experiment, Classifier, EvalReport, ExperimentSpec, FitOutcome, FoldData,
    MethodSpec, Protocol, RunOptions,
};
use spt_core::nn::{Architecture, TrainConfig};
use spt_core::simulate::{synth_dataset, SimConfig};
use spt_core::{ClassMode, LabeledSample, SptClass};

/// Predicts the true test labels.
struct Perfect;

impl Classifier for Perfect {
    fn fit_predict(
        &self,
        _: &MethodSpec,
        fold: &FoldData<'_>,
        _: &TrainConfig,
    ) -> spt_core::Result<FitOutcome> {
        Ok(FitOutcome {
            predictions: fold.test.labels.clone(),
            epochs: 1,
            best_epoch: 1,
        })
    }
}

/// Predicts the most frequent training class, lowest index on ties.
struct Majority;

impl Classifier for Majority {
    fn fit_predict(
        &self,
        _: &MethodSpec,
        fold: &FoldData<'_>,
        _: &TrainConfig,
    ) -> spt_core::Result<FitOutcome> {
        let mut counts = vec![0; fold.num_classes];
        for &l in &fold.train.labels {
            counts[l] += 1;
        }
        let best = (0..counts.len())
            .max_by_key(|&c| (counts[c], std::cmp::Reverse(c)))
            .unwrap();
        Ok(FitOutcome {
            predictions: vec![best; fold.test.len()],
            epochs: 1,
            best_epoch: 1,
        })
    }
}

/// Records fold sizes and view counts.
struct Spy(Mutex<Vec<(bool, usize, usize, usize, usize)>>);

impl Classifier for Spy {
    fn fit_predict(
        &self,
        m: &MethodSpec,
        fold: &FoldData<'_>,
        _: &TrainConfig,
    ) -> spt_core::Result<FitOutcome> {
        self.0.lock().unwrap().push((
            m.augmented,
            fold.train.len(),
            fold.val.len(),
            fold.test.len(),
            fold.train.views.len(),
        ));
        Perfect.fit_predict(m, fold, &TrainConfig::default())
    }
}

fn dataset(participants: u32, session: u8) -> Vec<LabeledSample> {
    let cfg = SimConfig {
        session_id: session,
        rng_seed: 11,
        ..SimConfig::default()
    };
    synth_dataset(&cfg, participants, 1).unwrap()
}

fn small_spec() -> ExperimentSpec {
    ExperimentSpec {
        protocol: Protocol::UnseenRandomSplit {
            train: 4,
            val: 1,
            test: 1,
            repeats: 3,
        },
        methods: vec![
            MethodSpec {
                architecture: Architecture::Spn,
                augmented: false,
            },
            MethodSpec {
                architecture: Architecture::WrtftCnn,
                augmented: false,
            },
        ],
        runs_per_config: 2,
        ..ExperimentSpec::default()
    }
}

#[test]
fn perfect_classifier_scores_full_marks() {
    let data = dataset(6, 1);
    let report = run_experiment(&small_spec(), &data, &Perfect, &RunOptions::default()).unwrap();
    assert_eq!(report.methods.len(), 2);
    for m in &report.methods {
        assert_eq!(m.n_runs, 6);
        assert_eq!(m.mean_acc, 100.0);
        assert_eq!(m.se, Some(0.0));
        // One test participant with one sample per class, six runs.
        for (i, row) in m.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<u64>(), 6);
            assert_eq!(row[i], 6);
        }
        assert!(m.per_class_recall.iter().all(|r| *r == Some(1.0)));
    }
}

#[test]
fn majority_classifier_scores_chance_on_balanced_tests() {
    let data = dataset(6, 1);
    let report = run_experiment(&small_spec(), &data, &Majority, &RunOptions::default()).unwrap();
    for m in &report.methods {
        assert_eq!(m.mean_acc, 25.0);
        assert!(m.accuracies.iter().all(|&a| a == 25.0));
        let recall: Vec<f64> = m.per_class_recall.iter().map(|r| r.unwrap()).collect();
        assert_eq!(recall, vec![1.0, 0.0, 0.0, 0.0]);
    }
}

#[test]
fn augmentation_touches_training_only() {
    let data = dataset(6, 1);
    let spec = ExperimentSpec {
        methods: vec![
            MethodSpec {
                architecture: Architecture::Spn,
                augmented: true,
            },
            MethodSpec {
                architecture: Architecture::TdCnn,
                augmented: false,
            },
        ],
        runs_per_config: 1,
        max_splits: Some(1),
        ..small_spec()
    };
    let spy = Spy(Mutex::new(Vec::new()));
    run_experiment(&spec, &data, &spy, &RunOptions::default()).unwrap();
    let seen = spy.0.into_inner().unwrap();
    assert_eq!(seen, vec![(true, 16 * 16, 4, 4, 2), (false, 16, 4, 4, 1)]);
}

#[test]
fn leakage_is_detected() {
    assert!(check_no_leakage(&[0, 1, 2], &[3], &[4]).is_ok());
    assert!(check_no_leakage(&[0, 1, 4], &[3], &[4]).is_err());
    assert!(check_no_leakage(&[3], &[3], &[4]).is_err());
}

#[test]
fn report_round_trips_through_json() {
    let data = dataset(6, 1);
    let report = run_experiment(&small_spec(), &data, &Majority, &RunOptions::default()).unwrap();
    let json = report.to_json().unwrap();
    assert_eq!(EvalReport::from_json(&json).unwrap(), report);
    let mut csv = Vec::new();
    report.write_summary_csv(&mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,protocol,mean_acc,se,n_runs");
    assert_eq!(lines[1], "SPN,unseen,25.0000,0.0000,6");
    let mut cm = Vec::new();
    report.methods[0]
        .write_confusion_csv(&["SUSI", "SUPR", "SISU", "PRSU"], &mut cm)
        .unwrap();
    assert!(String::from_utf8(cm)
        .unwrap()
        .starts_with("true\\pred,SUSI,SUPR,SISU,PRSU\nSUSI,6,0,0,0\n"));
}

#[test]
fn parallel_jobs_give_identical_reports() {
    let data = dataset(6, 1);
    let a = run_experiment(&small_spec(), &data, &Majority, &RunOptions::default()).unwrap();
    let b = run_experiment(
        &small_spec(),
        &data,
        &Majority,
        &RunOptions {
            jobs: 3,
            progress: None,
        },
    )
    .unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
}

#[test]
fn sessions_are_reported_and_filtered() {
    let mut data = dataset(6, 1);
    data.extend(dataset(6, 2));
    let spec = ExperimentSpec {
        protocol: Protocol::LeaveOneParticipantOut,
        runs_per_config: 1,
        max_splits: Some(3),
        ..small_spec()
    };
    let both = run_experiment(&spec, &data, &Perfect, &RunOptions::default()).unwrap();
    let sessions: Vec<u8> = both.methods[0].sessions.iter().map(|s| s.session).collect();
    assert_eq!(sessions, vec![1, 2]);
    assert_eq!(
        both.methods[0].confusion.iter().flatten().sum::<u64>(),
        3 * 8
    );

    let spy = Spy(Mutex::new(Vec::new()));
    let only2 = ExperimentSpec {
        session_filter: Some(2),
        ..spec
    };
    let r = run_experiment(&only2, &data, &spy, &RunOptions::default()).unwrap();
    assert_eq!(r.methods[0].sessions.len(), 1);
    // Training and validation keep both sessions; test keeps one.
    for (_, train, val, test, _) in spy.0.into_inner().unwrap() {
        assert_eq!((train, val, test), (4 * 8, 8, 4));
    }
}

#[test]
fn window_sweep_reports_each_size_on_the_same_splits() {
    let data = dataset(26, 1);
    let spec = ExperimentSpec {
        protocol: Protocol::WindowSweep {
            ws_list: vec![30, 50],
        },
        runs_per_config: 1,
        max_splits: Some(2),
        ..small_spec()
    };
    let r = run_experiment(&spec, &data, &Perfect, &RunOptions::default()).unwrap();
    let rows: Vec<(String, usize)> = r
        .methods
        .iter()
        .map(|m| (m.protocol.clone(), m.ws))
        .collect();
    assert_eq!(
        rows,
        vec![
            ("sweep:ws=30".to_string(), 30),
            ("sweep:ws=30".to_string(), 30),
            ("sweep:ws=50".to_string(), 50),
            ("sweep:ws=50".to_string(), 50)
        ]
    );
    let splits_of = |ws| {
        r.runs
            .iter()
            .filter(|x| x.ws == ws)
            .map(|x| (x.split, x.method.clone()))
            .collect::<Vec<_>>()
    };
    assert_eq!(splits_of(30), splits_of(50));
}

#[test]
fn labels_outside_class_mode_rejected() {
    let cfg = SimConfig {
        class_mode: ClassMode::Five,
        ..SimConfig::default()
    };
    let data = synth_dataset(&cfg, 6, 1).unwrap();
    assert!(data.iter().any(|s| s.label == SptClass::Bg));
    assert!(run_experiment(&small_spec(), &data, &Perfect, &RunOptions::default()).is_err());
    let five = ExperimentSpec {
        class_mode: ClassMode::Five,
        ..small_spec()
    };
    let r = run_experiment(&five, &data, &Perfect, &RunOptions::default()).unwrap();
    assert_eq!(r.methods[0].confusion.len(), 5);
}

#[test]
fn method_names_parse_and_print() {
    let all: Vec<String> = ["spn+aug", "td+aug", "wrtft+aug", "spn", "td", "wrtft"]
        .iter()
        .map(|s| s.parse::<MethodSpec>().unwrap().to_string())
        .collect();
    assert_eq!(
        all,
        [
            "AUG-SPN",
            "AUG-TD-CNN",
            "AUG-WRTFT-CNN",
            "SPN",
            "TD-CNN",
            "WRTFT-CNN"
        ]
    );
    assert!("cnn".parse::<MethodSpec>().is_err());
}
