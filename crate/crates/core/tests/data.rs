use std::collections::BTreeSet;
use std::io::Write;

use patchtst_har::dataset::*;
use patchtst_har::normalize::*;
use patchtst_har::Error;
use proptest::prelude::*;

fn flat_window(id: &str, subject: &str, sensor: Sensor, n: usize) -> Window {
    Window {
        id: id.into(),
        subject: subject.into(),
        sensor,
        samples: (0..n).map(|t| Sample::new(t as f64, 0.5, -1.0)).collect(),
        label: Some(3),
    }
}

#[test]
fn window_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.jsonl");
    let windows = synth_sensors(&SynthConfig::new(3, 4, 0.1, 1), &[(Sensor::LA, 0.1), (Sensor::RL, 0.2)]).unwrap();
    write_windows(&windows, &path).unwrap();
    assert_eq!(read_windows(&path).unwrap(), windows);
}

#[test]
fn short_window_is_a_schema_error_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    for (i, n) in [50, 50, 49].iter().enumerate() {
        let w = flat_window(&format!("w{i}"), "S01", Sensor::LA, *n);
        writeln!(f, "{}", serde_json::to_string(&w).unwrap()).unwrap();
    }
    drop(f);
    match read_windows(&path) {
        Err(Error::Schema { line, message, .. }) => {
            assert_eq!(line, 3);
            assert!(message.contains("49"), "{message}");
        }
        other => panic!("expected schema error, got {other:?}"),
    }
}

#[test]
fn malformed_json_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let good = serde_json::to_string(&flat_window("a", "S1", Sensor::RA, 50)).unwrap();
    std::fs::write(&path, format!("{good}\n{{\"id\": \n")).unwrap();
    assert!(matches!(read_windows(&path), Err(Error::Parse { line: 2, .. })));
}

#[test]
fn window_json_layout() {
    let w = flat_window("S1:0", "S1", Sensor::LL, 50);
    let v: serde_json::Value = serde_json::to_value(&w).unwrap();
    assert_eq!(v["sensor"], "LL");
    assert_eq!(v["samples"][2], serde_json::json!([2.0, 0.5, -1.0]));
    assert_eq!(v["label"], 3);
    let unlabelled: Window = serde_json::from_str(
        &serde_json::json!({"id": "x", "subject": "S", "sensor": "RL", "samples": vec![[0.0, 0.0, 1.0]; 50]}).to_string(),
    )
    .unwrap();
    assert_eq!(unlabelled.label, None);
}

#[test]
fn stream_segmentation_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    let stream = Stream {
        subject: "S07".into(),
        sensor: Sensor::RA,
        samples: (0..130).map(|t| Sample::new(t as f64, 0.0, 0.0)).collect(),
        labels: (0..130).map(|t| if t < 60 { 2 } else { 5 }).collect(),
    };
    write_streams(std::slice::from_ref(&stream), &path).unwrap();
    let back = read_streams(&path).unwrap();
    let windows = segment(&back[0], 50, 25).unwrap();
    let ids: Vec<&str> = windows.iter().map(|w| w.id.as_str()).collect();
    assert_eq!(ids, ["S07:0", "S07:25", "S07:50", "S07:75"]);
    let labels: Vec<usize> = windows.iter().map(|w| w.label.unwrap()).collect();
    // Window at 25 holds 35 samples of class 2 and 15 of class 5.
    assert_eq!(labels, [2, 2, 5, 5]);
    assert_eq!(windows[1].samples[0].x, 25.0);
}

#[test]
fn folds_for_twenty_two_subjects() {
    let subjects: Vec<String> = (1..=22).map(|i| format!("S{i:02}")).collect();
    let folds = make_folds(&subjects, 5, 42).unwrap();
    let sizes: Vec<usize> = folds.iter().map(|f| f.held_out.len()).collect();
    assert_eq!(sizes, [5, 5, 4, 4, 4]);
    let mut seen = BTreeSet::new();
    for f in &folds {
        for s in &f.held_out {
            assert!(seen.insert(s.clone()), "{s} held out twice");
            assert!(!f.training.contains(s));
        }
        assert_eq!(f.held_out.len() + f.training.len(), 22);
    }
    assert_eq!(seen.len(), 22);
    assert_eq!(make_folds(&subjects, 5, 42).unwrap(), folds);
    assert_ne!(make_folds(&subjects, 5, 43).unwrap(), folds);

    let holdout = make_holdout_folds(&subjects, 5, 2, 7).unwrap();
    assert!(holdout.iter().all(|f| f.held_out.len() == 2 && f.training.len() == 20));
}

#[test]
fn synthetic_windows_are_separable_by_nearest_centroid() {
    // Without noise every class is its bank up to small gain, phase and drift
    // changes; a nearest-centroid classifier on raw samples must be perfect.
    let n_classes = 6;
    let windows = synth_dataset(n_classes, 20, 0.0, 3).unwrap();
    assert_eq!(windows.len(), 120);
    assert!(windows.iter().all(|w| w.validate().is_ok()));
    let flat = |w: &Window| -> Vec<f64> { w.samples.iter().flat_map(|s| s.to_array()).collect() };
    let mut centroids = vec![vec![0.0; 150]; n_classes];
    for w in &windows {
        for (c, v) in centroids[w.label.unwrap()].iter_mut().zip(flat(w)) {
            *c += v / 20.0;
        }
    }
    for w in &windows {
        let x = flat(w);
        let nearest = (0..n_classes)
            .min_by(|&a, &b| {
                let da: f64 = x.iter().zip(&centroids[a]).map(|(u, v)| (u - v).powi(2)).sum();
                let db: f64 = x.iter().zip(&centroids[b]).map(|(u, v)| (u - v).powi(2)).sum();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        assert_eq!(nearest, w.label.unwrap());
    }
}

#[test]
fn synthetic_sensors_share_ids_and_labels() {
    let cfg = SynthConfig::new(4, 5, 0.1, 9);
    let windows = synth_sensors(&cfg, &[(Sensor::LA, 0.0), (Sensor::RA, 0.3)]).unwrap();
    let groups = by_sensor(&windows);
    let la = &groups[&Sensor::LA];
    let ra = &groups[&Sensor::RA];
    assert_eq!(la.len(), 20);
    for (a, b) in la.iter().zip(ra) {
        assert_eq!((&a.id, &a.subject, a.label), (&b.id, &b.subject, b.label));
        assert_ne!(a.samples, b.samples);
    }
    assert_eq!(class_counts(&windows, 19)[..5], [10, 10, 10, 10, 0]);
    assert_eq!(synth_sensors(&cfg, &[(Sensor::LA, 0.0)]).unwrap()[..], la[..]);
}

fn two_pass_global(windows: &[Window], eps: f64) -> ([f64; 3], [f64; 3]) {
    let n = (windows.len() * WINDOW_LEN) as f64;
    let mut mu = [0.0; 3];
    let mut sigma = [0.0; 3];
    for k in 0..3 {
        let values = || windows.iter().flat_map(|w| w.samples.iter().map(move |s| s.to_array()[k]));
        mu[k] = values().sum::<f64>() / n;
        sigma[k] = (values().map(|v| (v - mu[k]).powi(2)).sum::<f64>() / n + eps).sqrt();
    }
    (mu, sigma)
}

#[test]
fn global_statistics_match_two_pass_oracle() {
    let windows = synth_sensors(&SynthConfig::new(5, 30, 0.2, 4), &[(Sensor::LL, 0.2)]).unwrap();
    let stats = fit_global(&windows, 1e-6).unwrap();
    let (mu, sigma) = two_pass_global(&windows, 1e-6);
    for k in 0..3 {
        assert!((stats.mu[k] - mu[k]).abs() < 1e-12);
        assert!((stats.sigma[k] - sigma[k]).abs() < 1e-12);
    }
    assert_eq!(stats.n, 150);
    // Fitting on the normalized data gives zero mean and unit deviation.
    let normalized: Vec<Window> = windows
        .iter()
        .map(|w| {
            let s = apply_global(&Signal::from_window(w), &stats);
            Window {
                samples: s.rows().iter().map(|&r| Sample::from(r)).collect(),
                ..w.clone()
            }
        })
        .collect();
    let (mu, sigma) = two_pass_global(&normalized, 0.0);
    for k in 0..3 {
        assert!(mu[k].abs() < 1e-9);
        assert!((sigma[k] - 1.0).abs() < 1e-6);
    }
}

#[test]
fn constant_windows() {
    let w = Signal::from_rows(vec![[1.0, -2.0, 0.25]; 50]);
    let z = apply_per_window(&w, 1e-6);
    assert!(z.rows().iter().flatten().all(|&v| v == 0.0));
    let windows = vec![flat_window("a", "S", Sensor::LA, 50)];
    // The x axis varies but y and z do not.
    assert!(fit_global(&windows, 0.0).is_err());
    assert!(fit_global(&windows, 1e-6).is_ok());
    assert!(fit_global(&[], 1e-6).is_err());
}

fn arb_signal() -> impl Strategy<Value = Signal> {
    prop::collection::vec(prop::array::uniform3(-50.0..50.0f64), 50).prop_map(Signal::from_rows)
}

proptest! {
    #[test]
    fn per_window_output_is_standardized(s in arb_signal()) {
        let (_, sd) = window_stats(&s, 0.0);
        prop_assume!(sd.iter().all(|&v| v > 1e-2));
        let z = apply_per_window(&s, 1e-6);
        let (mu, sigma) = window_stats(&z, 0.0);
        for k in 0..3 {
            prop_assert!(mu[k].abs() < 1e-9);
            prop_assert!((sigma[k] - 1.0).abs() < 1e-2);
        }
    }

    #[test]
    fn per_window_is_shift_invariant(s in arb_signal(), shift in prop::array::uniform3(-100.0..100.0f64)) {
        let moved = s.map(|r| [r[0] + shift[0], r[1] + shift[1], r[2] + shift[2]]);
        let a = apply_per_window(&s, 1e-6);
        let b = apply_per_window(&moved, 1e-6);
        prop_assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn per_window_is_scale_invariant(s in arb_signal(), c in 0.1..10.0f64) {
        let (_, sd) = window_stats(&s, 0.0);
        prop_assume!(sd.iter().all(|&v| v > 1.0));
        let a = apply_per_window(&s, 0.0);
        let b = apply_per_window(&s.map(|r| r.map(|v| v * c)), 0.0);
        prop_assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn segment_count_and_offsets(len in 0usize..400, stride in 1usize..80) {
        let stream = Stream {
            subject: "S".into(),
            sensor: Sensor::LA,
            samples: vec![Sample::new(0.0, 0.0, 1.0); len],
            labels: vec![0; len],
        };
        let windows = segment(&stream, 50, stride).unwrap();
        let expected = if len < 50 { 0 } else { (len - 50) / stride + 1 };
        prop_assert_eq!(windows.len(), expected);
        for (i, w) in windows.iter().enumerate() {
            prop_assert_eq!(&w.id, &format!("S:{}", i * stride));
            prop_assert_eq!(w.samples.len(), 50);
        }
    }

    #[test]
    fn majority_label_prefers_lowest_on_ties(a in 0usize..19, b in 0usize..19) {
        prop_assume!(a != b);
        let stream = Stream {
            subject: "S".into(),
            sensor: Sensor::LA,
            samples: vec![Sample::new(0.0, 0.0, 0.0); 50],
            labels: (0..50).map(|t| if t % 2 == 0 { a } else { b }).collect(),
        };
        prop_assert_eq!(segment(&stream, 50, 50).unwrap()[0].label, Some(a.min(b)));
    }

    #[test]
    fn folds_partition_subjects(n in 2usize..40, k in 2usize..8, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let subjects: Vec<String> = (0..n).map(|i| format!("S{i}")).collect();
        let folds = make_folds(&subjects, k, seed).unwrap();
        let mut all: Vec<String> = folds.iter().flat_map(|f| f.held_out.clone()).collect();
        all.sort();
        let mut expected = subjects.clone();
        expected.sort();
        prop_assert_eq!(all, expected);
        let sizes: Vec<usize> = folds.iter().map(|f| f.held_out.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }
}
