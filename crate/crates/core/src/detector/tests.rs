use std::collections::BTreeMap;

use ndarray::Array2;
use proptest::prelude::*;

use super::*;
use crate::corpus::Label;
use crate::embedding::EmbeddingKind;

const HOP: usize = 256;
const SR: u32 = 22050;

fn t() -> FrameTiming {
    FrameTiming {
        hop_length: HOP,
        sample_rate: SR,
    }
}

fn gram(n_frames: usize) -> MelPcenGram {
    MelPcenGram {
        frames: Array2::from_shape_fn((n_frames, 4), |(i, j)| ((i * 7 + j) % 11) as f32),
        hop_length: HOP,
        sample_rate: SR,
        source_path: "g.wav".into(),
    }
}

fn pos(start_frame: usize, end_frame: usize) -> AnnotationRow {
    AnnotationRow {
        audiofile: "g.wav".into(),
        start: t().seconds(start_frame as f64),
        end: t().seconds(end_frame as f64),
        labels: BTreeMap::from([("Q".to_string(), Label::Pos)]),
    }
}

#[test]
fn one_patch_events_give_one_positive_each() {
    let g = gram(400);
    let rows: Vec<_> = [1usize, 3, 5, 7, 9].iter().map(|&k| pos(17 * k, 17 * k + 17)).collect();
    let s = build_support(&g, &rows, 17).unwrap();
    assert_eq!(s.positive.len(), 5);
    // grid patches 0, 2, 4, 6, 8 are event-free and end before the last event
    assert_eq!(s.negative.len(), 5);
    assert_eq!(s.positive[0].len(), PATCH_LEN * 4);
}

#[test]
fn tiled_prefix_has_no_negatives() {
    let g = gram(400);
    let rows: Vec<_> = (0..5).map(|k| pos(34 * k, 34 * k + 34)).collect();
    let err = build_support(&g, &rows, 8).unwrap_err();
    assert!(err.to_string().contains("negative"), "{err}");
}

#[test]
fn support_needs_exactly_five_positive_rows() {
    let g = gram(400);
    let rows: Vec<_> = (0..4).map(|k| pos(40 * k + 20, 40 * k + 40)).collect();
    assert!(build_support(&g, &rows, 8).is_err());
    assert!(first_positive_events(&rows).is_err());
    let late = vec![pos(20, 40), pos(60, 80), pos(100, 120), pos(140, 160), pos(380, 420)];
    assert!(build_support(&g, &late, 8).is_err());
}

#[test]
fn first_events_are_sorted_by_start() {
    let rows = vec![pos(300, 320), pos(10, 30), pos(200, 220), pos(50, 60), pos(100, 130), pos(400, 410)];
    let got: Vec<f64> = first_positive_events(&rows).unwrap().iter().map(|r| r.start).collect();
    let want: Vec<f64> = [10usize, 50, 100, 200, 300].iter().map(|&f| t().seconds(f as f64)).collect();
    assert_eq!(got, want);
}

#[test]
fn short_event_gives_one_centered_patch() {
    let g = gram(400);
    let rows = vec![pos(100, 104), pos(150, 180), pos(200, 230), pos(250, 280), pos(300, 330)];
    let s = build_support(&g, &rows, 8).unwrap();
    let centered = patch_at(&g, 102 - 8, PATCH_LEN).into_flat();
    assert!(s.positive.contains(&centered));
}

/// Interval enumeration in whole frames: a grid patch `[s, s + 17)` is
/// positive when it shares at least 8.5 frames with a (long) event and
/// negative when it ends by the last event and shares none.
fn count_oracle(n_frames: usize, events: &[(usize, usize)], hop: usize) -> (usize, usize) {
    let end = events.iter().map(|e| e.1).max().unwrap();
    let (mut p, mut n) = (0, 0);
    for s in (0..=n_frames - PATCH_LEN).step_by(hop) {
        let ov = |e: &(usize, usize)| (s + PATCH_LEN).min(e.1).saturating_sub(s.max(e.0));
        if events.iter().any(|e| 2 * ov(e) >= PATCH_LEN) {
            p += 1;
        } else if s + PATCH_LEN <= end && events.iter().all(|e| ov(e) == 0) {
            n += 1;
        }
    }
    (p, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn support_counts_match_interval_enumeration(
        gaps in prop::collection::vec(1usize..60, 5),
        lens in prop::collection::vec(17usize..80, 5),
        hop in prop::sample::select(vec![4usize, 8, 17]),
    ) {
        let mut cursor = 0;
        let mut events = Vec::new();
        for (g, l) in gaps.iter().zip(&lens) {
            cursor += g;
            events.push((cursor, cursor + l));
            cursor += l;
        }
        let n_frames = cursor + 50;
        let rows: Vec<_> = events.iter().map(|&(a, b)| pos(a, b)).collect();
        let (p, n) = count_oracle(n_frames, &events, hop);
        match build_support(&gram(n_frames), &rows, hop) {
            Ok(s) => {
                prop_assert_eq!(s.positive.len(), p);
                prop_assert_eq!(s.negative.len(), n);
            }
            Err(_) => prop_assert!(p == 0 || n == 0),
        }
    }

    #[test]
    fn raising_threshold_never_adds_duration(
        ps in prop::collection::vec(0.0f64..1.0, 1..60),
        lo in 0.05f64..0.95,
        step in 0.0f64..0.5,
    ) {
        let probs: Vec<(usize, f64)> = ps.iter().enumerate().map(|(i, &p)| (8 * i, p)).collect();
        let total = |th: f64| {
            let cfg = DetectionConfig { prob_threshold: th, ..Default::default() };
            let evs = extract_events(&probs, t(), &cfg);
            for w in evs.windows(2) {
                assert!(w[0].end <= w[1].start);
            }
            evs.iter().map(|e| e.end - e.start).sum::<f64>()
        };
        let hi = (lo + step).min(0.99);
        prop_assert!(total(hi) <= total(lo) + 1e-12);
    }

    #[test]
    fn events_separated_by_a_low_patch(ps in prop::collection::vec(0.0f64..1.0, 1..60)) {
        let probs: Vec<(usize, f64)> = ps.iter().enumerate().map(|(i, &p)| (17 * i, p)).collect();
        let evs = extract_events(&probs, t(), &DetectionConfig::default());
        for w in evs.windows(2) {
            // with hop 17 the runs are disjoint intervals with a gap of at least one patch
            prop_assert!(w[1].start - w[0].end >= t().seconds(17.0) - 1e-12);
        }
        for e in &evs {
            prop_assert!(e.start < e.end && e.score >= 0.5 && e.score < 1.0);
        }
    }
}

#[test]
fn timing_of_a_three_patch_run() {
    let probs = vec![(0, 0.9), (8, 0.8), (16, 0.7), (24, 0.1)];
    let evs = extract_events(&probs, t(), &DetectionConfig::default());
    assert_eq!(evs.len(), 1);
    assert_eq!(evs[0].start, 0.0);
    assert!((evs[0].end - 33.0 * 256.0 / 22050.0).abs() < 1e-12);
    assert!((evs[0].end - 0.383129).abs() < 1e-6);
    assert!((evs[0].score - 0.8).abs() < 1e-12);
}

#[test]
fn overlapping_runs_are_clipped_apart() {
    let probs = vec![(0, 0.9), (8, 0.2), (16, 0.9)];
    let evs = extract_events(&probs, t(), &DetectionConfig::default());
    assert_eq!(evs.len(), 2);
    assert_eq!(evs[0].end, evs[1].start);
    assert_eq!(evs[1].end, t().seconds(33.0));
}

#[test]
fn below_threshold_gives_nothing() {
    let probs: Vec<_> = (0..10).map(|i| (8 * i, 0.49)).collect();
    assert!(extract_events(&probs, t(), &DetectionConfig::default()).is_empty());
}

#[test]
fn median_removes_isolated_spike() {
    let probs = vec![(0, 0.1), (8, 0.1), (16, 0.95), (24, 0.1), (32, 0.1)];
    let raw = extract_events(&probs, t(), &DetectionConfig::default());
    assert_eq!(raw.len(), 1);
    let cfg = DetectionConfig {
        median_filter_width: 3,
        ..Default::default()
    };
    assert!(extract_events(&probs, t(), &cfg).is_empty());
    assert_eq!(median_filter(&[1.0, 5.0, 2.0], 3), vec![1.0, 2.0, 2.0]);
}

#[test]
fn short_events_dropped_by_min_duration() {
    let probs = vec![(0, 0.9), (8, 0.1), (16, 0.9), (24, 0.9), (32, 0.9)];
    let cfg = DetectionConfig {
        min_event_duration: t().seconds(20.0),
        ..Default::default()
    };
    let evs = extract_events(&probs, t(), &cfg);
    assert_eq!(evs.len(), 1);
    assert_eq!(evs[0].start, t().seconds(16.0));
}

#[test]
fn config_validation() {
    assert!(DetectionConfig::default().validate().is_ok());
    for bad in [
        DetectionConfig { prob_threshold: 1.0, ..Default::default() },
        DetectionConfig { prob_threshold: 0.0, ..Default::default() },
        DetectionConfig { median_filter_width: 2, ..Default::default() },
        DetectionConfig { median_filter_width: 0, ..Default::default() },
        DetectionConfig { patch_hop: 0, ..Default::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

fn identity(dim: usize) -> EmbeddingModel {
    EmbeddingModel::from_weights(EmbeddingKind::Linear, Array2::eye(dim)).unwrap()
}

fn simple_support() -> Support {
    Support {
        positive: vec![vec![1.0, 0.0, 0.0]],
        negative: vec![vec![-1.0, 0.0, 0.0]],
        end_time: 0.0,
    }
}

#[test]
fn nearer_prototype_wins_and_ties_are_half() {
    let s = simple_support();
    let p = member_probabilities(&identity(3), &DistanceKernel::Euclidean, &s, &[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, -1.0]])
        .unwrap();
    assert!(p[0] > 0.5);
    assert_eq!(p[1], 0.5);
    assert_eq!(positive_probability(3.0, 3.0), 0.5);
}

#[test]
fn ensemble_is_mean_and_identical_members_are_transparent() {
    let s = simple_support();
    let q = vec![vec![0.3, 0.1, -0.2], vec![-0.7, 0.4, 0.0]];
    let a = (identity(3), DistanceKernel::Euclidean);
    let b = (
        EmbeddingModel::from_weights(EmbeddingKind::Logistic, Array2::eye(3) * 2.0).unwrap(),
        DistanceKernel::rbf(0.5).unwrap(),
    );
    let single = ensemble_probabilities(std::slice::from_ref(&a), &s, &q).unwrap();
    let twin = ensemble_probabilities(&[a.clone(), a.clone()], &s, &q).unwrap();
    assert_eq!(single, twin);
    let pa = member_probabilities(&a.0, &a.1, &s, &q).unwrap();
    let pb = member_probabilities(&b.0, &b.1, &s, &q).unwrap();
    let mixed = ensemble_probabilities(&[a, b], &s, &q).unwrap();
    for i in 0..2 {
        assert!((mixed[i] - 0.5 * (pa[i] + pb[i])).abs() < 1e-15);
    }
    assert!(ensemble_probabilities(&[], &s, &q).is_err());
}

#[test]
fn empty_support_side_is_rejected() {
    let mut s = simple_support();
    s.negative.clear();
    assert!(member_probabilities(&identity(3), &DistanceKernel::Euclidean, &s, &[vec![0.0; 3]]).is_err());
}

#[test]
fn queries_start_after_support() {
    let g = gram(600);
    let rows = vec![pos(20, 60), pos(80, 120), pos(140, 180), pos(200, 240), pos(260, 300)];
    let s = build_support(&g, &rows, 8).unwrap();
    let model = EmbeddingModel::from_weights(EmbeddingKind::Logistic, Array2::from_elem((3, PATCH_LEN * 4), 0.01)).unwrap();
    let probs = frame_probabilities(&[(model, DistanceKernel::Euclidean)], &g, &s, &DetectionConfig::default()).unwrap();
    assert_eq!(probs[0].0, 304);
    assert_eq!(probs.last().unwrap().0, 576);
    assert!(probs.windows(2).all(|w| w[1].0 == w[0].0 + 8));
}

#[test]
fn prediction_csv_has_six_decimals() {
    let rows = vec![("a.wav".to_string(), PredictedEvent { start: 0.0, end: 1.0 / 3.0, score: 0.6 })];
    let mut buf = Vec::new();
    write_predictions(&mut buf, &rows).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "Audiofilename,Starttime,Endtime\na.wav,0.000000,0.333333\n");
}
