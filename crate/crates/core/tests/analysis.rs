mod common;

use common::*;
use lsk_core::analysis::{
    analyze, compute_rc, compute_selection_diff, load_dataset, mean_delta, read_diff_csv, read_rc_csv,
    write_diff_csv, write_mask_dir, write_rc_csv, AnalysisError,
};
use lsk_core::{ActivationRecord, MaskEntry, Tensor4};

const TOL: f64 = 1e-9;

fn masks(small: [f64; 4], large: [f64; 4]) -> Tensor4<f64> {
    let mut data = small.to_vec();
    data.extend_from_slice(&large);
    Tensor4::new([1, 2, 2, 2], data).unwrap()
}

/// Two images of one category, three blocks each, RF `[5, 23]`.
fn fixture() -> Vec<lsk_core::analysis::ImageSample<f64>> {
    let a = sample(
        "a",
        &square_box("ship", 3.0),
        vec![5, 23],
        vec![
            (1, 1, masks([0.1, 0.2, 0.3, 0.4], [0.5; 4])),
            (1, 2, masks([0.5; 4], [0.5; 4])),
            (2, 1, masks([0.9; 4], [0.1; 4])),
        ],
    );
    let b = sample(
        "b",
        &format!("imagesource:synthetic\n{}{}", square_box("ship", 1.0), square_box("ship", 1.0)),
        vec![5, 23],
        vec![
            (1, 1, masks([0.0; 4], [1.0; 4])),
            (1, 2, masks([0.2; 4], [0.4; 4])),
            (2, 1, masks([0.6; 4], [0.2; 4])),
        ],
    );
    vec![a, b]
}

#[test]
fn rc_matches_hand_computation() {
    // image a: 5·(1.0 + 2.0 + 3.6) + 23·(2.0 + 2.0 + 0.4) = 33 + 101.2 = 134.2, area 9
    // image b: 5·(0 + 0.8 + 2.4) + 23·(4.0 + 1.6 + 0.8) = 16 + 147.2 = 163.2, area 2
    let stats = compute_rc(&fixture(), "ship").unwrap();
    let expected = (134.2 / 9.0 + 163.2 / 2.0) / 2.0;
    assert!((stats.r_c_raw - expected).abs() < TOL, "{} vs {expected}", stats.r_c_raw);
    assert_eq!(stats.image_count, 2);
    assert_eq!(stats.r_c_normalized, 1.0);
}

#[test]
fn selection_diff_matches_hand_computation() {
    // per-block mean of larger − smaller, averaged over the two images
    let raw = [(0.25 + 1.0) / 2.0, (0.0 + 0.2) / 2.0, (-0.8 - 0.4) / 2.0];
    let abs = [(0.25 + 1.0) / 2.0, (0.0 + 0.2) / 2.0, (0.8 + 0.4) / 2.0];
    let diffs = compute_selection_diff(&fixture(), "ship").unwrap();
    assert_eq!(diffs.iter().map(|d| d.block_key()).collect::<Vec<_>>(), ["B_1_1", "B_1_2", "B_2_1"]);
    let (lo, hi) = (raw[2], raw[0]);
    for (d, (&r, &a)) in diffs.iter().zip(raw.iter().zip(&abs)) {
        assert!((d.delta_raw - r).abs() < TOL);
        assert!((d.delta_abs - a).abs() < TOL);
        assert!((d.delta_normalized - (r - lo) / (hi - lo)).abs() < TOL);
    }
    assert!((mean_delta(&diffs) - raw.iter().sum::<f64>() / 3.0).abs() < TOL);
}

#[test]
fn results_ignore_sample_order() {
    let mut samples = fixture();
    samples.extend(biased_fixture(3, 3, 0.2, 0.05));
    let a = analyze(&samples).unwrap();
    samples.reverse();
    let b = analyze(&samples).unwrap();
    for (x, y) in a.stats.iter().zip(&b.stats) {
        assert_eq!(x.category, y.category);
        assert!((x.r_c_raw - y.r_c_raw).abs() < TOL);
    }
    for (x, y) in a.diffs.iter().zip(&b.diffs) {
        assert_eq!((x.category.as_str(), x.stage, x.depth), (y.category.as_str(), y.stage, y.depth));
        assert!((x.delta_raw - y.delta_raw).abs() < TOL);
    }
}

#[test]
fn mask_and_box_scaling_laws() {
    let base = compute_rc(&fixture(), "ship").unwrap().r_c_raw;
    let lambda = 0.3;
    let scaled: Vec<_> = fixture()
        .into_iter()
        .map(|mut s| {
            for e in &mut s.record.entries {
                e.masks = e.masks.map(|v| v * lambda);
            }
            s
        })
        .collect();
    assert!((compute_rc(&scaled, "ship").unwrap().r_c_raw - lambda * base).abs() < TOL);

    let stretched: Vec<_> = fixture()
        .into_iter()
        .map(|mut s| {
            for b in &mut s.annotations.boxes {
                for v in &mut b.vertices {
                    *v = (v.0 * 2.0, v.1 * 2.0);
                }
            }
            s
        })
        .collect();
    assert!((compute_rc(&stretched, "ship").unwrap().r_c_raw - base / 4.0).abs() < TOL);
}

#[test]
fn biased_fixture_orders_categories_by_construction() {
    for seed in 0..5 {
        let report = analyze(&biased_fixture(seed, 6, 0.3, 0.1)).unwrap();
        let mean = |cat: &str| {
            let d: Vec<_> = report.diffs.iter().filter(|d| d.category == cat).cloned().collect();
            mean_delta(&d)
        };
        assert!(mean("needs-context") > 0.0);
        assert!(mean("local-texture") < 0.0);
        assert!(mean("needs-context") > mean("local-texture"));
        assert_eq!(report.stats.len(), 2);
    }
}

#[test]
fn zero_masks_give_zero_ratio() {
    let s = sample("z", &square_box("car", 2.0), vec![5, 23], vec![(1, 1, masks([0.0; 4], [0.0; 4]))]);
    let r = analyze(&[s]).unwrap();
    assert_eq!(r.stats[0].r_c_raw, 0.0);
}

#[test]
fn ineligible_images_are_reported() {
    let mixed = sample(
        "m",
        &format!("{}{}", square_box("car", 2.0), square_box("ship", 2.0)),
        vec![5, 23],
        vec![(1, 1, masks([0.5; 4], [0.5; 4]))],
    );
    let flat = sample("f", "0 0 1 1 2 2 3 3 plane 0\n", vec![5, 23], vec![(1, 1, masks([0.5; 4], [0.5; 4]))]);
    let r = analyze(&[mixed, flat]).unwrap();
    assert!(r.stats.is_empty());
    // the degenerate polygon is dropped at parse time, leaving no boxes at all
    assert_eq!(r.notices, vec!["2 image(s) without exactly one category were left out".to_string()]);
    assert!(matches!(compute_rc::<f64>(&[], "car"), Err(AnalysisError::NoEligibleImages(_))));
}

#[test]
fn three_branch_plans_skip_selection_difference() {
    let m = Tensor4::full([1, 3, 2, 2], 0.5);
    let s = sample("t", &square_box("car", 2.0), vec![3, 11, 29], vec![(1, 1, m)]);
    let r = analyze(&[s]).unwrap();
    assert_eq!(r.stats.len(), 1);
    assert!(r.diffs.is_empty());
    assert!(r.notices.iter().any(|n| n.contains("3 branches")));
}

#[test]
fn csv_round_trip() {
    let report = analyze(&biased_fixture(1, 4, 0.2, 0.05)).unwrap();
    let mut rc = Vec::new();
    write_rc_csv(&mut rc, &report.stats).unwrap();
    let mut diff = Vec::new();
    write_diff_csv(&mut diff, &report.diffs).unwrap();
    assert!(String::from_utf8_lossy(&rc).starts_with("category,r_c_raw,r_c_norm,images\n"));
    assert!(String::from_utf8_lossy(&diff).starts_with("category,block,delta_raw,delta_norm,delta_abs\n"));
    let back = read_rc_csv(&rc[..]).unwrap();
    assert_eq!(back.len(), report.stats.len());
    for (a, b) in back.iter().zip(&report.stats) {
        assert_eq!(a.r_c_raw, b.r_c_raw);
    }
    assert_eq!(read_diff_csv(&diff[..]).unwrap().len(), report.diffs.len());
}

#[test]
fn dataset_directory_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let masks_root = root.path().join("masks");
    let ann = root.path().join("ann");
    std::fs::create_dir_all(&ann).unwrap();

    let samples = biased_fixture(2, 2, 0.3, 0.1);
    for s in &samples {
        let mut rec = ActivationRecord::<f32>::new(s.record.rf.clone());
        for e in &s.record.entries {
            rec.entries.push(MaskEntry {
                stage: e.stage,
                depth: e.depth,
                masks: e.masks.cast(),
            });
        }
        let files = write_mask_dir(&masks_root.join(&s.name), &rec).unwrap();
        assert_eq!(files.len(), 7);
        let b = &s.annotations.boxes[0];
        let side = b.vertices[1].0;
        std::fs::write(ann.join(format!("{}.txt", s.name)), square_box(&b.category, side) + "1 2 3 4 ship\n").unwrap();
    }
    std::fs::write(ann.join("orphan.txt"), square_box("ship", 1.0)).unwrap();

    let data = load_dataset(&masks_root, &ann).unwrap();
    assert_eq!(data.samples.len(), samples.len());
    assert_eq!(data.unmatched_annotations, vec!["orphan".to_string()]);
    assert_eq!(data.malformed_lines, samples.len());

    let from_disk = analyze(&data.samples).unwrap();
    let in_memory = analyze(&samples).unwrap();
    for (a, b) in from_disk.diffs.iter().zip(&in_memory.diffs) {
        assert!((a.delta_raw - b.delta_raw).abs() < 1e-6);
    }
    for (a, b) in from_disk.stats.iter().zip(&in_memory.stats) {
        assert!((a.r_c_raw - b.r_c_raw).abs() / b.r_c_raw < 1e-5);
    }

    std::fs::remove_file(ann.join("needs-context-0.txt")).unwrap();
    assert!(load_dataset(&masks_root, &ann).is_err());
}
