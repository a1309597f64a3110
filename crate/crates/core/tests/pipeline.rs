//! Two-stage training, classification and bundle persistence.

use texdesc::features::DescriptorConfig;
use texdesc::patchio::{Dataset, Density, DensitySel, Label, PatchRecord};
use texdesc::pipeline::{
    classify, decode_bundle, encode_bundle, fit_stage, train_pipeline, PredictedLabel, TrainOptions, BUNDLE_MAGIC,
};
use texdesc::synth::{generate_sized, Texture};
use texdesc::Error;

const SIDE: usize = 32;

fn texture_for(label: Label, i: usize) -> Texture {
    match label {
        Label::Normal => Texture::Smooth,
        Label::Benign => Texture::Grating { degrees: if i.is_multiple_of(2) { 0 } else { 45 } },
        Label::Malignant => Texture::Star,
    }
}

fn records(density: Density, counts: [(Label, usize); 3], seed: u64) -> Vec<PatchRecord> {
    let mut out = Vec::new();
    for (label, n) in counts {
        for i in 0..n {
            let s = seed.wrapping_mul(1000) + out.len() as u64;
            out.push(PatchRecord {
                id: format!("{density}_{label}_{i:03}.png"),
                patch: generate_sized(texture_for(label, i), s, SIDE),
                density,
                label,
            });
        }
    }
    out
}

fn full(density: Density, seed: u64) -> Vec<PatchRecord> {
    records(density, [(Label::Normal, 12), (Label::Benign, 8), (Label::Malignant, 8)], seed)
}

fn opts() -> TrainOptions {
    TrainOptions { cap: Some(40), ..TrainOptions::default() }
}

fn cfg() -> DescriptorConfig {
    DescriptorConfig::pbdct(0.5)
}

#[test]
fn separable_stage_fits_training_data() {
    let ds = Dataset::new(full(Density::D, 1)).unwrap();
    let m = texdesc::features::extract_dataset(&ds, &cfg()).unwrap();
    let labels: Vec<bool> = ds.iter().map(|r| r.label.is_abnormal()).collect();
    let fit = fit_stage(m.values.view(), &labels, &opts(), 3).unwrap();
    assert!(fit.search.chosen_size >= 5 && fit.search.chosen_size <= 40);
    for (i, &y) in labels.iter().enumerate() {
        let s = fit.score_row(m.values.row(i).as_slice().unwrap()).unwrap();
        assert_eq!(s >= 0.0, y, "row {i} score {s}");
    }
}

#[test]
fn classification_routes_through_both_stages() {
    let ds = Dataset::new(full(Density::D, 2)).unwrap();
    let bundle = train_pipeline(&ds, DensitySel::D, &cfg(), &opts(), 9).unwrap();
    assert!(bundle.warnings.is_empty());
    assert!(bundle.stage2.is_some());

    let normal = classify(&bundle, &generate_sized(Texture::Smooth, 777, SIDE)).unwrap();
    assert_eq!(normal.label, PredictedLabel::Normal);
    assert!(normal.stage1_score < 0.0);
    assert_eq!(normal.stage2_score, None);

    let star = classify(&bundle, &generate_sized(Texture::Star, 778, SIDE)).unwrap();
    assert_eq!(star.label, PredictedLabel::Malignant);
    assert!(star.stage1_score >= 0.0);
    assert!(star.stage2_score.unwrap() >= 0.0);

    let grating = classify(&bundle, &generate_sized(Texture::Grating { degrees: 0 }, 779, SIDE)).unwrap();
    assert_eq!(grating.label, PredictedLabel::Benign);
    assert!(grating.stage2_score.unwrap() < 0.0);
}

#[test]
fn missing_malignant_records_leave_stage_two_absent() {
    let recs = records(Density::E, [(Label::Normal, 10), (Label::Benign, 10), (Label::Malignant, 1)], 3);
    let ds = Dataset::new(recs).unwrap();
    let bundle = train_pipeline(&ds, DensitySel::E, &cfg(), &opts(), 0).unwrap();
    assert!(bundle.stage2.is_none());
    assert_eq!(bundle.warnings.len(), 1);
    assert!(bundle.warnings[0].contains("1 malignant"), "{}", bundle.warnings[0]);

    let c = classify(&bundle, &generate_sized(Texture::Grating { degrees: 45 }, 55, SIDE)).unwrap();
    assert_eq!(c.label, PredictedLabel::Abnormal);
    assert_eq!(c.label.as_str(), "abnormal");
    assert_eq!(c.stage2_score, None);

    let back = decode_bundle(&encode_bundle(&bundle).unwrap()).unwrap();
    assert_eq!(back, bundle);
}

#[test]
fn training_sees_only_the_requested_density() {
    let mut mixed = full(Density::F, 4);
    mixed.extend(full(Density::G, 5));
    let mixed = Dataset::new(mixed).unwrap();
    let alone = Dataset::new(full(Density::F, 4)).unwrap();
    let a = encode_bundle(&train_pipeline(&mixed, DensitySel::F, &cfg(), &opts(), 7).unwrap()).unwrap();
    let b = encode_bundle(&train_pipeline(&alone, DensitySel::F, &cfg(), &opts(), 7).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn bundle_bytes_are_deterministic_and_round_trip() {
    let ds = Dataset::new(full(Density::G, 6)).unwrap();
    let one = train_pipeline(&ds, DensitySel::G, &cfg(), &opts(), 11).unwrap();
    let two = train_pipeline(&ds, DensitySel::G, &cfg(), &opts(), 11).unwrap();
    let bytes = encode_bundle(&one).unwrap();
    assert_eq!(bytes, encode_bundle(&two).unwrap());
    assert_eq!(&bytes[..4], BUNDLE_MAGIC);

    let back = decode_bundle(&bytes).unwrap();
    assert_eq!(back, one);
    for (i, r) in ds.iter().enumerate().step_by(5) {
        let x = classify(&one, &r.patch).unwrap();
        let y = classify(&back, &r.patch).unwrap();
        assert_eq!(x.stage1_score.to_bits(), y.stage1_score.to_bits(), "record {i}");
        assert_eq!(x.stage2_score.map(f64::to_bits), y.stage2_score.map(f64::to_bits));
    }

    for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
        match decode_bundle(&bytes[..cut]) {
            Err(Error::Format { offset, .. }) => assert!(offset <= cut, "cut {cut} offset {offset}"),
            other => panic!("cut {cut}: {other:?}"),
        }
    }

    let mut long = bytes.clone();
    long.push(0);
    match decode_bundle(&long) {
        Err(Error::Format { offset, message }) => {
            assert_eq!(offset, bytes.len());
            assert!(message.contains("trailing"));
        }
        other => panic!("{other:?}"),
    }

    let mut future = bytes;
    future[4..6].copy_from_slice(&99u16.to_le_bytes());
    assert!(matches!(decode_bundle(&future), Err(Error::Version { found: 99, .. })));
}

#[test]
fn bundle_rejects_features_from_another_descriptor() {
    let ds = Dataset::new(full(Density::D, 8)).unwrap();
    let bundle = train_pipeline(&ds, DensitySel::D, &cfg(), &opts(), 1).unwrap();
    let fv = DescriptorConfig::pbdct(0.25).extract(&ds.records()[0].patch).unwrap();
    let err = texdesc::pipeline::classify_features(&bundle, &fv).unwrap_err();
    assert_eq!(err.kind(), "config");
}

#[test]
fn single_class_slice_is_a_training_error() {
    let ds = Dataset::new(records(Density::D, [(Label::Normal, 6), (Label::Benign, 0), (Label::Malignant, 0)], 9)).unwrap();
    let err = train_pipeline(&ds, DensitySel::D, &cfg(), &opts(), 0).unwrap_err();
    assert_eq!(err.kind(), "training");
    let err = train_pipeline(&ds, DensitySel::G, &cfg(), &opts(), 0).unwrap_err();
    assert_eq!(err.kind(), "training");
}
