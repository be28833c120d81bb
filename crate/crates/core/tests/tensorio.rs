mod common;

use braintools::tensorio::{
    load_feature_series, load_manifest, load_mask, load_tensor, load_vector, save_feature_series,
    save_mask, save_tensor, save_vector, sidecar_path, FeatureMeta, FeatureSeries, NpyArray,
    NpyData, RoiMask, Split,
};
use braintools::{Error, Matrix};
use proptest::prelude::*;

proptest! {
    #[test]
    fn f64_matrix_round_trip(rows in 1usize..12, cols in 1usize..12, seed in any::<u64>()) {
        let mut r = common::rng(seed, "npy");
        let m = common::randn(&mut r, rows, cols);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.npy");
        save_tensor(&p, &m).unwrap();
        prop_assert_eq!(load_tensor(&p).unwrap(), m);
    }

    #[test]
    fn typed_arrays_round_trip(vals in prop::collection::vec(-1e6f64..1e6, 1..40)) {
        let n = vals.len();
        let arrays = [
            NpyData::F64(vals.clone()),
            NpyData::F32(vals.iter().map(|&v| v as f32).collect()),
            NpyData::I64(vals.iter().map(|&v| v as i64).collect()),
            NpyData::Bool(vals.iter().map(|&v| v > 0.0).collect()),
        ];
        for data in arrays {
            let a = NpyArray::new(vec![n], data).unwrap();
            let bytes = a.to_bytes();
            prop_assert_eq!(NpyArray::from_bytes(&bytes).unwrap(), a);
        }
    }
}

#[test]
fn header_is_aligned_to_64_bytes() {
    let a = NpyArray::new(vec![3, 2], NpyData::F64(vec![0.0; 6])).unwrap();
    let bytes = a.to_bytes();
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    assert_eq!((10 + hlen) % 64, 0);
    assert_eq!(bytes.len(), 10 + hlen + 48);
}

#[test]
fn row_major_layout_on_disk() {
    let m = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.npy");
    save_tensor(&p, &m).unwrap();
    let a = NpyArray::read(&p).unwrap();
    assert_eq!(a.shape, vec![2, 3]);
    assert_eq!(a.data, NpyData::F64(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
}

#[test]
fn truncated_file_is_a_format_error() {
    let a = NpyArray::new(vec![4], NpyData::F64(vec![1.0; 4])).unwrap();
    let bytes = a.to_bytes();
    let err = NpyArray::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err:?}");
    assert!(NpyArray::from_bytes(b"not an npy file").is_err());
}

#[test]
fn vectors_and_masks_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let v = vec![0.5, -1.25, 3.0];
    save_vector(dir.path().join("v.npy"), &v).unwrap();
    assert_eq!(load_vector(dir.path().join("v.npy")).unwrap(), v);
    let m = vec![true, false, true, true];
    save_mask(dir.path().join("m.npy"), &m).unwrap();
    assert_eq!(load_mask(dir.path().join("m.npy")).unwrap(), m);
}

#[test]
fn feature_sidecar_round_trip_and_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.npy");
    let s = FeatureSeries::new(Matrix::from_element(5, 2, 1.5), 10.0, 0.25, "layer_03").unwrap();
    save_feature_series(&p, &s, false).unwrap();
    assert!(sidecar_path(&p).exists());
    let fallback = FeatureMeta {
        sample_rate_hz: 1.0,
        t0_s: 9.0,
        name: String::new(),
        tr_aligned: false,
    };
    let (back, meta) = load_feature_series(&p, &fallback).unwrap();
    assert_eq!(back, s);
    assert_eq!(meta.sample_rate_hz, 10.0);

    std::fs::remove_file(sidecar_path(&p)).unwrap();
    let (bare, meta) = load_feature_series(&p, &fallback).unwrap();
    assert_eq!(meta.sample_rate_hz, 1.0);
    assert_eq!(bare.t0_s, 9.0);
    assert_eq!(bare.data, s.data);
}

#[test]
fn roi_mask_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("roi.json");
    assert!(RoiMask::new("AG", vec![4, 1, 7]).is_err());
    let roi = RoiMask::new("AG", vec![1, 4, 7]).unwrap();
    roi.save(&p).unwrap();
    let back = RoiMask::load(&p).unwrap();
    assert_eq!(back.label, "AG");
    assert_eq!(back.voxel_indices, vec![1, 4, 7]);
    assert!(back.validate_for(8).is_ok());
    assert!(back.validate_for(7).is_err());
}

#[test]
fn manifest_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    save_tensor(dir.path().join("f.npy"), &Matrix::zeros(4, 2)).unwrap();
    save_tensor(dir.path().join("y.npy"), &Matrix::zeros(4, 3)).unwrap();
    let text = r#"{"participant_id": "UTS01", "stories": [
        {"story_id": "a", "features": "f.npy", "fmri": "y.npy", "split": "test"}]}"#;
    std::fs::write(dir.path().join("m.json"), text).unwrap();
    let m = load_manifest(dir.path().join("m.json")).unwrap();
    assert_eq!(m.stories[0].split, Split::Test);
    assert_eq!(m.stories[0].fmri, dir.path().join("y.npy"));
}

#[test]
fn manifest_with_missing_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{"participant_id": "UTS01", "stories": [
        {"story_id": "a", "features": "nope.npy", "fmri": "y.npy", "split": "test"}]}"#;
    std::fs::write(dir.path().join("m.json"), text).unwrap();
    let err = load_manifest(dir.path().join("m.json")).unwrap_err();
    assert!(matches!(err, Error::Manifest(_)), "{err:?}");
}
