//! Round-trip and failure-mode tests for the dataset formats.

use linsub_cli::dataset_io::{
    read_binary, read_csv, write_binary, write_csv, DatasetIoError, FORMAT_VERSION, MAGIC,
};
use linsub_core::model::{DistractorSpec, TrajectoryDataset};
use linsub_core::simulator::{random_system, sample_batch, GenerationConfig};

fn sample_dataset() -> TrajectoryDataset {
    let cfg = GenerationConfig {
        d: 6,
        r: 2,
        l: 1,
        seed: 11,
        a_spectral_norm_target: 0.9,
        distractor: DistractorSpec::Polynomial {
            degree: 2,
            min_degree: 2,
            coeff_seed: 3,
            orthogonalize_linear: false,
        },
        noise_sigma: 0.0,
    };
    let system = random_system(&cfg).unwrap().system;
    sample_batch(&system, 7, 3, 21)
}

/// The on-disk formats carry everything except the generation attempt
/// counter, which is reconstructed as zero on import.
fn assert_content_identical(a: &TrajectoryDataset, b: &TrajectoryDataset) {
    assert_eq!(a.n, b.n);
    assert_eq!(a.horizon, b.horizon);
    assert_eq!(a.d, b.d);
    assert_eq!(a.l, b.l);
    assert_eq!(a.r_meta, b.r_meta);
    assert_eq!(a.seed, b.seed);
    assert_eq!(a.x, b.x, "x arrays must be bit-identical");
    assert_eq!(a.u, b.u, "u arrays must be bit-identical");
    assert_eq!(a.h, b.h, "h arrays must be bit-identical");
    assert_eq!(a.z, b.z, "z arrays must be bit-identical");
    assert_eq!(a.metadata.rng, b.metadata.rng);
    assert_eq!(a.metadata.noisy_one_step, b.metadata.noisy_one_step);
}

#[test]
fn binary_round_trip_is_bit_identical() {
    let ds = sample_dataset();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.lsd");
    write_binary(&ds, &path).unwrap();
    let back = read_binary(&path).unwrap();
    assert_content_identical(&ds, &back);
}

#[test]
fn csv_round_trip_is_bit_identical() {
    let ds = sample_dataset();
    let dir = tempfile::tempdir().unwrap();
    let csv_dir = dir.path().join("csv");
    write_csv(&ds, &csv_dir).unwrap();
    let back = read_csv(&csv_dir).unwrap();
    assert_content_identical(&ds, &back);
}

#[test]
fn csv_and_binary_agree_to_full_precision() {
    let ds = sample_dataset();
    let dir = tempfile::tempdir().unwrap();
    let bin_path = dir.path().join("data.lsd");
    let csv_dir = dir.path().join("csv");
    write_binary(&ds, &bin_path).unwrap();
    write_csv(&ds, &csv_dir).unwrap();
    let from_bin = read_binary(&bin_path).unwrap();
    let from_csv = read_csv(&csv_dir).unwrap();
    assert_content_identical(&from_bin, &from_csv);
}

#[test]
fn truncated_file_is_reported() {
    let ds = sample_dataset();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.lsd");
    write_binary(&ds, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    // Chop the file mid-way through the X array.
    let cut = bytes.len() / 2;
    std::fs::write(&path, &bytes[..cut]).unwrap();
    match read_binary(&path) {
        Err(DatasetIoError::TruncatedFile) => {}
        other => panic!("expected TruncatedFile, got {other:?}"),
    }
}

#[test]
fn bad_magic_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.lsd");
    std::fs::write(&path, b"NOPE0000000000000000000000000000").unwrap();
    match read_binary(&path) {
        Err(DatasetIoError::BadMagic) => {}
        other => panic!("expected BadMagic, got {other:?}"),
    }
}

#[test]
fn unsupported_version_is_reported() {
    let ds = sample_dataset();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.lsd");
    write_binary(&ds, &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let future = (FORMAT_VERSION + 1).to_le_bytes();
    bytes[MAGIC.len()..MAGIC.len() + 4].copy_from_slice(&future);
    std::fs::write(&path, &bytes).unwrap();
    match read_binary(&path) {
        Err(DatasetIoError::VersionUnsupported(v)) => assert_eq!(v, FORMAT_VERSION + 1),
        other => panic!("expected VersionUnsupported, got {other:?}"),
    }
}

#[test]
fn header_flags_reflect_optional_arrays() {
    let mut ds = sample_dataset();
    ds.h = None;
    ds.z = None;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.lsd");
    write_binary(&ds, &path).unwrap();
    let back = read_binary(&path).unwrap();
    assert!(back.h.is_none());
    assert!(back.z.is_none());
    assert_content_identical(&ds, &back);
}
