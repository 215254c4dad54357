mod common;

use std::path::PathBuf;

use common::{rig_of, tube_rig};
use fishbone::deform::{apply_edit, Edit, Primitive};
use fishbone::rig::{extract, ExtractConfig};
use fishbone::rig_store::{load_rig, rig_from_bytes, rig_to_bytes, save_rig, MAGIC, VERSION};
use fishbone::shapes;
use fishbone::Error;
use sha2::{Digest, Sha256};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/small_tube.fbr")
}

fn small_tube() -> fishbone::rig::FishboneRig {
    rig_of(&shapes::tube(0.1, 1.0, 8, 13))
}

#[test]
fn save_then_load_is_identity() {
    let mut rig = tube_rig();
    // a posed rig, so current and rest arrays differ
    apply_edit(&mut rig, &Edit::ribs(0, vec![3], Primitive::UniformScale { s: 1.3 })).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tube.fbr");
    save_rig(&rig, &path).unwrap();
    let back = load_rig(&path).unwrap();
    assert_eq!(back, rig);
    for (a, b) in back.parts[0].vertices.iter().zip(&rig.parts[0].vertices) {
        for c in 0..3 {
            assert_eq!(a[c].to_bits(), b[c].to_bits());
        }
    }
    assert_eq!(back.parts[0].weights.rib.col_idx, rig.parts[0].weights.rib.col_idx);
    assert_eq!(rig_to_bytes(&back).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn multi_part_rig_round_trips() {
    let mut a = shapes::tube(0.1, 1.0, 8, 13);
    let b = shapes::icosphere(1);
    let off = a.vertices.len();
    a.vertices.extend(b.vertices.iter().map(|v| v + nalgebra::Vector3::new(3.0, 0.0, 0.0)));
    a.faces.extend(b.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
    let rig = rig_of(&a);
    assert_eq!(rig.parts.len(), 2);
    let back = rig_from_bytes(&rig_to_bytes(&rig).unwrap()).unwrap();
    assert_eq!(back, rig);
}

#[test]
fn wrong_version_is_rejected() {
    let mut bytes = rig_to_bytes(&small_tube()).unwrap();
    bytes[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
    match rig_from_bytes(&bytes) {
        Err(Error::Version { found, expected }) => {
            assert_eq!((found, expected), (VERSION + 1, VERSION));
        }
        other => panic!("expected a version error, got {other:?}"),
    }
}

#[test]
fn truncation_and_bit_flips_fail_integrity() {
    let bytes = rig_to_bytes(&small_tube()).unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    for cut in [9, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(rig_from_bytes(&bytes[..cut]), Err(Error::Integrity(_))),
            "truncated at {cut}"
        );
    }
    let mut flipped = bytes.clone();
    let i = bytes.len() / 2;
    flipped[i] ^= 0x10;
    assert!(matches!(rig_from_bytes(&flipped), Err(Error::Integrity(_))));
    let mut bad_magic = bytes;
    bad_magic[0] = b'X';
    assert!(matches!(rig_from_bytes(&bad_magic), Err(Error::Integrity(_))));
}

/// Re-sign a modified payload so the digest passes and the invariant suite
/// is what rejects it.
fn resign(bytes: &mut Vec<u8>) {
    bytes.truncate(bytes.len() - 32);
    let d = Sha256::digest(&bytes[..]);
    bytes.extend_from_slice(&d);
}

#[test]
fn invariant_violations_name_the_check() {
    let mut rig = small_tube();
    let v = rig.parts[0].weights.rib.values[0];
    rig.parts[0].weights.rib.values[0] = v + 0.25;
    let mut bytes = rig_to_bytes(&rig).unwrap();
    resign(&mut bytes);
    match rig_from_bytes(&bytes) {
        Err(Error::CorruptRig { check, .. }) => assert!(!check.is_empty()),
        other => panic!("expected a corrupt-rig error, got {other:?}"),
    }

    let mut rig = small_tube();
    let w = &mut rig.parts[0].weights.rib;
    let span = (0..w.rows).map(|i| w.row_span(i)).find(|s| s.len() >= 2).unwrap();
    w.col_idx.swap(span.start, span.start + 1);
    w.values.swap(span.start, span.start + 1);
    match rig_to_bytes(&rig) {
        Err(Error::CorruptRig { check, .. }) => assert_eq!(check, "weight_order"),
        other => panic!("expected a weight-order error on save, got {other:?}"),
    }
}

#[test]
fn provenance_regenerates_the_rig() {
    let mesh = common::raw(&shapes::tube(0.1, 1.0, 8, 13));
    let mut config = ExtractConfig::default();
    config.w_min = 0.02;
    let rig = extract(&mesh, &config, None).unwrap().0;
    let back = rig_from_bytes(&rig_to_bytes(&rig).unwrap()).unwrap();
    let again = extract(&mesh, &back.config, None).unwrap().0;
    assert_eq!(rig_to_bytes(&again).unwrap(), rig_to_bytes(&rig).unwrap());
}

/// The committed file must load, re-save to identical bytes, and match the
/// current extraction. Set FISHBONE_BLESS=1 to rewrite it.
#[test]
fn golden_rig_file() {
    let path = golden_path();
    let fresh = rig_to_bytes(&small_tube()).unwrap();
    if std::env::var_os("FISHBONE_BLESS").is_some() {
        std::fs::write(&path, &fresh).unwrap();
        std::fs::write(path.with_extension("sha256"), hex::encode(Sha256::digest(&fresh))).unwrap();
    }
    let golden = std::fs::read(&path).unwrap();
    let digest = std::fs::read_to_string(path.with_extension("sha256")).unwrap();
    assert_eq!(hex::encode(Sha256::digest(&golden)), digest.trim());
    let rig = rig_from_bytes(&golden).unwrap();
    assert_eq!(rig_to_bytes(&rig).unwrap(), golden);
    assert!(fresh == golden, "extraction no longer reproduces the golden rig");
}
