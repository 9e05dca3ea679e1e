use std::fs;

use skelbench::datagen::{gen_dataset, gen_pairs, ingest_dir, split_dataset, DatagenError, DatasetSpec, Manifest};
use skelbench::mask::{connected_components, save_png, BinaryMask};

fn spec() -> DatasetSpec {
    DatasetSpec { count: 12, size: 32, seed: 8, ..DatasetSpec::default() }
}

#[test]
fn disk_round_trip_matches_memory() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_dataset(&spec(), dir.path()).unwrap();
    let pairs = gen_pairs(&spec()).unwrap();
    let loaded = ingest_dir(&dir.path().join("img"), Some(&dir.path().join("gt"))).unwrap();
    assert_eq!(loaded.len(), pairs.len());
    for ((s, p), e) in loaded.iter().zip(&pairs).zip(&manifest.files) {
        assert_eq!(s.stem, e.stem);
        assert_eq!(s.shape, p.shape);
        assert_eq!(s.skeleton.as_ref(), Some(&p.skeleton));
        assert!(p.skeleton.is_subset_of(&p.shape));
        assert_eq!(connected_components(&p.shape).count, 1);
    }
    let on_disk: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk, manifest);
}

#[test]
fn generation_is_byte_stable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen_dataset(&spec(), a.path()).unwrap();
    gen_dataset(&spec(), b.path()).unwrap();
    for sub in ["img/0000.png", "gt/0007.png", "manifest.json"] {
        assert_eq!(fs::read(a.path().join(sub)).unwrap(), fs::read(b.path().join(sub)).unwrap(), "{sub}");
    }
}

#[test]
fn pairing_errors() {
    let dir = tempfile::tempdir().unwrap();
    gen_dataset(&spec(), dir.path()).unwrap();
    let (img, gt) = (dir.path().join("img"), dir.path().join("gt"));
    fs::remove_file(gt.join("0003.png")).unwrap();
    match ingest_dir(&img, Some(&gt)) {
        Err(DatagenError::MissingPair { stem, missing_in }) => assert_eq!((stem.as_str(), missing_in), ("0003", gt.clone())),
        other => panic!("{other:?}"),
    }
    save_png(&BinaryMask::new(16, 32), gt.join("0003.png")).unwrap();
    assert!(matches!(ingest_dir(&img, Some(&gt)), Err(DatagenError::DimensionMismatch { .. })));
    // Shapes alone still load.
    assert_eq!(ingest_dir(&img, None).unwrap().len(), 12);
    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(ingest_dir(empty.path(), None), Err(DatagenError::EmptyDirectory(_))));
}

#[test]
fn split_is_seeded() {
    let items: Vec<usize> = (0..200).collect();
    let (train, hold) = split_dataset(&items, 0.8, 42).unwrap();
    assert_eq!((train.len(), hold.len()), (160, 40));
    assert_eq!(split_dataset(&items, 0.8, 42).unwrap(), (train.clone(), hold));
    assert_ne!(split_dataset(&items, 0.8, 43).unwrap().0, train);
}
