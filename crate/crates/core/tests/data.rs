use std::fs;

use proptest::prelude::*;

use kalmanopt::data::{batches, epoch_permutation, load_csv, make_gaussian_blobs, make_two_moons, BatchPlan, Dataset};
use kalmanopt::harness::content_hash;
use kalmanopt::Error;

fn indexed(n: usize) -> Dataset {
    let inputs = (0..n).flat_map(|i| [i as f64, -(i as f64)]).collect();
    Dataset::new(inputs, 2, (0..n).map(|i| (i % 2) as f64).collect(), "idx", 0).unwrap()
}

fn ids(ds: &Dataset) -> Vec<usize> {
    let mut v: Vec<usize> = (0..ds.len()).map(|i| ds.row(i)[0] as usize).collect();
    v.sort_unstable();
    v
}

proptest! {
    #[test]
    fn split_partitions_the_samples(n in 2usize..300, frac in 0.01..0.99f64, seed in any::<u64>()) {
        let ds = indexed(n);
        let (train, val) = ds.split(frac, seed).unwrap();
        prop_assert_eq!(train.len() + val.len(), n);
        prop_assert!(!train.is_empty() && !val.is_empty());
        let mut all = ids(&train);
        all.extend(ids(&val));
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(ds.split(frac, seed).unwrap(), (train, val));
    }

    #[test]
    fn batches_cover_the_epoch_permutation(n in 1usize..200, bs in 1usize..64, seed in any::<u64>(), epoch in 0u64..50, drop_last in any::<bool>()) {
        let bs = bs.min(n);
        let ds = indexed(n);
        let plan = BatchPlan { batch_size: bs, shuffle_seed: seed, drop_last };
        let got = batches(&ds, &plan, epoch).unwrap();
        prop_assert_eq!(got.len(), plan.batches_per_epoch(n));
        let seen: Vec<usize> = got.iter().flat_map(|b| (0..b.len()).map(|i| b.row(i)[0] as usize).collect::<Vec<_>>()).collect();
        let perm = epoch_permutation(n, seed, epoch);
        prop_assert_eq!(&seen[..], &perm[..seen.len()]);
        if !drop_last {
            prop_assert_eq!(seen.len(), n);
        }
        prop_assert!(got.iter().all(|b| b.len() <= bs));
    }

    #[test]
    fn csv_roundtrip_is_exact(raw in prop::collection::vec(-1e6..1e6f64, 3..90), seed in any::<u64>()) {
        let n = raw.len() / 3;
        let ds = Dataset::new(raw[..3 * n].to_vec(), 3, (0..n).map(|i| (i % 3) as f64).collect(), "rt", seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.csv");
        ds.write_csv(&path).unwrap();
        let back = load_csv(&path, "label").unwrap();
        prop_assert_eq!(back.len(), n);
        prop_assert_eq!(back.width(), 3);
        for i in 0..n {
            prop_assert_eq!(back.row(i), ds.row(i));
        }
        prop_assert_eq!(back.targets(), ds.targets());
    }
}

#[test]
fn epochs_use_independent_streams() {
    assert_eq!(epoch_permutation(50, 9, 3), epoch_permutation(50, 9, 3));
    assert_ne!(epoch_permutation(50, 9, 3), epoch_permutation(50, 9, 4));
    assert_ne!(epoch_permutation(50, 9, 3), epoch_permutation(50, 10, 3));
}

#[test]
fn generators_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    make_two_moons(200, 0.1, 42).unwrap().write_csv(&a).unwrap();
    make_two_moons(200, 0.1, 42).unwrap().write_csv(&b).unwrap();
    let (ba, bb) = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(content_hash(&ba), content_hash(&bb));
    assert_eq!(String::from_utf8(ba).unwrap().lines().count(), 201);
    assert_ne!(make_two_moons(200, 0.1, 42).unwrap(), make_two_moons(200, 0.1, 43).unwrap());

    let blobs = make_gaussian_blobs(300, 3, 0.5, 7).unwrap();
    assert_eq!(blobs, make_gaussian_blobs(300, 3, 0.5, 7).unwrap());
    for class in 0..3 {
        assert_eq!(blobs.targets().iter().filter(|&&t| t == class as f64).count(), 100);
    }
}

#[test]
fn moons_are_balanced() {
    let ds = make_two_moons(200, 0.1, 1).unwrap();
    assert_eq!(ds.targets().iter().filter(|&&t| t == 1.0).count(), 100);
    assert!(make_two_moons(201, 0.1, 1).is_err());
}

#[test]
fn csv_load_errors_carry_locations() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");

    fs::write(&path, "x0,x1,label\n1,2,0\n3,oops,1\n").unwrap();
    match load_csv(&path, "label") {
        Err(Error::Parse { line, column, .. }) => assert_eq!((line, column.as_str()), (3, "x1")),
        other => panic!("expected parse error, got {other:?}"),
    }

    fs::write(&path, "x0,x1,label\n1,2\n").unwrap();
    assert!(matches!(load_csv(&path, "label"), Err(Error::Parse { line: 2, .. })));

    fs::write(&path, "x0,x1,label\n1,inf,0\n").unwrap();
    assert!(matches!(load_csv(&path, "label"), Err(Error::Parse { .. })));

    fs::write(&path, "x0,x1,label\n1,2,0\n").unwrap();
    assert!(matches!(load_csv(&path, "target"), Err(Error::Parse { .. })));

    fs::write(&path, "x0,x1,label\n").unwrap();
    assert!(matches!(load_csv(&path, "label"), Err(Error::EmptyDataset { .. })));

    assert!(load_csv(&dir.path().join("missing.csv"), "label").is_err());
}

#[test]
fn label_column_may_be_anywhere() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.csv");
    fs::write(&path, "a, y ,b\n1.5,1,2.5\n-1,0,4\n").unwrap();
    let ds = load_csv(&path, "y").unwrap();
    assert_eq!(ds.width(), 2);
    assert_eq!(ds.row(0), &[1.5, 2.5]);
    assert_eq!(ds.targets(), &[1.0, 0.0]);
}

#[test]
fn bad_plans_and_splits_are_rejected() {
    let ds = indexed(10);
    for bs in [0, 11] {
        let plan = BatchPlan { batch_size: bs, shuffle_seed: 0, drop_last: false };
        assert!(batches(&ds, &plan, 0).is_err());
    }
    for frac in [0.0, 1.0, -0.1, f64::NAN] {
        assert!(ds.split(frac, 0).is_err());
    }
    assert!(indexed(1).split(0.5, 0).is_err());
}
