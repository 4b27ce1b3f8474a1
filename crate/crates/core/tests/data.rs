use std::collections::HashSet;

use dp_audit::data::{
    compute_class_weights, load_idx, load_raw, split_indices, synthetic_blobs, write_idx, write_raw, LabeledDataset,
    SplitSpec,
};
use dp_audit::Tensor;
use proptest::prelude::*;

fn labels_for(counts: &[usize]) -> Vec<usize> {
    // Interleave classes so that splits cannot succeed by position alone.
    let mut rest = counts.to_vec();
    let mut out = Vec::new();
    while rest.iter().any(|&r| r > 0) {
        for (c, r) in rest.iter_mut().enumerate() {
            if *r > 0 {
                *r -= 1;
                out.push(c);
            }
        }
    }
    out
}

fn dataset(counts: &[usize]) -> LabeledDataset {
    let labels = labels_for(counts);
    let n = labels.len();
    let images = Tensor::new(vec![n, 2, 2, 1], (0..4 * n).map(|i| (i % 251) as f64).collect()).unwrap();
    LabeledDataset::new(images, labels, LabeledDataset::numbered_classes(counts.len())).unwrap()
}

proptest! {
    #[test]
    fn split_is_a_stratified_partition(
        counts in prop::collection::vec(20usize..200, 2..5),
        seed in any::<u64>(),
    ) {
        let labels = labels_for(&counts);
        let spec = SplitSpec::new(0.8, 0.05, 0.15, seed);
        let s = split_indices(&labels, counts.len(), &spec).unwrap();
        let n = labels.len();
        let sizes = spec.sizes(n).unwrap();
        prop_assert_eq!([s.train.len(), s.validation.len(), s.test.len()], sizes);
        let all: HashSet<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        prop_assert_eq!(all.len(), n);
        for (part, size) in [(&s.train, sizes[0]), (&s.validation, sizes[1]), (&s.test, sizes[2])] {
            for (c, &nc) in counts.iter().enumerate() {
                let got = part.iter().filter(|&&i| labels[i] == c).count() as f64;
                let ideal = nc as f64 * size as f64 / n as f64;
                prop_assert!((got - ideal).abs() < 1.0 + 1e-9, "class {} got {} want ~{}", c, got, ideal);
            }
        }
        prop_assert_eq!(split_indices(&labels, counts.len(), &spec).unwrap(), s);
    }

    #[test]
    fn undersampling_hits_the_ratio(minor in 5usize..60, extra in 0usize..100, ratio in 1.0f64..2.0, seed in any::<u64>()) {
        let target = (ratio * minor as f64 + 1e-9).floor() as usize;
        let ds = dataset(&[minor, target + extra]);
        let u = ds.undersample(0, ratio, seed).unwrap();
        prop_assert_eq!(u.counts(), vec![minor, target]);
        prop_assert_eq!(u, ds.undersample(0, ratio, seed).unwrap());
    }

    #[test]
    fn class_weights_balance_total_mass(counts in prop::collection::vec(1usize..10_000, 1..6)) {
        let w = compute_class_weights(&counts).unwrap();
        let n: usize = counts.iter().sum();
        let mass: f64 = counts.iter().zip(w.as_slice()).map(|(&c, &wc)| c as f64 * wc).sum();
        prop_assert!((mass - n as f64).abs() < 1e-9 * n as f64);
        // Every class carries the same weighted mass N / k.
        for (&c, &wc) in counts.iter().zip(w.as_slice()) {
            prop_assert!((c as f64 * wc - n as f64 / counts.len() as f64).abs() < 1e-9 * n as f64);
        }
    }

    #[test]
    fn normalization_maps_bytes_into_unit_range(px in prop::collection::vec(0u8..=255, 4..64)) {
        let n = px.len() / 4;
        let images = Tensor::new(vec![n, 2, 2, 1], px[..4 * n].iter().map(|&b| b as f64).collect()).unwrap();
        let ds = LabeledDataset::new(images, vec![0; n], vec!["a".into()]).unwrap();
        let norm = ds.normalized().unwrap();
        for (a, b) in ds.images().data().iter().zip(norm.images().data()) {
            prop_assert!((0.0..=1.0).contains(b));
            prop_assert_eq!(*b, a / 255.0);
        }
    }
}

#[test]
fn imbalanced_pipeline_constants() {
    let ds = dataset(&[3616, 10192]);
    let u = ds.undersample(0, 1.5, 42).unwrap();
    assert_eq!(u.counts(), vec![3616, 5424]);
    assert_eq!(u.len(), 9040);
    let w = compute_class_weights(&[5424, 3616]).unwrap();
    assert_eq!(w.as_slice().iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>(), vec![0.83, 1.25]);
    assert_eq!(SplitSpec::new(0.8, 0.05, 0.15, 42).sizes(9040).unwrap(), [7232, 452, 1356]);
}

#[test]
fn file_formats_round_trip() {
    let ds = synthetic_blobs(&[7, 5, 3], 6, 5, 0.5, 20.0, 1);
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("i.idx.gz"), dir.path().join("l.idx"));
    write_idx(&ds, &img, &lab).unwrap();
    let back = load_idx(&img, &lab).unwrap();
    assert_eq!(back.images(), ds.images());
    assert_eq!(back.labels(), ds.labels());
    let raw = dir.path().join("d.raw");
    write_raw(&ds, &raw).unwrap();
    assert_eq!(load_raw(&raw).unwrap().images(), ds.images());
    std::fs::write(&raw, b"nope").unwrap();
    assert!(load_raw(&raw).is_err());
}

#[test]
fn bundled_digits_load() {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/digits/");
    let ds =
        load_idx(format!("{root}digits-images-idx3-ubyte.gz"), format!("{root}digits-labels-idx1-ubyte.gz")).unwrap();
    assert_eq!(ds.len(), 10_000);
    assert_eq!(ds.image_shape(), &[28, 28, 1]);
    assert_eq!(ds.num_classes(), 10);
    assert!(ds.counts().iter().all(|&c| c > 800));
}
