mod support;

use mmfed_core::dataio::{
    decode_dataset, encode_dataset, extract_patches, generate_synthetic, load_dataset, partition_noniid,
    save_dataset, SceneDataset, SynthConfig,
};
use mmfed_core::numkit::Tensor;
use support::oracle;

#[test]
fn hex_fixture_loads() {
    let mut bytes = b"FDSC1 2 2 1 1 2\n".to_vec();
    let a = [1.0f32, 2.0, 3.0, 4.0];
    let b = [0.5f32, -0.5, 0.25, -0.25];
    for v in a.iter().chain(&b) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for l in [0u32, 1, 2, 1] {
        bytes.extend_from_slice(&l.to_le_bytes());
    }
    assert_eq!(&bytes[16..20], &[0x00, 0x00, 0x80, 0x3f]);
    let ds = decode_dataset(&bytes).unwrap();
    assert_eq!((ds.height, ds.width, ds.classes), (2, 2, 2));
    assert_eq!(ds.a.data(), &a);
    assert_eq!(ds.b.data(), &b);
    assert_eq!(ds.labels, vec![0, 1, 2, 1]);
    assert_eq!(encode_dataset(&ds), bytes);
}

#[test]
fn file_round_trip_is_bitwise() {
    let ds = generate_synthetic(&SynthConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.fdsc");
    save_dataset(&ds, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), ds);
    assert_eq!(std::fs::read(&path).unwrap(), encode_dataset(&ds));
}

#[test]
fn generation_is_seeded_and_noise_free_classes_are_constant() {
    let cfg = SynthConfig::default();
    assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
    let clean = generate_synthetic(&SynthConfig { noise: 0.0, ..cfg }).unwrap();
    let (ca, cb) = (clean.channels_a(), clean.channels_b());
    for k in 1..=clean.classes as u32 {
        let px: Vec<usize> = (0..clean.labels.len()).filter(|&i| clean.labels[i] == k).collect();
        assert!(!px.is_empty());
        for &i in &px {
            assert_eq!(clean.a.data()[i * ca..(i + 1) * ca], clean.a.data()[px[0] * ca..(px[0] + 1) * ca]);
            assert_eq!(clean.b.data()[i * cb..(i + 1) * cb], clean.b.data()[px[0] * cb..(px[0] + 1) * cb]);
        }
    }
}

/// Nearest class-mean accuracy on the selected channel groups.
fn nearest_mean_accuracy(ds: &SceneDataset, use_a: bool, use_b: bool) -> f64 {
    let (ca, cb) = (ds.channels_a(), ds.channels_b());
    let feat = |i: usize| {
        let mut f = Vec::new();
        if use_a {
            f.extend(ds.a.data()[i * ca..(i + 1) * ca].iter().map(|&v| v as f64));
        }
        if use_b {
            f.extend(ds.b.data()[i * cb..(i + 1) * cb].iter().map(|&v| v as f64));
        }
        f
    };
    let labelled: Vec<usize> = (0..ds.labels.len()).filter(|&i| ds.labels[i] > 0).collect();
    let dim = feat(0).len();
    let mut means = vec![vec![0.0; dim]; ds.classes];
    let mut counts = vec![0usize; ds.classes];
    for &i in &labelled {
        let k = ds.labels[i] as usize - 1;
        counts[k] += 1;
        for (m, v) in means[k].iter_mut().zip(feat(i)) {
            *m += v;
        }
    }
    for (m, &n) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= n as f64);
    }
    let correct = labelled
        .iter()
        .filter(|&&i| {
            let f = feat(i);
            let dist = |m: &Vec<f64>| m.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = (0..ds.classes).min_by(|&x, &y| dist(&means[x]).total_cmp(&dist(&means[y]))).unwrap();
            best + 1 == ds.labels[i] as usize
        })
        .count();
    correct as f64 / labelled.len() as f64
}

#[test]
fn only_the_pair_of_modalities_separates_all_classes() {
    let ds = generate_synthetic(&SynthConfig::default()).unwrap();
    assert_eq!((ds.height, ds.width, ds.classes), (64, 64, 6));
    let both = nearest_mean_accuracy(&ds, true, true);
    let a = nearest_mean_accuracy(&ds, true, false);
    let b = nearest_mean_accuracy(&ds, false, true);
    assert!(both >= 0.95, "both {both}");
    assert!(a <= 0.90 && b <= 0.90, "a {a}, b {b}");
}

#[test]
fn corner_patch_mirrors_indices() {
    let ds = generate_synthetic(&SynthConfig {
        margin: 0.0,
        ..SynthConfig::default()
    })
    .unwrap();
    let window = 8;
    let samples = extract_patches(&ds, window).unwrap();
    let s = samples.iter().find(|s| s.row == 0 && s.col == 0).expect("corner is labelled");
    let (h, w, ca) = (ds.height, ds.width, ds.channels_a());
    let off = (window / 2) as isize;
    let mut want = Vec::new();
    for di in 0..window as isize {
        for dj in 0..window as isize {
            let (r, c) = (oracle::mirror(di - off, h), oracle::mirror(dj - off, w));
            want.extend_from_slice(&ds.a.data()[(r * w + c) * ca..(r * w + c + 1) * ca]);
        }
    }
    assert_eq!(s.a, Tensor::new(&[window, window, ca], want).unwrap());
}

#[test]
fn background_only_scene_has_no_patches() {
    let ds = SceneDataset::new(2, Tensor::zeros(&[4, 4, 2]), Tensor::zeros(&[4, 4, 1]), vec![0; 16]).unwrap();
    assert!(extract_patches(&ds, 3).unwrap().is_empty());
}

#[test]
fn near_uniform_dirichlet_gives_balanced_shards() {
    let classes = 4;
    let labels: Vec<usize> = (0..4000).map(|i| i % classes + 1).collect();
    for seed in 0..20 {
        let parts = partition_noniid(&labels, 4, 1000.0, seed).unwrap();
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for p in &parts {
            let mut hist = vec![0usize; classes];
            p.iter().for_each(|&i| hist[labels[i] - 1] += 1);
            let uniform = p.len() as f64 / classes as f64;
            for &n in &hist {
                assert!((n as f64 - uniform).abs() <= 0.1 * uniform, "seed {seed}: {hist:?}");
            }
        }
    }
}
