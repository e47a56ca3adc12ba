mod common;

use std::fs;

use common::*;
use daenr::data::{load_region, preprocess, split, synth_lnp, GrayImage, SynthConfig};
use daenr::metrics::{correlation_p_value, pearson};
use daenr::tensor::{read_archive_file, write_archive_file, Tensor};
use daenr::Error;
use proptest::prelude::*;

#[test]
fn uninformative_neurons_ignore_the_stimulus() {
    let ds = synth_lnp(&SynthConfig {
        n_neurons: 40,
        n_train: 500,
        n_test: 5,
        repeats: 2,
        informative_fraction: 0.0,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    assert!(ds
        .ground_truth_informative
        .as_ref()
        .unwrap()
        .iter()
        .all(|&b| !b));
    // Correlate each neuron with the stimulus projection that would drive a
    // centred vertical Gabor cell.
    let px = 32 * 32;
    let probe = daenr::data::gabor((15.5, 15.5), 0.0, 0.12, 3.0, 0.0);
    let drive: Vec<f64> = (0..500)
        .map(|i| {
            let x = &ds.train_stimuli.data()[i * px..(i + 1) * px];
            probe.iter().zip(x).map(|(a, &b)| a * b as f64).sum()
        })
        .collect();
    let m = ds.n_neurons();
    let quiet = (0..m)
        .filter(|&j| {
            let s: Vec<f64> = (0..500)
                .map(|i| ds.train_responses.data()[i * m + j] as f64)
                .collect();
            correlation_p_value(pearson(&drive, &s), 500) > 0.05
        })
        .count();
    assert!(quiet as f64 >= 0.9 * m as f64, "{quiet} of {m}");
}

#[test]
fn informative_neurons_track_their_filters() {
    let ds = tiny_region(4, 20, 400);
    let gt = ds.ground_truth_informative.clone().unwrap();
    let m = ds.n_neurons();
    // Informative neurons vary far more across stimuli than their Poisson
    // noise alone would explain (variance/mean ratio well above 1).
    let dispersion = |j: usize| {
        let s: Vec<f64> = (0..400)
            .map(|i| ds.train_responses.data()[i * m + j] as f64)
            .collect();
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (s.len() as f64 - 1.0) / mean.max(1e-9)
    };
    let inf: Vec<f64> = (0..m).filter(|&j| gt[j]).map(dispersion).collect();
    let uninf: Vec<f64> = (0..m).filter(|&j| !gt[j]).map(dispersion).collect();
    assert!(inf.iter().all(|&d| d > 1.3), "{inf:?}");
    assert!(uninf.iter().all(|&d| d < 1.3), "{uninf:?}");
}

#[test]
fn seeded_synthesis_gives_identical_archives() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        n_neurons: 5,
        n_train: 10,
        n_test: 4,
        repeats: 2,
        seed: 9,
        ..SynthConfig::default()
    };
    let a = synth_lnp(&cfg).unwrap().save(dir.path().join("a")).unwrap();
    let b = synth_lnp(&cfg).unwrap().save(dir.path().join("b")).unwrap();
    for f in [
        "train_stimuli.tensor",
        "train_responses.tensor",
        "test_stimuli.tensor",
        "test_responses.tensor",
    ] {
        let fa = fs::read(a.parent().unwrap().join(f)).unwrap();
        let fb = fs::read(b.parent().unwrap().join(f)).unwrap();
        assert_eq!(fa, fb, "{f}");
    }
    assert_eq!(load_region(&a).unwrap(), load_region(&b).unwrap());
}

#[test]
fn region_presets_have_recorded_scale() {
    for (name, n, r, m) in [
        ("region1", 1800, 10, 103),
        ("region2", 1260, 8, 55),
        ("region3", 1800, 12, 102),
    ] {
        let c = SynthConfig::preset(name).unwrap();
        assert_eq!((c.n_train, c.n_test, c.repeats, c.n_neurons), (n, 50, r, m));
    }
}

#[test]
fn loader_names_the_offending_array() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_region(1, 4, 10);
    let manifest = ds.save(dir.path()).unwrap();
    let path = dir.path().join("train_responses.tensor");
    let mut resp: Tensor<f32> = read_archive_file(&path).unwrap();
    resp.data_mut()[3] = -1.0;
    write_archive_file(&resp, &path).unwrap();
    match load_region(&manifest) {
        Err(Error::Data { array, .. }) => assert_eq!(array, "train_responses"),
        other => panic!("expected a data error, got {other:?}"),
    }
    fs::remove_file(dir.path().join("test_stimuli.tensor")).unwrap();
    let err = load_region(&manifest).unwrap_err().to_string();
    assert!(err.contains("test_stimuli"), "{err}");
}

#[test]
fn preprocess_maps_extremes_and_resizes() {
    let img = GrayImage::new(
        32,
        32,
        (0..1024)
            .map(|i| if i % 3 == 0 { 255.0 } else { 0.0 })
            .collect(),
    )
    .unwrap();
    let out = preprocess(&[img]).unwrap();
    assert!(out.data().iter().all(|&v| v == 1.0 || v == -1.0));
    let ramp = GrayImage::new(64, 64, (0..4096).map(|i| (i % 64) as f64).collect()).unwrap();
    let out = preprocess(&[ramp]).unwrap();
    assert_eq!(out.shape(), &[1, 32, 32, 1]);
    for row in out.data().chunks(32) {
        assert!(row.windows(2).all(|w| w[0] < w[1]));
    }
}

proptest! {
    #[test]
    fn split_is_a_seeded_partition(n in 2usize..500, f in 0.01f64..0.49, seed in 0u64..100) {
        let s = split(n, f, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(!s.val.is_empty());
        prop_assert_eq!(s, split(n, f, seed).unwrap());
    }
}

#[test]
fn split_rejects_bad_fractions() {
    assert!(split(10, 0.0, 0).is_err());
    assert!(split(10, 0.5, 0).is_err());
}
