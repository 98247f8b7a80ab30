use candle_core::{DType, Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use texfx_core::dataset::{synth_dataset, DatasetManifest, Split, TripleLoader};
use texfx_core::eval::{probe_features, ProbeOptions};
use texfx_core::net::{ContentEncoder, NetConfig, TransferNet};
use texfx_core::Image3;

#[test]
fn toy_synth_counts() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(2, 30, 64, 7, dir.path()).unwrap();
    assert_eq!(m.entries.len(), 60);
    assert_eq!(m.split(Split::Train).len(), 52);
    assert_eq!(m.split(Split::Test).len(), 8);
    let reloaded = DatasetManifest::load(dir.path()).unwrap();
    assert_eq!(reloaded.hash(), m.hash());
    for e in &m.entries {
        let img = Image3::load_png(&dir.path().join(&e.style_file)).unwrap();
        assert_eq!((img.height(), img.width()), (64, 64));
    }
}

#[test]
fn synth_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = synth_dataset(2, 6, 16, 3, a.path()).unwrap();
    let mb = synth_dataset(2, 6, 16, 3, b.path()).unwrap();
    assert_eq!(ma.entries, mb.entries);
    for e in &ma.entries {
        let fa = std::fs::read(a.path().join(&e.style_file)).unwrap();
        let fb = std::fs::read(b.path().join(&e.style_file)).unwrap();
        assert_eq!(fa, fb);
    }
    assert!(synth_dataset(1, 6, 16, 3, a.path()).is_err());
    assert!(synth_dataset(2, 6, 8, 3, a.path()).is_err());
}

#[test]
fn loader_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(2, 6, 16, 1, dir.path()).unwrap();
    let train = m.all_as(Split::Train);
    let loader = TripleLoader::from_manifest(&train, Split::Train, 4, 9).unwrap();
    assert_eq!(loader.len(), 12);
    assert_eq!(loader.batches_per_epoch(), 3);
    let e0 = loader.epoch(0).unwrap();
    for t in e0.iter().flatten() {
        assert_eq!(t.y.style_id, t.y_prime.style_id);
        assert_ne!(t.y.glyph_id, t.y_prime.glyph_id);
        assert_eq!(t.x.0, *loader.dataset().glyph(&t.y.glyph_id).unwrap().image());
    }
    let again = TripleLoader::from_manifest(&train, Split::Train, 4, 9).unwrap().epoch(0).unwrap();
    let ids = |b: &Vec<Vec<texfx_core::dataset::TrainingTriple>>| {
        b.iter()
            .flatten()
            .map(|t| (t.y.style_id.clone(), t.y.glyph_id.clone(), t.y_prime.glyph_id.clone()))
            .collect::<Vec<_>>()
    };
    assert_eq!(ids(&e0), ids(&again));

    let g = m.glyphs();
    let two = train.with_glyphs(&[&g[0], &g[1]]);
    let loader = TripleLoader::from_manifest(&two, Split::Train, 4, 0).unwrap();
    assert_eq!(loader.batches_per_epoch(), 1);
    for t in loader.epoch(0).unwrap().iter().flatten() {
        let other = if t.y.glyph_id == g[0] { &g[1] } else { &g[0] };
        assert_eq!(&t.y_prime.glyph_id, other);
    }
    let one = train.with_glyphs(&[&g[0]]);
    assert!(TripleLoader::from_manifest(&one, Split::Train, 4, 0).is_err());
}

#[test]
fn probe_on_random_labels_stays_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth_dataset(4, 50, 16, 2, dir.path()).unwrap();
    let dataset = texfx_core::dataset::Dataset::load(&m).unwrap();
    let net = TransferNet::new(
        NetConfig {
            base_channels: 4,
            content_channels: 8,
            style_channels: 8,
            ..NetConfig::default()
        },
        DType::F32,
        &Device::Cpu,
    )
    .unwrap();
    let images: Vec<&Image3> = m
        .entries
        .iter()
        .map(|e| &dataset.style(&e.style_id, &e.glyph_id).unwrap().pixels)
        .collect();
    let features: Vec<Tensor> = images
        .chunks(20)
        .map(|c| {
            let x = Image3::batch_tensor(c, DType::F32, &Device::Cpu).unwrap();
            net.encode_content(&x, ContentEncoder::Styled).unwrap().0
        })
        .collect();
    let features = Tensor::cat(&features, 0).unwrap();
    let n = images.len();
    let mut labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    labels.shuffle(&mut rng);
    let mut rows: Vec<usize> = (0..n).collect();
    rows.shuffle(&mut rng);
    let (train, test) = rows.split_at(n / 2);
    let opts = ProbeOptions {
        iterations: 150,
        ..ProbeOptions::default()
    };
    let curve = probe_features(&features, &labels, train, test, &opts).unwrap();
    let tail: f64 = curve.iter().rev().take(5).map(|p| p.1).sum::<f64>() / 5.0;
    assert!((tail - 0.5).abs() <= 0.1, "tail accuracy {tail}");
}
