use std::fs;

use expertnet::data::{
    ingest_dataset, kfold_partition, split_dataset, synth_dataset, write_synth, GrayImage, Sample, Split, SynthSpec,
};
use expertnet::model::{ModelConfig, Network};
use expertnet::train::{evaluate, predict};
use expertnet::{Error, SeededRng};

#[test]
fn seven_class_tree_ingests_in_sorted_order() {
    let dir = tempfile::tempdir().unwrap();
    let names = ["surprise", "anger", "sad", "disgust", "neutral", "fear", "happy"];
    for (i, name) in names.iter().enumerate() {
        let d = dir.path().join(name);
        fs::create_dir(&d).unwrap();
        for j in 0..3 {
            GrayImage::new(4, 4, vec![(i * 30 + j) as u8; 16])
                .unwrap()
                .write(&d.join(format!("f{j}.pgm")))
                .unwrap();
        }
    }
    let a = ingest_dataset(dir.path(), Some((8, 8))).unwrap();
    assert_eq!(
        a.class_names,
        ["anger", "disgust", "fear", "happy", "neutral", "sad", "surprise"]
    );
    assert_eq!(a.len(), 21);
    assert_eq!(a.samples[0].image.dims(), &[3, 8, 8]);
    assert_eq!(a.samples[0].source, "anger/f0.pgm");
    assert_eq!(a, ingest_dataset(dir.path(), Some((8, 8))).unwrap());
}

#[test]
fn ingestion_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(ingest_dataset(dir.path(), None), Err(Error::Ingestion(_))));
    fs::create_dir(dir.path().join("a")).unwrap();
    assert!(matches!(ingest_dataset(dir.path(), None), Err(Error::Ingestion(_))));
    fs::write(dir.path().join("a/bad.pgm"), b"P4 1 1\n").unwrap();
    fs::write(dir.path().join("a/worse.pgm"), b"junk").unwrap();
    match ingest_dataset(dir.path(), None) {
        Err(Error::Ingestion(msg)) => assert!(msg.contains("bad.pgm") && msg.contains("worse.pgm"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn synth_tree_is_byte_identical_on_rerun() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = SynthSpec::new(4, 100, 32, 7);
    assert_eq!(write_synth(&spec, a.path()).unwrap(), 400);
    write_synth(&spec, b.path()).unwrap();
    let da = ingest_dataset(a.path(), None).unwrap();
    for s in &da.samples {
        assert_eq!(fs::read(a.path().join(&s.source)).unwrap(), fs::read(b.path().join(&s.source)).unwrap());
    }
}

#[test]
fn split_and_folds_on_four_hundred_samples() {
    let mut d = synth_dataset(&SynthSpec::new(4, 100, 16, 1)).unwrap();
    split_dataset(&mut d, 3).unwrap();
    for c in 0..4 {
        let count = |which| d.split(which).iter().filter(|s| s.label == c).count();
        assert_eq!((count(Split::Test), count(Split::Val), count(Split::Train)), (20, 24, 56));
    }
    let folds = kfold_partition(&d, 5, 3).unwrap();
    let mut seen = vec![false; d.len()];
    for f in &folds {
        assert_eq!(f.test.len(), 80);
        for &i in &f.test {
            assert!(!seen[i]);
            seen[i] = true;
        }
    }
    assert!(seen.iter().all(|&s| s));
}

/// Samples whose labels agree with the network's predictions except at
/// the positions in `wrong`.
fn relabelled(net: &Network<f32>, samples: &[Sample], wrong: &[usize]) -> Vec<Sample> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let preds = predict(net, &refs).unwrap();
    samples
        .iter()
        .zip(preds)
        .enumerate()
        .map(|(i, (s, p))| Sample {
            label: if wrong.contains(&i) { (p + 1) % net.num_classes() } else { p },
            ..s.clone()
        })
        .collect()
}

#[test]
fn evaluate_accuracy_arithmetic() {
    let net = Network::<f32>::build(ModelConfig::desk(), &mut SeededRng::new(2)).unwrap();
    let data = synth_dataset(&SynthSpec::new(4, 1, 32, 2)).unwrap();
    let three_of_four = relabelled(&net, &data.samples, &[2]);
    let refs: Vec<&Sample> = three_of_four.iter().collect();
    let (acc, cm) = evaluate(&net, &refs).unwrap();
    assert_eq!(acc, 75.0);
    assert_eq!(cm.trace(), 3);
    assert_eq!(acc, cm.trace() as f64 / cm.total() as f64 * 100.0);
    let all = relabelled(&net, &data.samples, &[]);
    let refs: Vec<&Sample> = all.iter().collect();
    assert_eq!(evaluate(&net, &refs).unwrap().0, 100.0);
    assert!(matches!(evaluate(&net, &[]), Err(Error::Usage(_))));
}

#[test]
fn evaluation_is_batch_invariant() {
    let net = Network::<f32>::build(ModelConfig::desk(), &mut SeededRng::new(4)).unwrap();
    let data = synth_dataset(&SynthSpec::new(4, 30, 32, 5)).unwrap();
    let refs: Vec<&Sample> = data.samples.iter().collect();
    let together = predict(&net, &refs).unwrap();
    let one_by_one: Vec<usize> = refs.iter().map(|s| predict(&net, &[*s]).unwrap()[0]).collect();
    assert_eq!(together, one_by_one);
}
