mod common;

use common::*;
use textinv::artifact::Stamp;
use textinv::corpus::{tokenize, Vocab};
use textinv::error::Error;
use textinv::modeling::checkpoint::{load_classifier, load_generator, save_classifier, save_generator};
use textinv::modeling::{
    argmax, train_classifier, train_classifier_until, train_generator, ArchConfig, ClassifierModel, Decoding,
    GeneratorModel, TrainConfig,
};
use textinv::synth::repeated_sentence;

const SENTENCE: &str = "the quiet harbor keeps seven lanterns burning until dawn .";

#[test]
fn generator_memorizes_a_repeated_sentence() {
    let mut vocab = Vocab::new();
    let ds = repeated_sentence(SENTENCE, 64, &mut vocab).unwrap();
    let g = train_generator(&ds, &vocab, &TrainConfig::new(ArchConfig::tiny(), 40, 0)).unwrap();
    let losses = &g.meta.epoch_losses;
    assert_eq!(losses.len(), 40);
    assert!(losses.last().unwrap() < &(losses[0] * 0.2), "{losses:?}");
    let want = vocab.encode(SENTENCE);
    let out = g.generate(&want[..1], 30, Decoding::Greedy, 0).unwrap();
    assert_eq!(vocab.decode(&out), tokenize(SENTENCE).join(" "));
}

#[test]
fn classifier_fits_the_marker_corpus() {
    let t = toy_world(1);
    let acc = t.classifier.accuracy(&t.split.private).unwrap();
    assert!(acc > 0.9, "training accuracy {acc}");
    let losses = &t.classifier.meta.epoch_losses;
    assert!(losses.last().unwrap() < &losses[0]);
    for text in t.split.private.texts().take(20) {
        let p = t.classifier.predict(text).unwrap();
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        assert!(argmax(&p) < t.classifier.num_classes);
    }
}

#[test]
fn early_stop_flags_unreached_threshold() {
    let t = toy_world(2);
    let cfg = TrainConfig::new(ArchConfig::tiny(), 1, 0);
    let m = train_classifier_until(&t.split.private, &t.vocab, &cfg, Some(1.01)).unwrap();
    assert!(m.meta.below_threshold);
    assert_eq!(m.meta.epochs_run, 1);
    let cfg = TrainConfig::new(ArchConfig::small(), 20, 0);
    let m = train_classifier_until(&t.split.private, &t.vocab, &cfg, Some(0.5)).unwrap();
    assert!(!m.meta.below_threshold);
    assert!(m.meta.epochs_run < 20);
    assert!(m.meta.train_accuracy > 0.5);
}

#[test]
fn unlabeled_data_cannot_train_a_classifier() {
    let t = toy_world(3);
    let cfg = TrainConfig::new(ArchConfig::tiny(), 1, 0);
    assert!(train_classifier(&t.split.public, &t.vocab, &cfg).is_err());
}

#[test]
fn checkpoints_round_trip_and_reject_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let mut vocab = Vocab::new();
    let ds = repeated_sentence(SENTENCE, 8, &mut vocab).unwrap();
    let stamp = Stamp::new("abc", 1);
    let c = ClassifierModel::new(ArchConfig::tiny(), &vocab, 2, 0).unwrap();
    let g = GeneratorModel::new(ArchConfig::tiny(), &vocab, 0).unwrap();
    let cp = dir.path().join("c.json");
    let gp = dir.path().join("g.json");
    save_classifier(&cp, &c, &stamp).unwrap();
    save_generator(&gp, &g, &stamp).unwrap();

    let c2 = load_classifier(&cp, &vocab, &stamp).unwrap();
    let g2 = load_generator(&gp, &vocab, &stamp).unwrap();
    let text = ds.texts().next().unwrap();
    assert_eq!(c.predict(text).unwrap(), c2.predict(text).unwrap());
    assert_eq!(g.token_log_probs(text).unwrap(), g2.token_log_probs(text).unwrap());

    let stale = Stamp::new("def", 1);
    assert!(matches!(
        load_classifier(&cp, &vocab, &stale),
        Err(Error::StaleArtifact { .. })
    ));
    assert!(matches!(
        load_generator(&gp, &vocab, &stale),
        Err(Error::StaleArtifact { .. })
    ));

    let mut other = vocab.clone();
    other.insert("extra");
    assert!(matches!(
        load_classifier(&cp, &other, &stamp),
        Err(Error::VocabMismatch { .. })
    ));
    assert!(matches!(
        load_generator(&gp, &other, &stamp),
        Err(Error::VocabMismatch { .. })
    ));
}

#[test]
fn out_of_range_tokens_are_rejected() {
    let t = toy_world(4);
    let v = t.vocab.len();
    assert!(matches!(t.classifier.predict(&[v]), Err(Error::Vocab { .. })));
    assert!(t.generator.generate(&[v + 3], 5, Decoding::Greedy, 0).is_err());
}

#[test]
fn generation_respects_length_and_never_emits_specials() {
    let t = toy_world(5);
    let prefix: Vec<usize> = t.split.public.texts().next().unwrap()[..2].to_vec();
    for seed in 0..10 {
        let out = t.generator.generate(&prefix, 12, Decoding::TopK(10), seed).unwrap();
        assert!(out.len() <= 12);
        assert_eq!(&out[..2], &prefix[..]);
        assert!(out.iter().all(|&id| !t.vocab.is_special(id)));
    }
    let a = t.generator.generate(&prefix, 12, Decoding::TopK(10), 3).unwrap();
    let b = t.generator.generate(&prefix, 12, Decoding::TopK(10), 3).unwrap();
    assert_eq!(a, b);
}
