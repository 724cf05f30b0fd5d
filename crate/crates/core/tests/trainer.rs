//! End-to-end training behaviour on small synthetic data.

use dcl_core::model::{EncoderConfig, EncoderState, NormKind};
use dcl_core::objectives::{ContrastConfig, DualNetworks};
use dcl_core::textpipe::{LabeledExample, SynonymLexicon, Vocabulary};
use dcl_core::trainer::{accuracy, cosine_lr, finetune, pretrain, PretrainRun, TrainConfig};
use dcl_core::SeededStream;

const ADJ: [&str; 6] = ["good", "great", "fine", "bad", "poor", "awful"];
const NOUN: [&str; 5] = ["movie", "film", "plot", "actor", "story"];

fn corpus(n: usize, seed: u64) -> Vec<String> {
    let mut r = SeededStream::new(seed);
    (0..n)
        .map(|_| {
            let a = ADJ[r.index(ADJ.len())];
            let b = NOUN[r.index(NOUN.len())];
            let c = NOUN[r.index(NOUN.len())];
            format!("the {b} was {a} and the {c} was {a}")
        })
        .collect()
}

fn vocab() -> Vocabulary {
    Vocabulary::from_words(ADJ.iter().chain(&NOUN).chain(&["the", "was", "and"]).copied())
}

fn lexicon() -> SynonymLexicon {
    let mut lex = SynonymLexicon::new();
    lex.insert("good", &["great", "fine"]);
    lex.insert("bad", &["poor", "awful"]);
    lex.insert("movie", &["film"]);
    lex.insert("plot", &["story"]);
    lex
}

fn config(v: usize, norm: NormKind) -> EncoderConfig {
    let mut c = EncoderConfig::small(v);
    c.hidden = 16;
    c.heads = 2;
    c.ff = 32;
    c.layers = 1;
    c.max_len = 12;
    c.projection_dim = 16;
    c.norm = norm;
    c.powernorm_warmup = 20;
    c
}

fn train_cfg(steps: u64, lambda_mlm: f64, lambda_align: f64) -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        batch_size: 10,
        steps,
        seed: 5,
        max_len: 12,
        contrast: ContrastConfig {
            lambda_mlm,
            lambda_align,
            ..ContrastConfig::default()
        },
        ..TrainConfig::default()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn mlm_only_loss_decreases() {
    let data = corpus(50, 1);
    let v = vocab();
    let nets = DualNetworks::new(config(v.len(), NormKind::Layer), 0.99).unwrap();
    let (_, log) = pretrain(nets, &data, &v, &lexicon(), &train_cfg(200, 1.0, 0.0), || 0.0, |_, _| Ok(())).unwrap();
    let mlm: Vec<f64> = log.records.iter().map(|r| r.mlm_loss).collect();
    assert_eq!(mlm.len(), 200);
    let (head, tail) = (mean(&mlm[..25]), mean(&mlm[175..]));
    assert!(tail < 0.75 * head, "mlm loss {head} -> {tail}");
    // The alignment term is skipped entirely at weight 0.
    assert!(log.records.iter().all(|r| r.align_loss == 0.0));
}

#[test]
fn alignment_loss_decreases_under_every_norm() {
    let data = corpus(50, 2);
    let v = vocab();
    for norm in [NormKind::Layer, NormKind::Power, NormKind::None] {
        let nets = DualNetworks::new(config(v.len(), norm), 0.9).unwrap();
        let (_, log) = pretrain(nets, &data, &v, &lexicon(), &train_cfg(120, 0.0, 1.0), || 0.0, |_, _| Ok(())).unwrap();
        let a: Vec<f64> = log.records.iter().map(|r| r.align_loss).collect();
        assert!(a.iter().all(|x| (0.0..=4.0).contains(x)));
        assert!(mean(&a[100..]) < mean(&a[..20]), "{norm:?}: {} -> {}", mean(&a[..20]), mean(&a[100..]));
    }
}

fn separable() -> Vec<LabeledExample> {
    let pos = ["good", "great", "fine"];
    let neg = ["bad", "poor", "awful"];
    (0..20)
        .map(|i| {
            let (words, label) = if i % 2 == 0 { (pos, 1) } else { (neg, 0) };
            LabeledExample {
                line: i + 1,
                label,
                text: format!("the {} was {}", NOUN[i % 5], words[i % 3]),
            }
        })
        .collect()
}

#[test]
fn finetune_fits_a_separable_set() {
    let v = vocab();
    let data = separable();
    let model = EncoderState::new(config(v.len(), NormKind::Power)).unwrap();
    let mut cfg = train_cfg(300, 1.0, 1.0);
    cfg.batch_size = 8;
    let run = finetune(model, &data, &v, &cfg, || 0.0).unwrap();
    let acc = accuracy(&run.model, &data, &v, 12).unwrap();
    assert_eq!(acc, 1.0, "final loss {:?}", run.log.records.last());
    let ce: Vec<f64> = run.log.records.iter().map(|r| r.total_loss).collect();
    assert!(mean(&ce[280..]) < 0.1);
}

#[test]
fn finetune_rejects_out_of_range_labels() {
    let v = vocab();
    let mut data = separable();
    data[3].label = 7;
    let model = EncoderState::new(config(v.len(), NormKind::Layer)).unwrap();
    let err = finetune(model, &data, &v, &train_cfg(5, 1.0, 1.0), || 0.0).unwrap_err();
    assert!(matches!(err, dcl_core::Error::Data { line: 4, .. }), "{err:?}");
}

#[test]
fn pretraining_is_deterministic() {
    let data = corpus(30, 3);
    let v = vocab();
    let run = || {
        let nets = DualNetworks::new(config(v.len(), NormKind::Power), 0.99).unwrap();
        pretrain(nets, &data, &v, &lexicon(), &train_cfg(40, 1.0, 1.0), || 0.0, |_, _| Ok(())).unwrap()
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(la.to_csv(), lb.to_csv());
    assert_eq!(a, b);
}

#[test]
fn stepping_manually_matches_the_driver() {
    let data = corpus(30, 4);
    let v = vocab();
    let lex = lexicon();
    let cfg = train_cfg(25, 1.0, 1.0);
    let nets = DualNetworks::new(config(v.len(), NormKind::Power), 0.99).unwrap();
    let mut seen = Vec::new();
    let (driven, _) = pretrain(nets.clone(), &data, &v, &lex, &cfg, || 0.0, |run, r| {
        seen.push((run.step, r.step));
        Ok(())
    })
    .unwrap();
    assert!(seen.iter().enumerate().all(|(i, &(a, b))| a == i as u64 + 1 && b == a));
    let mut run = PretrainRun::new(nets, cfg).unwrap();
    while !run.finished() {
        run.step(&data, &v, &lex).unwrap();
    }
    assert_eq!(run.nets, driven);
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(0, 100, 0.1), 0.1);
    assert!(cosine_lr(100, 100, 0.1).abs() < 1e-18);
    assert!((cosine_lr(50, 100, 0.1) - 0.05).abs() < 1e-15);
}

#[test]
fn target_moves_only_by_the_ema_formula() {
    let data = corpus(30, 6);
    let v = vocab();
    let lex = lexicon();
    let nets = DualNetworks::new(config(v.len(), NormKind::Power), 0.9).unwrap();
    let mut run = PretrainRun::new(nets, train_cfg(6, 1.0, 1.0)).unwrap();
    while !run.finished() {
        let before = run.nets.target.clone();
        run.step(&data, &v, &lex).unwrap();
        let tau = run.nets.tau_ema;
        for ((old, new), online) in before.params().iter().zip(run.nets.target.params()).zip(run.nets.online.params()) {
            for ((a, b), o) in old.data().iter().zip(new.data()).zip(online.data()) {
                assert_eq!(*b, tau * a + (1.0 - tau) * o);
            }
        }
    }
}
