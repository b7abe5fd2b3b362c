use outadapt::eval::{evaluate, evaluate_with_threads, gap_csv, miou_gap};
use outadapt::synth::{generate, DatasetConfig, TrainingData};
use outadapt::trainer::{seg_net_from_checkpoint, train, AdaptMode, Trainer, TrainConfig};

#[test]
fn overfit_run_scores_high_on_its_training_split() {
    let pair = generate(&DatasetConfig {
        height: 64,
        width: 64,
        source_train: 2,
        target_train: 1,
        target_test: 1,
        ..DatasetConfig::default()
    })
    .unwrap();
    let config = TrainConfig {
        total_steps: 2000,
        deterministic: true,
        ..TrainConfig::for_mode(AdaptMode::SourceOnly)
    };
    let out = train(&config, &TrainingData::from(&pair), None).unwrap();
    let report = evaluate(out.trainer.seg_net(), &pair.source_train).unwrap();
    assert!(report.miou_value() > 0.9, "{report:?}");
}

#[test]
fn untrained_network_is_near_chance() {
    let pair = generate(&DatasetConfig::default()).unwrap();
    for seed in 0..3 {
        let trainer = Trainer::new(TrainConfig { seed, ..TrainConfig::default() }, 4).unwrap();
        let report = evaluate(trainer.seg_net(), &pair.target_test).unwrap();
        assert!(report.miou_value() < 0.5, "seed {seed}: {report:?}");
    }
}

#[test]
fn evaluation_is_repeatable_and_shardable() {
    let pair = generate(&DatasetConfig {
        target_test: 7,
        ..DatasetConfig::default()
    })
    .unwrap();
    let trainer = Trainer::new(TrainConfig::default(), 4).unwrap();
    let net = trainer.seg_net();
    let a = evaluate_with_threads(net, &pair.target_test, 1).unwrap();
    let b = evaluate_with_threads(net, &pair.target_test, 1).unwrap();
    let c = evaluate_with_threads(net, &pair.target_test, 3).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(a.images, 7);
    assert_eq!(miou_gap(&a, &a).unwrap(), 0.0);
    assert!(gap_csv(&a, &a, &a).unwrap().ends_with(",0.000000\n"));
    assert!(evaluate(net, &[]).is_err());
}

#[test]
fn checkpointed_network_evaluates_like_the_original() {
    let pair = generate(&DatasetConfig {
        target_test: 4,
        ..DatasetConfig::default()
    })
    .unwrap();
    let config = TrainConfig {
        widths: [4, 8, 8, 8, 8],
        seed: 5,
        ..TrainConfig::for_mode(AdaptMode::MultiLevel)
    };
    let trainer = Trainer::new(config, 4).unwrap();
    let ckpt = trainer.checkpoint();
    let net = seg_net_from_checkpoint(&ckpt, 4).unwrap();
    assert_eq!(net.params(), trainer.seg_net().params());
    assert_eq!(
        evaluate(&net, &pair.target_test).unwrap(),
        evaluate(trainer.seg_net(), &pair.target_test).unwrap()
    );
    assert!(seg_net_from_checkpoint(&ckpt, 3).is_err());
}
