use skelbench::datagen::{gen_pairs, DatasetSpec};
use skelbench::mask::BinaryMask;
use skelbench::unet::{
    encode_model, infer_prefix, stage_rng, train_pipeline, train_pipeline_with, PipelineConfig, TrainEvent, UNet,
    UNetConfig, UnetError,
};

fn data(count: usize) -> (Vec<BinaryMask>, Vec<BinaryMask>) {
    gen_pairs(&DatasetSpec { count, size: 32, seed: 4, ..DatasetSpec::default() })
        .unwrap()
        .into_iter()
        .map(|p| (p.shape, p.skeleton))
        .unzip()
}

fn small(n_stages: usize, epochs: usize) -> PipelineConfig {
    PipelineConfig { n_stages, epochs, batch_size: 4, seed: 11, ..PipelineConfig::default() }
}

const NET: UNetConfig = UNetConfig { depth: 2, base_channels: 4, in_channels: 1, out_channels: 2, input_size: 32 };

#[test]
fn zero_epochs_keep_initialisation() {
    let (shapes, skels) = data(6);
    let bundle = train_pipeline(&shapes, &skels, NET, &small(2, 0)).unwrap();
    for (k, net) in bundle.stages.iter().enumerate() {
        let fresh = UNet::<f32>::new(NET, &mut stage_rng(11, k + 1, false)).unwrap();
        assert_eq!(net, &fresh, "stage {}", k + 1);
    }
}

#[test]
fn loss_goes_down() {
    let (shapes, skels) = data(16);
    let (_, hist) = train_pipeline_with(&shapes, &skels, NET, &small(1, 8), &mut |_| {}).unwrap();
    let h = &hist[0];
    assert_eq!(h.len(), 8);
    assert!(h.last().unwrap() < h.first().unwrap(), "{h:?}");
}

#[test]
fn seeds_fix_the_run() {
    let (shapes, skels) = data(8);
    let run = |seed| {
        let cfg = PipelineConfig { seed, ..small(2, 2) };
        let (b, h) = train_pipeline_with(&shapes, &skels, NET, &cfg, &mut |_| {}).unwrap();
        (encode_model(&b), h)
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_ne!(a.0, run(2).0);
}

#[test]
fn later_stages_see_frozen_outputs() {
    let (shapes, skels) = data(8);
    let mut seen: Vec<Vec<BinaryMask>> = Vec::new();
    let (bundle, _) = train_pipeline_with(&shapes, &skels, NET, &small(3, 2), &mut |e| {
        if let TrainEvent::StageInputs { stage, inputs } = e {
            assert_eq!(stage, seen.len() + 1);
            seen.push(inputs.to_vec());
        }
    })
    .unwrap();
    assert_eq!(bundle.stages.len(), 3);
    assert_eq!(seen[0], shapes);
    for (k, inputs) in seen.iter().enumerate().skip(1) {
        let replay: Vec<BinaryMask> = shapes.iter().map(|s| infer_prefix(&bundle, s, k).unwrap()).collect();
        assert_eq!(inputs, &replay, "stage {}", k + 1);
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let (shapes, skels) = data(4);
    assert!(matches!(
        train_pipeline(&shapes, &skels[..3], NET, &small(1, 1)),
        Err(UnetError::CountMismatch { inputs: 4, targets: 3 })
    ));
    assert!(matches!(train_pipeline(&[], &[], NET, &small(1, 1)), Err(UnetError::EmptyDataset)));
    let big = vec![BinaryMask::new(64, 64)];
    assert!(matches!(
        train_pipeline(&big, &big, NET, &small(1, 1)),
        Err(UnetError::SizeMismatch { expected: 32, .. })
    ));
    assert!(train_pipeline(&shapes, &skels, NET, &small(4, 1)).is_err());
    assert!(train_pipeline(&shapes, &skels, NET, &PipelineConfig { batch_size: 0, ..small(1, 1) }).is_err());
}

#[test]
fn repeated_sample_loss_drops() {
    let pair = skelbench::datagen::gen_shape(&DatasetSpec::default(), 3).unwrap();
    let shapes = vec![pair.shape; 8];
    let skels = vec![pair.skeleton; 8];
    let cfg = PipelineConfig { n_stages: 1, epochs: 50, batch_size: 4, seed: 2, ..PipelineConfig::default() };
    let (_, hist) = train_pipeline_with(&shapes, &skels, UNetConfig::new(2, 8, 64), &cfg, &mut |_| {}).unwrap();
    assert!(hist[0][49] < hist[0][0], "{:?}", hist[0]);
}
