use liftkit::data::{extract_windows, synth_sequence, MotionParams};
use liftkit::metrics::mpjpe;
use liftkit::model::{LiftFormerModel, ModelConfig};
use liftkit::nn::Tensor;
use liftkit::skeleton::{Pose3D, SkeletonSpec};
use liftkit::training::{train, TrainConfig};

fn train_mpjpe(model: &LiftFormerModel<f32>, seq: &liftkit::data::PoseSequence) -> f64 {
    let windows = extract_windows(seq, model.config().receptive_field).unwrap();
    let mut total = 0.0;
    for w in &windows {
        let input = Tensor::from_values(
            &[model.config().receptive_field, 2 * 17],
            w.flat_inputs().iter().map(|&v| v as f32).collect(),
        ).unwrap();
        let pred = model.output_to_pose(&model.forward(&input).unwrap().values()).unwrap();
        let gt = Pose3D::new(w.target.clone().unwrap()).unwrap();
        total += mpjpe(&pred, &gt).unwrap();
    }
    total / windows.len() as f64
}

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let factor: f64 = a[1].parse().unwrap();
    let warmup: usize = a[2].parse().unwrap();
    let batch: usize = a[3].parse().unwrap();
    let flips: bool = a[4].parse().unwrap();
    let d_ff: usize = a[5].parse().unwrap();
    let swing: f64 = a[6].parse().unwrap();
    let beta2: f64 = a[7].parse().unwrap();
    let mseed: u64 = a[8].parse().unwrap();

    let motion = MotionParams { max_swing: swing, ..MotionParams::default() };
    let seq = synth_sequence(5, 200, &SkeletonSpec::h36m_17(), &motion).unwrap();
    let config = ModelConfig {
        hidden_dim: 64, heads: 4, blocks: 2, ffn_dim: d_ff,
        receptive_field: 27, joints: 17, share_attention: false,
        dropout_p: 0.0, causal: false, output_token: Default::default(),
    };
    let model = LiftFormerModel::<f32>::build(&config, mseed).unwrap();
    let tc = TrainConfig {
        epochs: 100000,
        batch_size: Some(batch),
        warmup_steps: warmup,
        lr_factor: factor,
        beta2,
        seed: Some(11),
        max_steps: Some(2000),
        val_fraction: 0.0,
        flip_augmentation: flips,
        ..TrainConfig::default()
    };
    let mut marks = vec![];
    train(&model, &[seq.clone()], &tc, |e| {
        if e.step % 500 == 0 { marks.push((e.step, e.train_loss)); }
    }).unwrap();
    for (s, l) in marks { eprint!("[{s}:{l:.1}] "); }
    eprintln!();
    println!("train-set mpjpe {:.3}", train_mpjpe(&model, &seq));
}
