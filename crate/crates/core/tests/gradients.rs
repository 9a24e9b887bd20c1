use flowalign::layers::{Activation, ParamSet};
use flowalign::numerics::gradcheck;
use flowalign::synthbench::{generate, BenchConfig, TaskKind};
use flowalign::trainer::{build_model, masked_task_loss, Batch, ModelConfig, TrainConfig};
use flowalign::verify::gradient_checks_for;

#[test]
fn every_block_on_twenty_configurations() {
    for k in 0..20 {
        for (name, r) in gradient_checks_for(k).unwrap() {
            assert!(r.passed, "config {k}, {name}: {r:?}");
        }
    }
}

/// Task-loss gradient of a trainer-built model on a real benchmark batch,
/// with the alignment gradient stopped at the shared features.
#[test]
fn trainer_model_on_benchmark_batch() {
    let bench = BenchConfig {
        d_in: 6,
        d_factor: 4,
        d_reg: 2,
        n_classes: 3,
        n_train: 4,
        n_val: 2,
        ..Default::default()
    };
    let ds = generate(&bench).unwrap();
    let cfg = TrainConfig {
        model: ModelConfig {
            encoder_hidden: vec![5],
            shared_dim: 4,
            head_hidden: 3,
            activation: Activation::Tanh,
        },
        ..Default::default()
    };
    let kinds = bench.task_kinds();
    let dims = bench.task_output_dims();
    let model = build_model(bench.d_in, &kinds, &dims, &cfg).unwrap();
    let refs: Vec<_> = ds.train.iter().collect();
    let batch = Batch::new(&refs, &kinds, &dims, false);

    let objective = |m: &flowalign::trainer::MtlModel| {
        let f = m.forward(&batch.x).unwrap();
        let mut total = 0.0;
        let mut grads = Vec::new();
        for t in 0..kinds.len() {
            let (l, g) = masked_task_loss(&f.predictions[t], &batch.targets[t], &batch.masks[t], kinds[t]).unwrap();
            total += l;
            grads.push(g);
        }
        (total, f, grads)
    };
    let (_, f, grads) = objective(&model);
    let analytic = model.backward(&f.cache, &grads, None, true).unwrap().to_flat();
    let mut probe = model.clone();
    let r = gradcheck::check(&analytic, &model.to_flat(), |v| {
        probe.assign_flat(v);
        objective(&probe).0
    });
    assert!(r.passed, "{r:?}");
    assert!(kinds.contains(&TaskKind::Classification));
}
