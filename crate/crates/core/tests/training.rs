use cmfeedback::data::{build_dataset, ChannelConfig, Dataset, Scenario};
use cmfeedback::distill::{
    alpha_schedule, train_student_cm, train_student_kd, train_student_plain, train_teacher, LrSettings, Pipeline,
    SchedulerKind, TrainPlan, TrainedPair,
};
use cmfeedback::nn::Network;

fn data(n_train: usize, n_test: usize, nc: usize, nt: usize) -> (Dataset, Dataset) {
    let cfg = ChannelConfig { seed: 21, ..ChannelConfig::new(Scenario::IndoorLike).with_dims(4 * nc, nc, nt) };
    build_dataset(&cfg, n_train, n_test).unwrap()
}

fn small_plan(pipeline: Pipeline) -> TrainPlan {
    TrainPlan {
        pipeline,
        epochs: 8,
        mimic_epochs: 3,
        batch_size: 10,
        lr: LrSettings { warmup_epochs: 2, ..Default::default() },
        seed: 5,
        ..Default::default()
    }
}

fn bits(n: &Network<f32>) -> Vec<u32> {
    n.flat_params().iter().map(|x| x.to_bits()).collect()
}

fn same_pair(a: &TrainedPair, b: &TrainedPair) -> bool {
    bits(&a.encoder) == bits(&b.encoder) && bits(&a.decoder) == bits(&b.decoder)
}

#[test]
fn teacher_training_reduces_loss() {
    let (train, _) = data(1000, 1, 16, 16);
    let mut first = 0.0;
    let mut last = 0.0;
    for seed in 0..3 {
        let plan = TrainPlan { epochs: 50, batch_size: 200, seed, ..small_plan(Pipeline::Plain) };
        let pair = train_teacher(&plan, &train, 128).unwrap();
        assert_eq!(pair.history.len(), 50);
        first += pair.history[0].loss_gt;
        last += pair.history[49].loss_gt;
    }
    assert!(last < first, "mean loss went from {first} to {last}");
}

#[test]
fn zero_epochs_leave_initial_parameters() {
    let (train, test) = data(20, 5, 8, 8);
    let plan = TrainPlan { epochs: 0, mimic_epochs: 0, ..small_plan(Pipeline::Plain) };
    let a = train_student_plain(&plan, &train, 16).unwrap();
    let b = train_student_plain(&plan, &train, 16).unwrap();
    assert!(a.history.is_empty());
    assert!(same_pair(&a, &b));
    let teacher = train_teacher(&plan, &train, 16).unwrap();
    let cm = TrainPlan { pipeline: Pipeline::CodewordMimic, ..plan };
    assert!(same_pair(&train_student_cm(&cm, &train, &test, &teacher.encoder, 16).unwrap(), &a));
}

#[test]
fn runs_are_deterministic_per_seed() {
    let (train, _) = data(30, 1, 8, 8);
    let plan = small_plan(Pipeline::Plain);
    let a = train_teacher(&plan, &train, 16).unwrap();
    let b = train_teacher(&plan, &train, 16).unwrap();
    assert!(same_pair(&a, &b));
    assert_eq!(a.history, b.history);
    let c = train_teacher(&TrainPlan { seed: 6, ..plan }, &train, 16).unwrap();
    assert!(!same_pair(&a, &c));
}

#[test]
fn cm_history_follows_the_two_stages() {
    let (train, test) = data(30, 10, 8, 8);
    let teacher = train_teacher(&small_plan(Pipeline::Plain), &train, 16).unwrap();
    let plan = TrainPlan { alpha0: 0.2, ..small_plan(Pipeline::CodewordMimic) };
    let cm = train_student_cm(&plan, &train, &test, &teacher.encoder, 16).unwrap();
    assert_eq!(cm.history.len(), plan.epochs);
    for r in &cm.history {
        let alpha = alpha_schedule(r.epoch, plan.mimic_epochs, plan.alpha0, SchedulerKind::Cosine).unwrap();
        assert_eq!(r.weight, alpha);
        if r.epoch < plan.mimic_epochs {
            assert_eq!(r.lr_encoder, r.lr_decoder);
            assert!(r.loss_distill.is_some());
        } else {
            // Explore stage: the mimic term is not part of the objective.
            assert_eq!(r.weight, 0.0);
            assert!(r.loss_distill.is_none());
            assert!(r.lr_encoder < r.lr_decoder);
        }
    }
    assert_eq!(cm.history[plan.mimic_epochs].lr_decoder, 4e-3);
    assert_eq!(cm.history[plan.mimic_epochs].lr_encoder, 2e-4);
    assert!(cm.mse_cm_mid.is_some() && cm.mse_cm_end.is_some());
}

#[test]
fn explore_stage_moves_the_encoder_less_than_the_decoder() {
    let (train, test) = data(40, 10, 8, 8);
    let teacher = train_teacher(&small_plan(Pipeline::Plain), &train, 16).unwrap();
    let base = small_plan(Pipeline::CodewordMimic);
    // The same run stopped at the stage boundary and carried to the end.
    let mid = train_student_cm(&TrainPlan { epochs: base.mimic_epochs, ..base.clone() }, &train, &test, &teacher.encoder, 16)
        .unwrap();
    let full = train_student_cm(&base, &train, &test, &teacher.encoder, 16).unwrap();
    let drift = |a: &Network<f32>, b: &Network<f32>| {
        let (pa, pb) = (a.flat_params(), b.flat_params());
        let num: f64 = pa.iter().zip(&pb).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
        let den: f64 = pa.iter().map(|x| (*x as f64).powi(2)).sum();
        (num / den).sqrt()
    };
    let (de, dd) = (drift(&mid.encoder, &full.encoder), drift(&mid.decoder, &full.decoder));
    assert!(de < dd, "encoder drift {de} vs decoder drift {dd}");
}

#[test]
fn cm_rejects_a_teacher_with_another_codeword_size() {
    let (train, test) = data(10, 4, 8, 8);
    let teacher = train_teacher(&TrainPlan { epochs: 1, mimic_epochs: 0, ..small_plan(Pipeline::Plain) }, &train, 32).unwrap();
    let err = train_student_cm(&small_plan(Pipeline::CodewordMimic), &train, &test, &teacher.encoder, 16).unwrap_err();
    assert!(matches!(&err, cmfeedback::Error::Config { key, .. } if key == "codeword_size"), "{err}");
}

#[test]
fn kd_with_zero_weight_is_plain_training() {
    let (train, _) = data(30, 1, 8, 8);
    let teacher = train_teacher(&small_plan(Pipeline::Plain), &train, 16).unwrap();
    let before = (bits(&teacher.encoder), bits(&teacher.decoder));
    let plain = train_student_plain(&small_plan(Pipeline::Plain), &train, 16).unwrap();
    let kd_plan = TrainPlan { kd_beta0: Some(0.0), ..small_plan(Pipeline::VanillaKd) };
    let kd = train_student_kd(&kd_plan, &train, &teacher.encoder, &teacher.decoder, 16).unwrap();
    assert!(same_pair(&kd, &plain));

    let auto = train_student_kd(&small_plan(Pipeline::VanillaKd), &train, &teacher.encoder, &teacher.decoder, 16).unwrap();
    let beta0 = auto.kd_beta0.unwrap();
    assert!(beta0 > 0.0 && beta0 < 1.0);
    assert_eq!(auto.history[0].weight, beta0);
    assert_eq!(auto.history.len(), 8);
    assert_eq!((bits(&teacher.encoder), bits(&teacher.decoder)), before);
}

#[test]
fn teacher_needs_the_plain_pipeline() {
    let (train, _) = data(10, 1, 8, 8);
    assert!(train_teacher(&small_plan(Pipeline::CodewordMimic), &train, 16).is_err());
}
