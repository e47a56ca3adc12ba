mod common;

use common::*;
use daenr::autodiff::Graph;
use daenr::data::split;
use daenr::models::{vae_sample, Backbone, Model, ReadoutKind};
use daenr::tensor::Tensor;
use daenr::training::{
    adam_step, evaluate_rows, history_csv, params_digest, train, AdamState, TrainConfig,
};

fn quick(seed: u64, max_steps: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_steps,
        patience_steps: 40,
        eval_every: 10,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn adam_matches_scalar_recurrence() {
    let grads = [0.5, -1.5, 2.0, 0.1];
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8f64, 0.01);
    let (mut x, mut m, mut v) = (1.0f64, 0.0, 0.0);
    let mut p = Tensor::<f64>::scalar(1.0);
    let mut state = AdamState::new(std::slice::from_ref(&p));
    for (t, &g) in grads.iter().enumerate() {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32 + 1));
        let vh = v / (1.0 - b2.powi(t as i32 + 1));
        x -= lr * mh / (vh.sqrt() + eps);
        let gt = Tensor::scalar(g);
        adam_step(&mut [&mut p], &[Some(&gt)], &mut state, lr).unwrap();
        assert!((p.item().unwrap() - x).abs() < 1e-12, "step {t}");
    }
}

#[test]
fn vae_samples_have_the_requested_moments() {
    let n = 40_000;
    let (mu, lv) = (0.7, -0.4f64);
    let mut g = Graph::<f64>::new();
    let m = g.constant(Tensor::full(&[n], mu));
    let l = g.constant(Tensor::full(&[n], lv));
    let z = vae_sample(&mut g, m, l, 11).unwrap();
    let d = g.value(z).data();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    // Four standard errors.
    assert!((mean - mu).abs() < 4.0 * (lv.exp() / n as f64).sqrt());
    assert!((var - lv.exp()).abs() < 4.0 * lv.exp() * (2.0 / n as f64).sqrt());
}

#[test]
fn identical_seeds_replay_exactly() {
    let ds = tiny_region(2, 6, 48);
    let sp = split(ds.n_train(), 0.1, 0).unwrap();
    for backbone in [Backbone::Cae, Backbone::Vae, Backbone::Vqvae] {
        let run = || {
            let model = Model::<f32>::new(small_config(backbone, ReadoutKind::Fr, 2, 6)).unwrap();
            train(model, &ds, &sp, &quick(5, 30), |_| {}).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(
            history_csv(&a.history),
            history_csv(&b.history),
            "{backbone}"
        );
        assert_eq!(params_digest(&a.model), params_digest(&b.model));
    }
}

#[test]
fn frozen_model_keeps_its_starting_point() {
    let ds = tiny_region(3, 5, 40);
    let sp = split(ds.n_train(), 0.2, 0).unwrap();
    let mut model = Model::<f32>::new(small_config(Backbone::Cae, ReadoutKind::Fr, 1, 5)).unwrap();
    model.params_mut().iter_mut().for_each(|p| p.frozen = true);
    model
        .bn_states_mut()
        .iter_mut()
        .for_each(|s| s.momentum = 0.0);
    let out = train(model, &ds, &sp, &quick(1, 200), |_| {}).unwrap();
    // Nothing can improve on step 0, so each phase ends after exactly the
    // patience window and restores the initial parameters.
    assert_eq!(out.best_step, 0);
    assert_eq!(out.total_steps, 2 * 40);
    let start = &out.phase_start_digests[0];
    assert!(out.phase_start_digests.iter().all(|d| d == start));
    assert!(out.phase_best_digests.iter().all(|d| d == start));
    assert_eq!(&params_digest(&out.model), start);
    let first = out.history[0].val_total;
    assert!(out.history.iter().all(|r| r.val_total == first));
}

#[test]
fn returned_model_is_the_best_checkpoint() {
    let ds = tiny_region(4, 6, 64);
    let sp = split(ds.n_train(), 0.2, 1).unwrap();
    let model = Model::<f32>::new(small_config(Backbone::Cae, ReadoutKind::Fr, 3, 6)).unwrap();
    let out = train(model, &ds, &sp, &quick(2, 60), |_| {}).unwrap();
    let again = evaluate_rows(&out.model, &ds, &sp.val, 200).unwrap().total;
    assert_eq!(again, out.best_val_total);
    let min = out
        .history
        .iter()
        .map(|r| r.val_total)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(min, out.best_val_total);
    // Phase 2 starts from the phase-1 best.
    assert_eq!(out.phase_start_digests[1], out.phase_best_digests[0]);
}

#[test]
fn small_batch_can_be_memorized() {
    let ds = tiny_region(5, 4, 16);
    let rows: Vec<usize> = (0..16).collect();
    let sp = daenr::data::Split {
        train: rows.clone(),
        val: rows,
    };
    let mut cfg = small_config(Backbone::Cae, ReadoutKind::Fr, 2, 4);
    cfg.beta = 1e-2;
    let model = Model::<f32>::new(cfg).unwrap();
    let tc = TrainConfig {
        batch_size: 16,
        max_steps: 300,
        patience_steps: 300,
        eval_every: 50,
        phases: 1,
        lr_initial: 3e-3,
        ..TrainConfig::default()
    };
    let out = train(model, &ds, &sp, &tc, |_| {}).unwrap();
    let (first, last) = (&out.val_losses[0].1, out.val_losses.last().unwrap().1);
    assert!(
        last.recon < 0.5 * first.recon,
        "{} -> {}",
        first.recon,
        last.recon
    );
    assert!(last.neural < first.neural);
}

#[test]
fn cnm_and_backbone_baselines_skip_unused_parts() {
    let ds = tiny_region(6, 4, 32);
    let sp = split(ds.n_train(), 0.2, 0).unwrap();
    let mut cnm = small_config(Backbone::Cae, ReadoutKind::Fr, 2, 4);
    cnm.alpha = 0.0;
    cnm.beta = 1.0;
    let before = Model::<f32>::new(cnm).unwrap();
    let out = train(before.clone(), &ds, &sp, &quick(0, 20), |_| {}).unwrap();
    for (a, b) in before.params().iter().zip(out.model.params()) {
        if !a.name.starts_with("enc") && !a.name.starts_with("readout") {
            assert_eq!(a.value, b.value, "{} moved", a.name);
        }
    }
    assert!(out.val_losses.iter().all(|(_, l)| l.recon == 0.0));

    let mut plain = small_config(Backbone::Cae, ReadoutKind::Fr, 2, 4);
    plain.beta = 0.0;
    let out = train(
        Model::<f32>::new(plain).unwrap(),
        &ds,
        &sp,
        &quick(0, 20),
        |_| {},
    )
    .unwrap();
    assert!(out
        .val_losses
        .iter()
        .all(|(_, l)| l.neural == 0.0 && l.total == l.recon));
}
