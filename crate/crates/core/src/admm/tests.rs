use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::synth_classification;
use crate::nn::{sgd_step, Activation, LayerSpec};
use crate::train::sgd_epoch;
use crate::tt::{RankSpec, TensorizationMap};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], seed: u64) -> DenseTensor {
    let mut r = rng(seed);
    DenseTensor::from_fn(shape, |_| r.random_range(-1.0..1.0)).unwrap()
}

/// Matrix-rank target for an `m×n` weight: a d=2 map whose unfolding is the matrix.
fn matrix_target(m: usize, n: usize, rank: usize) -> TtTarget {
    TtTarget {
        map: TensorizationMap::fc(vec![m, 1], vec![1, n]).unwrap(),
        ranks: RankSpec::new(vec![1, rank, 1]).unwrap(),
    }
}

fn truncated_svd_oracle(a: &DenseTensor, rank: usize) -> DenseTensor {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let mat = DMatrix::from_row_slice(m, n, a.data());
    let svd = mat.svd(true, true);
    let mut s = svd.singular_values.clone();
    // nalgebra does not promise an order
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    for &i in &order[rank..] {
        s[i] = 0.0;
    }
    let r = svd.u.unwrap() * DMatrix::from_diagonal(&s) * svd.v_t.unwrap();
    DenseTensor::from_fn(&[m, n], |ix| r[(ix[0], ix[1])]).unwrap()
}

fn mlp_specs(tt: Option<TtTarget>) -> Vec<LayerSpec> {
    vec![
        LayerSpec::DenseFc {
            inputs: 6,
            outputs: 8,
            activation: Activation::Relu,
            tt,
        },
        LayerSpec::DenseFc {
            inputs: 8,
            outputs: 3,
            activation: Activation::None,
            tt: None,
        },
    ]
}

fn fc_target() -> TtTarget {
    TtTarget {
        map: TensorizationMap::fc(vec![2, 4], vec![3, 2]).unwrap(),
        ranks: RankSpec::new(vec![1, 2, 1]).unwrap(),
    }
}

fn random_state(net: &Network, seed: u64, rho: f64) -> AdmmState {
    let w = net.layers()[0].dense_weight().unwrap();
    let mut state = AdmmState::new(&[w], vec![fc_target()], rho, 1e-3, 10).unwrap();
    state.slots[0].z = random(w.shape(), seed);
    state.slots[0].u = random(w.shape(), seed + 1);
    state
}

#[test]
fn augmented_loss_trivial_cases() {
    let net = Network::from_specs(&mlp_specs(Some(fc_target())), &mut rng(1)).unwrap();
    let ds = synth_classification(2, 10, 6, 3).unwrap();
    let plain = {
        let logits = net.predict(ds.inputs(), 10).unwrap();
        crate::nn::cross_entropy(&logits, ds.labels(), 3).unwrap().0
    };
    let w = net.layers()[0].dense_weight().unwrap();
    let fresh = AdmmState::new(&[w], vec![fc_target()], 0.7, 1e-3, 1).unwrap();
    assert_eq!(
        augmented_loss(&net, &[0], ds.inputs(), ds.labels(), &fresh).unwrap(),
        plain
    );
    let zero_rho = random_state(&net, 5, 0.0);
    assert_eq!(
        augmented_loss(&net, &[0], ds.inputs(), ds.labels(), &zero_rho).unwrap(),
        plain
    );
}

#[test]
fn augmented_loss_matches_elementwise_sum() {
    let net = Network::from_specs(&mlp_specs(Some(fc_target())), &mut rng(2)).unwrap();
    let ds = synth_classification(3, 10, 6, 3).unwrap();
    let state = random_state(&net, 7, 0.3);
    let w = net.layers()[0].dense_weight().unwrap();
    let logits = net.predict(ds.inputs(), 10).unwrap();
    let mut oracle = 0.0;
    for (row, &y) in logits.chunks(3).zip(ds.labels()) {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        oracle -= (row[y].exp() / z).ln();
    }
    oracle /= 10.0;
    for i in 0..w.shape()[0] {
        for j in 0..w.shape()[1] {
            let d = w.get(&[i, j]).unwrap() - state.slots[0].z.get(&[i, j]).unwrap()
                + state.slots[0].u.get(&[i, j]).unwrap();
            oracle += 0.15 * d * d;
        }
    }
    let got = augmented_loss(&net, &[0], ds.inputs(), ds.labels(), &state).unwrap();
    assert!((got - oracle).abs() < 1e-10);
}

#[test]
fn w_update_gradient_matches_finite_differences() {
    let mut net = Network::from_specs(&mlp_specs(Some(fc_target())), &mut rng(3)).unwrap();
    let ds = synth_classification(4, 8, 6, 3).unwrap();
    let state = random_state(&net, 9, 0.4);
    let (x, y) = (ds.inputs().to_vec(), ds.labels().to_vec());
    let (_, mut grads) = net.loss_and_grads(&x, &y).unwrap();
    add_penalty(&net, &[0], &state, &mut grads).unwrap();
    let analytic = grads[0][0].clone();
    let h = 1e-5;
    let mut fd = analytic.clone();
    for e in 0..analytic.len() {
        let orig = net.layers()[0].dense_weight().unwrap().data()[e];
        net.layers_mut()[0].dense_weight_mut().unwrap().data_mut()[e] = orig + h;
        let up = augmented_loss(&net, &[0], &x, &y, &state).unwrap();
        net.layers_mut()[0].dense_weight_mut().unwrap().data_mut()[e] = orig - h;
        let down = augmented_loss(&net, &[0], &x, &y, &state).unwrap();
        net.layers_mut()[0].dense_weight_mut().unwrap().data_mut()[e] = orig;
        fd.data_mut()[e] = (up - down) / (2.0 * h);
    }
    let rel = fd.sub(&analytic).unwrap().frobenius_norm() / analytic.frobenius_norm();
    assert!(rel < 1e-5, "relative error {rel}");
}

#[test]
fn w_update_with_zero_rho_is_plain_sgd() {
    let specs = mlp_specs(Some(fc_target()));
    let mut a = Network::from_specs(&specs, &mut rng(4)).unwrap();
    let mut b = a.clone();
    let ds = synth_classification(5, 8, 6, 3).unwrap();
    let state = random_state(&a, 11, 0.0);
    w_update(&mut a, &[0], ds.inputs(), ds.labels(), &state, &mut Sgd::new(0.1, 0.0)).unwrap();
    let (_, grads) = b.loss_and_grads(ds.inputs(), ds.labels()).unwrap();
    for (layer, lg) in b.layers_mut().iter_mut().zip(&grads) {
        for (p, g) in layer.params_mut().into_iter().zip(lg) {
            sgd_step(p, g, 0.1).unwrap();
        }
    }
    assert_eq!(a, b);
}

#[test]
fn w_update_at_penalty_minimum_with_zero_data_gradient() {
    // single-layer net with zero input: the weight gets no data gradient
    let specs = [LayerSpec::DenseFc {
        inputs: 6,
        outputs: 8,
        activation: Activation::None,
        tt: Some(fc_target()),
    }];
    let mut net = Network::from_specs(&specs, &mut rng(5)).unwrap();
    let w0 = net.layers()[0].dense_weight().unwrap().clone();
    let mut state = AdmmState::new(&[&w0], vec![fc_target()], 0.5, 1e-3, 1).unwrap();
    state.slots[0].u = random(w0.shape(), 12);
    state.slots[0].z = w0.add(&state.slots[0].u).unwrap();
    w_update(&mut net, &[0], &[0.0; 6], &[1], &state, &mut Sgd::new(0.1, 0.0)).unwrap();
    assert!(net.layers()[0].dense_weight().unwrap().max_abs_diff(&w0).unwrap() < 1e-15);
}

#[test]
fn z_update_feasible_input_is_kept() {
    let target = matrix_target(5, 4, 2);
    let low = truncated_svd_oracle(&random(&[5, 4], 13), 2);
    let mut state = AdmmState::new(&[&low], vec![target], 1.0, 1e-3, 1).unwrap();
    state.z_update(&[&low]).unwrap();
    assert!(state.slots[0].z.max_abs_diff(&low).unwrap() < 1e-9);
}

#[test]
fn z_update_matches_truncated_svd_oracle() {
    for seed in 0..10 {
        let w = random(&[7, 5], 100 + seed);
        let u = random(&[7, 5], 200 + seed);
        let mut state = AdmmState::new(&[&w], vec![matrix_target(7, 5, 2)], 1.0, 1e-3, 1).unwrap();
        state.slots[0].u = u.clone();
        state.z_update(&[&w]).unwrap();
        let want = truncated_svd_oracle(&w.add(&u).unwrap(), 2);
        assert!(state.slots[0].z.max_abs_diff(&want).unwrap() < 1e-9);
    }
}

#[test]
fn z_update_is_rank_feasible() {
    let w = random(&[8, 6], 14);
    let target = fc_target();
    let mut state = AdmmState::new(&[&w], vec![target.clone()], 1.0, 1e-3, 1).unwrap();
    state.slots[0].u = random(&[8, 6], 15);
    state.z_update(&[&w]).unwrap();
    let z = &state.slots[0].z;
    assert!(project_weight(z, &target).unwrap().sub(z).unwrap().frobenius_norm() < 1e-9);
}

#[test]
fn z_update_conv_kernel() {
    let target = TtTarget {
        map: TensorizationMap::conv(3, vec![2, 2], vec![2, 2]).unwrap(),
        ranks: RankSpec::uniform(3, 2).unwrap(),
    };
    let w = random(&[3, 3, 4, 4], 16);
    let mut state = AdmmState::new(&[&w], vec![target.clone()], 1.0, 1e-3, 1).unwrap();
    state.z_update(&[&w]).unwrap();
    let z = &state.slots[0].z;
    assert_eq!(z.shape(), w.shape());
    assert!(project_weight(z, &target).unwrap().sub(z).unwrap().frobenius_norm() < 1e-9);
}

#[test]
fn u_update_cases() {
    let w = random(&[3, 4], 17);
    let target = matrix_target(3, 4, 1);
    let mut state = AdmmState::new(&[&w], vec![target.clone()], 1.0, 1e-3, 1).unwrap();
    state.u_update(&[&w]).unwrap();
    assert!(state.slots[0].u.data().iter().all(|&u| u == 0.0));

    let z = random(&[3, 4], 18);
    state.slots[0].z = z.clone();
    state.u_update(&[&w]).unwrap();
    assert_eq!(state.slots[0].u, w.sub(&z).unwrap());
}

#[test]
fn u_update_telescopes() {
    let target = matrix_target(2, 3, 1);
    let w0 = random(&[2, 3], 19);
    let mut state = AdmmState::new(&[&w0], vec![target], 1.0, 1e-3, 1).unwrap();
    let mut expected = vec![0.0f64; 6];
    for k in 0..3 {
        let w = random(&[2, 3], 30 + k);
        let z = random(&[2, 3], 40 + k);
        state.slots[0].z = z.clone();
        let before = state.slots[0].u.clone();
        state.u_update(&[&w]).unwrap();
        for e in 0..6 {
            expected[e] += w.data()[e] - z.data()[e];
            // exactness of the single step
            assert_eq!(state.slots[0].u.data()[e] - before.data()[e], w.data()[e] - z.data()[e]);
        }
        assert_eq!(state.slots[0].u.data(), expected.as_slice());
    }
}

/// `ℓ(W) = ½‖W − A‖²` with `lr` gradient steps per epoch.
struct Quadratic {
    w: DenseTensor,
    a: DenseTensor,
    lr: f64,
    steps: usize,
}

impl AdmmProblem for Quadratic {
    fn weights(&self) -> Vec<&DenseTensor> {
        vec![&self.w]
    }

    fn w_epoch(&mut self, state: &AdmmState, _epoch: usize) -> Result<f64> {
        for _ in 0..self.steps {
            let mut grad = self.w.sub(&self.a)?;
            state.add_penalty_grad(0, &self.w, &mut grad);
            sgd_step(&mut self.w, &grad, self.lr)?;
        }
        Ok(0.5 * self.w.sub(&self.a)?.frobenius_norm().powi(2))
    }
}

#[test]
fn quadratic_toy_converges_to_truncation() {
    let a = random(&[4, 4], 20);
    let mut problem = Quadratic {
        w: a.clone(),
        a: a.clone(),
        lr: 0.1,
        steps: 5,
    };
    let mut state = AdmmState::new(&[&a], vec![matrix_target(4, 4, 2)], 1.0, 1e-12, 500).unwrap();
    let history = run_admm(&mut problem, &mut state, 0).unwrap();
    assert!(history.len() <= 500);
    let rel = state.relative_residual(&[&problem.w]).unwrap();
    assert!(rel < 1e-4, "relative residual {rel}");
    let oracle = truncated_svd_oracle(&a, 2);
    assert!(problem.w.sub(&oracle).unwrap().frobenius_norm() < 1e-2);
}

#[test]
fn infinite_epsilon_runs_one_iteration() {
    let a = random(&[4, 4], 21);
    let mut problem = Quadratic {
        w: a.clone(),
        a: a.clone(),
        lr: 0.1,
        steps: 1,
    };
    let mut state = AdmmState::new(&[&a], vec![matrix_target(4, 4, 2)], 1.0, f64::INFINITY, 100).unwrap();
    let history = run_admm(&mut problem, &mut state, 3).unwrap();
    assert_eq!(history.len(), 1);
    assert_eq!((history[0].iteration, history[0].epoch), (1, 4));
}

#[test]
fn bad_settings_rejected() {
    let w = random(&[4, 4], 22);
    assert!(AdmmState::new(&[&w], vec![matrix_target(4, 4, 2)], -1.0, 1e-3, 1).is_err());
    assert!(AdmmState::new(&[&w], vec![matrix_target(4, 4, 2)], 1.0, 0.0, 1).is_err());
    assert!(AdmmState::new(&[&w], vec![matrix_target(5, 4, 2)], 1.0, 1e-3, 1).is_err());
    assert!(AdmmState::new(&[&w], vec![], 1.0, 1e-3, 1).is_err());
}

fn network_run(rho: f64, seed: u64) -> (Network, Vec<HistoryRow>) {
    let train = synth_classification(6, 120, 6, 3).unwrap();
    let test = synth_classification(7, 60, 6, 3).unwrap();
    let mut net = Network::from_specs(&mlp_specs(Some(fc_target())), &mut rng(seed)).unwrap();
    let w = net.layers()[0].dense_weight().unwrap().clone();
    let mut state = AdmmState::new(&[&w], vec![fc_target()], rho, 1e-9, 4).unwrap();
    let sgd = SgdSettings {
        lr: 0.05,
        momentum: 0.9,
        batch_size: 16,
    };
    let mut problem = NetworkProblem::new(&mut net, vec![0], &train, Some(&test), sgd, seed).unwrap();
    let history = run_admm(&mut problem, &mut state, 0).unwrap();
    (net, history)
}

#[test]
fn network_admm_is_deterministic() {
    let (a, ha) = network_run(0.5, 8);
    let (b, hb) = network_run(0.5, 8);
    assert_eq!(ha, hb);
    assert_eq!(a, b);
    assert_eq!(ha.len(), 4);
    assert!(ha.iter().all(|r| r.test_accuracy.is_some()));
    let mut csv_a = Vec::new();
    write_history(&mut csv_a, &ha).unwrap();
    let text = String::from_utf8(csv_a).unwrap();
    assert!(text.starts_with("iteration,epoch,train_loss,residual_sq,test_accuracy\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn zero_rho_admm_is_plain_sgd() {
    let (admm_net, _) = network_run(0.0, 9);
    let train = synth_classification(6, 120, 6, 3).unwrap();
    let mut net = Network::from_specs(&mlp_specs(Some(fc_target())), &mut rng(9)).unwrap();
    let mut opt = Sgd::new(0.05, 0.9);
    for epoch in 1..=4 {
        sgd_epoch(&mut net, &train, &mut opt, 16, 9, epoch).unwrap();
    }
    assert_eq!(admm_net, net);
}

#[test]
fn larger_rho_pulls_weights_closer_to_the_constraint() {
    let (_, weak) = network_run(0.001, 10);
    let (_, strong) = network_run(5.0, 10);
    assert!(strong.last().unwrap().residual_sq < weak.last().unwrap().residual_sq);
}

#[test]
fn decompose_without_finetune() {
    let train = synth_classification(6, 120, 6, 3).unwrap();
    let test = synth_classification(7, 60, 6, 3).unwrap();
    let net = Network::from_specs(&mlp_specs(Some(fc_target())), &mut rng(11)).unwrap();
    let targets = vec![(0, fc_target())];
    let sgd = SgdSettings {
        lr: 0.01,
        momentum: 0.9,
        batch_size: 16,
    };
    let out = decompose_and_finetune(&net, &targets, &train, Some(&test), sgd, 0, 1, 0).unwrap();
    let direct = decompose(&net, &targets).unwrap();
    assert_eq!(out.net, direct);
    assert_eq!(out.decomposed_accuracy, Some(evaluate(&direct, &test).unwrap()));
    assert!(out.trace.is_empty());

    let tuned = decompose_and_finetune(&net, &targets, &train, Some(&test), sgd, 3, 1, 0).unwrap();
    assert_eq!(tuned.trace.len(), 3);
    assert_eq!(tuned.decomposed_accuracy, out.decomposed_accuracy);
    for (a, b) in tuned.net.layers().iter().zip(direct.layers()) {
        assert_eq!(a.kind(), b.kind());
        let shapes = |l: &crate::nn::Layer| l.params().iter().map(|p| p.shape().to_vec()).collect::<Vec<_>>();
        assert_eq!(shapes(a), shapes(b));
    }
    assert_ne!(tuned.net, direct);
}

#[test]
fn decompose_rejects_non_dense() {
    let net = Network::from_specs(&mlp_specs(Some(fc_target())), &mut rng(12)).unwrap();
    let once = decompose(&net, &[(0, fc_target())]).unwrap();
    assert!(decompose(&once, &[(0, fc_target())]).is_err());
    assert!(decompose(&net, &[(5, fc_target())]).is_err());
}
