//! Finite-difference reports for individual kernels.

use ndarray::{Array1, Array2};
use openaff::nn::{self, finite_difference_check, GradCheckConfig, GradCheckReport, ParameterStore, Probe};

use super::{normal_matrix, rng};

fn add_matrix(store: &mut ParameterStore, name: &str, m: &Array2<f64>) -> nn::ParamId {
    store
        .register(name, vec![m.nrows(), m.ncols()], m.iter().copied().collect(), true)
        .unwrap()
}

fn add_vector(store: &mut ParameterStore, name: &str, v: &Array1<f64>) -> nn::ParamId {
    store.register(name, vec![v.len()], v.to_vec(), true).unwrap()
}

fn no_kinks(loss: f64) -> Probe {
    Probe { loss, kinks: 0 }
}

/// `⟨R, out⟩` for a fixed random `R` makes any matrix-valued kernel a scalar.
fn project(r: &Array2<f64>, out: &Array2<f64>) -> f64 {
    (r * out).sum()
}

pub fn linear_report(seed: u64, corrupt: f64) -> GradCheckReport {
    let mut g = rng(seed);
    let (n, d_in, d_out) = (5, 4, 3);
    let mut store = ParameterStore::new();
    let x = add_matrix(&mut store, "x", &normal_matrix(&mut g, n, d_in));
    let w = add_matrix(&mut store, "w", &normal_matrix(&mut g, d_in, d_out));
    let b = add_vector(&mut store, "b", &normal_matrix(&mut g, 1, d_out).row(0).to_owned());
    let r = normal_matrix(&mut g, n, d_out);
    let lg = nn::linear_backward(store.matrix(x), store.matrix(w), r.view());
    let mut grads = store.zero_gradients();
    grads.add_matrix(x, lg.input.view());
    grads.add_matrix(w, lg.weight.view());
    grads.add_vector(b, lg.bias.view());
    grads.scale(corrupt);
    finite_difference_check(
        &store,
        &grads,
        |s| {
            no_kinks(project(
                &r,
                &nn::pointwise_linear(s.matrix(x), s.matrix(w), s.vector(b)).unwrap(),
            ))
        },
        GradCheckConfig::default(),
    )
}

pub fn relu_report(seed: u64) -> GradCheckReport {
    let mut g = rng(100 + seed);
    let mut store = ParameterStore::new();
    let x = add_matrix(&mut store, "x", &normal_matrix(&mut g, 6, 4));
    let r = normal_matrix(&mut g, 6, 4);
    let mut grads = store.zero_gradients();
    grads.add_matrix(x, nn::relu_backward(store.matrix(x), r.view()).view());
    finite_difference_check(
        &store,
        &grads,
        |s| {
            let pre = s.matrix(x);
            let kinks = pre
                .iter()
                .fold(0u64, |h, &v| h.wrapping_mul(31).wrapping_add((v > 0.0) as u64));
            Probe {
                loss: project(&r, &nn::relu(pre)),
                kinks,
            }
        },
        GradCheckConfig::default(),
    )
}

pub fn batch_norm_report(seed: u64) -> GradCheckReport {
    let mut g = rng(200 + seed);
    let (n, d) = (7, 3);
    let mut store = ParameterStore::new();
    let x = add_matrix(&mut store, "x", &normal_matrix(&mut g, n, d));
    let gain = add_vector(
        &mut store,
        "gain",
        &(normal_matrix(&mut g, 1, d).row(0).to_owned() + 1.0),
    );
    let shift = add_vector(&mut store, "shift", &normal_matrix(&mut g, 1, d).row(0).to_owned());
    let r = normal_matrix(&mut g, n, d);
    let (_, cache) = nn::batch_norm_train(store.matrix(x), store.vector(gain), store.vector(shift), 1e-5).unwrap();
    let (dx, dgain, dshift) = nn::batch_norm_backward(&cache, store.vector(gain), r.view());
    let mut grads = store.zero_gradients();
    grads.add_matrix(x, dx.view());
    grads.add_vector(gain, dgain.view());
    grads.add_vector(shift, dshift.view());
    finite_difference_check(
        &store,
        &grads,
        |s| {
            let (out, _) = nn::batch_norm_train(s.matrix(x), s.vector(gain), s.vector(shift), 1e-5).unwrap();
            no_kinks(project(&r, &out))
        },
        GradCheckConfig::default(),
    )
}

pub fn max_pool_report(seed: u64) -> GradCheckReport {
    let mut g = rng(300 + seed);
    let mut store = ParameterStore::new();
    let x = add_matrix(&mut store, "x", &normal_matrix(&mut g, 6, 4));
    let r = normal_matrix(&mut g, 1, 4).row(0).to_owned();
    let (_, argmax) = nn::max_pool_points(store.matrix(x));
    let mut grads = store.zero_gradients();
    grads.add_matrix(x, nn::max_pool_backward(&argmax, 6, r.view()).view());
    finite_difference_check(
        &store,
        &grads,
        |s| {
            let (pooled, argmax) = nn::max_pool_points(s.matrix(x));
            let kinks = argmax
                .iter()
                .fold(0u64, |h, &i| h.wrapping_mul(131).wrapping_add(i as u64));
            Probe {
                loss: (&r * &pooled).sum(),
                kinks,
            }
        },
        GradCheckConfig::default(),
    )
}

pub fn log_softmax_report(seed: u64) -> GradCheckReport {
    let mut g = rng(400 + seed);
    let mut store = ParameterStore::new();
    let x = add_matrix(&mut store, "x", &(normal_matrix(&mut g, 4, 5) * 3.0));
    let r = normal_matrix(&mut g, 4, 5);
    let out = nn::log_softmax_rows(store.matrix(x));
    let mut grads = store.zero_gradients();
    grads.add_matrix(x, nn::log_softmax_backward(out.view(), r.view()).view());
    finite_difference_check(
        &store,
        &grads,
        |s| no_kinks(project(&r, &nn::log_softmax_rows(s.matrix(x)))),
        GradCheckConfig::default(),
    )
}
