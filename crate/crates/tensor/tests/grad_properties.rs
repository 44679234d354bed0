//! Property tests for the gradient tape: reverse-mode gradients agree with
//! central finite differences on randomized inputs, and evaluation is
//! deterministic.

use pdalab_tensor::{backward, softmax_logloss, softmax_logloss_value, Tape, Tensor};
use proptest::prelude::*;

const FD_H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

/// Loss: mean log-loss of relu(x·w) against fixed labels. Returns the value.
fn composite_value(x: &[f64], w: &[f64], n: usize, d: usize, m: usize, labels: &[usize]) -> f64 {
    let xt = Tensor::new(vec![n, d], x.to_vec()).unwrap();
    let wt = Tensor::new(vec![d, m], w.to_vec()).unwrap();
    let h = xt.matmul(&wt).unwrap().relu();
    softmax_logloss_value(&h, labels).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matmul_relu_logloss_gradient_matches_fd(
        x in proptest::collection::vec(-1.0f64..1.0, 6),
        w in proptest::collection::vec(-1.0f64..1.0, 6),
    ) {
        let (n, d, m) = (2usize, 3usize, 2usize);
        let labels = vec![0usize, 1];
        // keep pre-activations away from the relu kink so FD is well-posed
        let pre = Tensor::new(vec![n, d], x.clone()).unwrap()
            .matmul(&Tensor::new(vec![d, m], w.clone()).unwrap()).unwrap();
        prop_assume!(pre.data().iter().all(|v| v.abs() > 1e-3));

        let tape = Tape::new();
        let xv = tape.leaf(Tensor::new(vec![n, d], x.clone()).unwrap()).unwrap();
        let wv = tape.leaf(Tensor::new(vec![d, m], w.clone()).unwrap()).unwrap();
        let h = xv.matmul(&wv).unwrap().relu().unwrap();
        let loss = softmax_logloss(&h, &labels).unwrap();
        let grads = backward(&loss).unwrap();
        let gx = grads.wrt(&xv);
        let gw = grads.wrt(&wv);

        for i in 0..x.len() {
            let mut plus = x.clone();
            plus[i] += FD_H;
            let mut minus = x.clone();
            minus[i] -= FD_H;
            let fd = (composite_value(&plus, &w, n, d, m, &labels)
                - composite_value(&minus, &w, n, d, m, &labels)) / (2.0 * FD_H);
            prop_assert!(rel_err(gx.data()[i], fd) < REL_TOL,
                "x[{i}]: ad={} fd={fd}", gx.data()[i]);
        }
        for i in 0..w.len() {
            let mut plus = w.clone();
            plus[i] += FD_H;
            let mut minus = w.clone();
            minus[i] -= FD_H;
            let fd = (composite_value(&x, &plus, n, d, m, &labels)
                - composite_value(&x, &minus, n, d, m, &labels)) / (2.0 * FD_H);
            prop_assert!(rel_err(gw.data()[i], fd) < REL_TOL,
                "w[{i}]: ad={} fd={fd}", gw.data()[i]);
        }
    }

    #[test]
    fn conv_gradient_matches_fd(
        x in proptest::collection::vec(-1.0f64..1.0, 16),
        k in proptest::collection::vec(-1.0f64..1.0, 4),
    ) {
        // 1×1×4×4 input, 1×1×2×2 kernel, stride 1, padding 0; loss = sum of output
        let value = |x: &[f64], k: &[f64]| -> f64 {
            Tensor::new(vec![1, 1, 4, 4], x.to_vec()).unwrap()
                .conv2d(&Tensor::new(vec![1, 1, 2, 2], k.to_vec()).unwrap(), 1, 0)
                .unwrap()
                .data()
                .iter()
                .sum()
        };
        let tape = Tape::new();
        let xv = tape.leaf(Tensor::new(vec![1, 1, 4, 4], x.clone()).unwrap()).unwrap();
        let kv = tape.leaf(Tensor::new(vec![1, 1, 2, 2], k.clone()).unwrap()).unwrap();
        let loss = xv.conv2d(&kv, 1, 0).unwrap().sum().unwrap();
        let grads = backward(&loss).unwrap();
        let gx = grads.wrt(&xv);
        let gk = grads.wrt(&kv);

        for i in 0..x.len() {
            let mut plus = x.clone();
            plus[i] += FD_H;
            let mut minus = x.clone();
            minus[i] -= FD_H;
            let fd = (value(&plus, &k) - value(&minus, &k)) / (2.0 * FD_H);
            prop_assert!(rel_err(gx.data()[i], fd) < REL_TOL);
        }
        for i in 0..k.len() {
            let mut plus = k.clone();
            plus[i] += FD_H;
            let mut minus = k.clone();
            minus[i] -= FD_H;
            let fd = (value(&x, &plus) - value(&x, &minus)) / (2.0 * FD_H);
            prop_assert!(rel_err(gk.data()[i], fd) < REL_TOL);
        }
    }

    #[test]
    fn evaluation_is_deterministic(
        x in proptest::collection::vec(-1.0f64..1.0, 12),
        w in proptest::collection::vec(-1.0f64..1.0, 8),
    ) {
        let run = || {
            let a = Tensor::new(vec![3, 4], x.clone()).unwrap();
            let b = Tensor::new(vec![4, 2], w.clone()).unwrap();
            a.matmul(&b).unwrap().relu()
        };
        let first = run();
        let second = run();
        for (p, q) in first.data().iter().zip(second.data()) {
            prop_assert_eq!(p.to_bits(), q.to_bits());
        }
    }
}
