//! Dense `f64` matrix kernels with tape-based reverse-mode differentiation.
//!
//! Forward operations are methods on [`Tape`]; each records enough to apply
//! its vector-Jacobian rule during [`Tape::backward`]. Plain (untaped)
//! kernels are available for code paths that never differentiate.

mod tape;
mod tensor;

pub use tape::{finite_diff_check, layer_norm_rows, softmax_rows, Gradients, Tape, Var};
pub use tensor::{ShapeError, Tensor2};

use alloc::vec::Vec;

/// A learnable tensor and its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor2,
    pub grad: Tensor2,
}

impl Param {
    pub fn new(value: Tensor2) -> Self {
        let grad = Tensor2::zeros(value.rows(), value.cols());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Collect (name, param) pairs from a visiting closure walk, in walk order.
pub fn collect_param_names(visit: impl FnOnce(&mut dyn FnMut(&str, &Param))) -> Vec<alloc::string::String> {
    let mut names = Vec::new();
    visit(&mut |name, _| names.push(alloc::string::String::from(name)));
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn grad_of_sum(f: impl Fn(&mut Tape, Var) -> Var, input: Tensor2) -> Tensor2 {
        let mut tape = Tape::new();
        let x = tape.leaf(input);
        let y = f(&mut tape, x);
        let grads = tape.backward(y, Tensor2::scalar(1.0)).unwrap();
        grads.wrt(x).unwrap().clone()
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let g = grad_of_sum(|t, x| t.sum(x), Tensor2::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]));
        assert_eq!(g, Tensor2::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]));
    }

    #[test]
    fn squared_sum_gradient_is_two_x() {
        let x = Tensor2::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]);
        let g = grad_of_sum(
            |t, v| {
                let sq = t.hadamard(v, v).unwrap();
                t.sum(sq)
            },
            x.clone(),
        );
        assert_eq!(g, x.scale(2.0));
    }

    #[test]
    fn relu_forward_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor2::from_rows(&[&[-1.0, 2.0]]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y), &Tensor2::from_rows(&[&[0.0, 2.0]]));

        let all_neg = tape.constant(Tensor2::from_rows(&[&[-3.0, -0.1]]));
        let z = tape.relu(all_neg);
        assert_eq!(tape.value(z), &Tensor2::from_rows(&[&[0.0, 0.0]]));
    }

    #[test]
    fn softmax_examples() {
        let y = softmax_rows(&Tensor2::from_rows(&[&[0.0, 0.0]]));
        assert!((y.get(0, 0) - 0.5).abs() < 1e-12);
        let y = softmax_rows(&Tensor2::from_rows(&[&[0.0, 3.0f64.ln()]]));
        assert!((y.get(0, 0) - 0.25).abs() < 1e-12);
        assert!((y.get(0, 1) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_constant_row_yields_bias() {
        let x = Tensor2::from_rows(&[&[5.0, 5.0, 5.0]]);
        let y = layer_norm_rows(&x, &[1.0, 1.0, 1.0], &[0.3, -0.2, 0.0], 1e-5);
        for (v, b) in y.row(0).iter().zip([0.3, -0.2, 0.0]) {
            assert!((v - b).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_two_point_row() {
        let x = Tensor2::from_rows(&[&[1.0, 3.0]]);
        let y = layer_norm_rows(&x, &[1.0, 1.0], &[0.0, 0.0], 1e-12);
        assert!((y.get(0, 0) + 1.0).abs() < 1e-9);
        assert!((y.get(0, 1) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn finite_diff_quadratic_is_tight() {
        let params = vec![Tensor2::from_rows(&[&[1.0, -0.5], &[2.0, 0.25]])];
        let analytic = vec![params[0].scale(2.0)];
        let mut p = params;
        let err = finite_diff_check(
            &mut p,
            &analytic,
            |ps| ps[0].data().iter().map(|v| v * v).sum(),
            1e-5,
        );
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn finite_diff_matmul_relu_layer_norm() {
        // One leaf through matmul -> relu -> layer_norm -> sum; inputs chosen
        // away from the relu kink.
        let w0 = Tensor2::from_rows(&[&[0.8, -0.4, 0.3], &[0.2, 0.9, -0.7], &[0.5, 0.1, 0.6]]);
        let x0 = Tensor2::from_rows(&[&[1.2, -0.3, 0.4], &[0.6, 0.7, -1.1]]);
        let gain = Tensor2::from_rows(&[&[1.1, 0.9, 1.3]]);
        let bias = Tensor2::from_rows(&[&[0.1, -0.2, 0.0]]);

        let run = |ps: &[Tensor2]| -> (f64, Option<Vec<Tensor2>>) {
            let mut tape = Tape::new();
            let w = tape.leaf(ps[0].clone());
            let g = tape.leaf(ps[1].clone());
            let b = tape.leaf(ps[2].clone());
            let x = tape.constant(x0.clone());
            let xw = tape.matmul(x, w).unwrap();
            let r = tape.relu(xw);
            let ln = tape.layer_norm_rows(r, g, b, 1e-5).unwrap();
            let s = tape.sum(ln);
            let loss = tape.value(s).item();
            let grads = tape.backward(s, Tensor2::scalar(1.0)).unwrap();
            (
                loss,
                Some(alloc::vec![
                    grads.wrt(w).unwrap().clone(),
                    grads.wrt(g).unwrap().clone(),
                    grads.wrt(b).unwrap().clone(),
                ]),
            )
        };

        let mut params = vec![w0, gain, bias];
        let analytic = run(&params).1.unwrap();
        let err = finite_diff_check(&mut params, &analytic, |ps| run(ps).0, 1e-5);
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn backward_with_no_operations_is_a_noop() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor2::scalar(4.0));
        let grads = tape.backward(c, Tensor2::scalar(1.0)).unwrap();
        assert!(grads.wrt(c).is_none());
    }

    #[test]
    fn backward_seed_shape_checked() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor2::zeros(2, 2));
        assert!(tape.backward(x, Tensor2::scalar(1.0)).is_err());
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut tape = Tape::new();
        let n = 3;
        let c = 4;
        let logits = tape.leaf(Tensor2::zeros(n, c));
        let loss = tape.cross_entropy_rows(logits, &[0, 1, 3], 0.0).unwrap();
        let expect = n as f64 * (c as f64).ln();
        assert!((tape.value(loss).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn triplet_hinge_hand_cases() {
        let mut tape = Tape::new();
        // rows: anchor (0,0), positive (1,0), negative (0,2)
        let x = tape.leaf(Tensor2::from_rows(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 2.0]]));
        let l = tape
            .triplet_hinge(x, &[[0, 1, 2]], &[1.0], 1.0)
            .unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        let mut tape = Tape::new();
        // anchor (0,0), positive (2,0), negative (1,0)
        let x = tape.leaf(Tensor2::from_rows(&[&[0.0, 0.0], &[2.0, 0.0], &[1.0, 0.0]]));
        let l = tape
            .triplet_hinge(x, &[[0, 1, 2]], &[2.0], 1.0)
            .unwrap();
        assert_eq!(tape.value(l).item(), 6.0);
    }
}
