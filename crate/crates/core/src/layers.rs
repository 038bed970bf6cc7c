//! Two-layer feed-forward stack with a GELU between the projections — the
//! building block shared by the adapters, the encoder residual blocks, and
//! the decoder FFN.

use crate::error::Result;
use crate::numerics::{
    gelu, gelu_grad, matmul, matmul_transpose_a, matmul_transpose_b, Matrix, Rng,
};

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub w1: Matrix, // in x hidden
    pub b1: Matrix, // 1 x hidden
    pub w2: Matrix, // hidden x out
    pub b2: Matrix, // 1 x out
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    input: Matrix,
    pre_act: Matrix,
    act: Matrix,
}

impl FeedForward {
    /// Xavier-style init.
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        let s1 = (2.0 / (input + hidden) as f64).sqrt();
        let s2 = (2.0 / (hidden + output) as f64).sqrt();
        FeedForward {
            w1: rng.matrix_normal(input, hidden, s1),
            b1: Matrix::zeros(1, hidden),
            w2: rng.matrix_normal(hidden, output, s2),
            b2: Matrix::zeros(1, output),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        FeedForward {
            w1: Matrix::zeros(input, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(hidden, output),
            b2: Matrix::zeros(1, output),
        }
    }

    pub fn zeros_like(&self) -> Self {
        FeedForward {
            w1: self.w1.zeros_like(),
            b1: self.b1.zeros_like(),
            w2: self.w2.zeros_like(),
            b2: self.b2.zeros_like(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, FeedForwardCache)> {
        let mut pre_act = matmul(input, &self.w1)?;
        for r in 0..pre_act.rows() {
            for c in 0..pre_act.cols() {
                let v = pre_act.get(r, c) + self.b1.get(0, c);
                pre_act.set(r, c, v);
            }
        }
        let mut act = pre_act.zeros_like();
        for (a, &p) in act.data_mut().iter_mut().zip(pre_act.data()) {
            *a = gelu(p);
        }
        let mut out = matmul(&act, &self.w2)?;
        for r in 0..out.rows() {
            for c in 0..out.cols() {
                let v = out.get(r, c) + self.b2.get(0, c);
                out.set(r, c, v);
            }
        }
        Ok((out, FeedForwardCache { input: input.clone(), pre_act, act }))
    }

    /// Returns (gradients, d_input).
    pub fn backward(
        &self,
        cache: &FeedForwardCache,
        d_out: &Matrix,
    ) -> Result<(FeedForward, Matrix)> {
        let mut grads = self.zeros_like();
        grads.w2 = matmul_transpose_a(&cache.act, d_out)?;
        for r in 0..d_out.rows() {
            for c in 0..d_out.cols() {
                let v = grads.b2.get(0, c) + d_out.get(r, c);
                grads.b2.set(0, c, v);
            }
        }
        let mut d_pre = matmul_transpose_b(d_out, &self.w2)?;
        for (dp, &p) in d_pre.data_mut().iter_mut().zip(cache.pre_act.data()) {
            *dp *= gelu_grad(p);
        }
        grads.w1 = matmul_transpose_a(&cache.input, &d_pre)?;
        for r in 0..d_pre.rows() {
            for c in 0..d_pre.cols() {
                let v = grads.b1.get(0, c) + d_pre.get(r, c);
                grads.b1.set(0, c, v);
            }
        }
        let d_input = matmul_transpose_b(&d_pre, &self.w1)?;
        Ok((grads, d_input))
    }

    pub fn accumulate(&mut self, other: &FeedForward) {
        self.w1.add_assign(&other.w1);
        self.b1.add_assign(&other.b1);
        self.w2.add_assign(&other.w2);
        self.b2.add_assign(&other.b2);
    }

    /// Visit tensors in a fixed order under `prefix`; the order is part of
    /// the checkpoint format.
    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        f(format!("{prefix}.w1"), &self.w1);
        f(format!("{prefix}.b1"), &self.b1);
        f(format!("{prefix}.w2"), &self.w2);
        f(format!("{prefix}.b2"), &self.b2);
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        f(format!("{prefix}.w1"), &mut self.w1);
        f(format!("{prefix}.b1"), &mut self.b1);
        f(format!("{prefix}.w2"), &mut self.w2);
        f(format!("{prefix}.b2"), &mut self.b2);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    #[test]
    fn zero_weights_give_zero_output() {
        let ff = FeedForward::zeros(3, 4, 2);
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        let (out, _) = ff.forward(&x).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_pass_finite_difference_check() {
        let mut rng = Rng::new(2024);
        let ff = FeedForward::init(3, 5, 2, &mut rng);
        let x = rng.matrix_uniform(4, 3, -1.0, 1.0);
        let probe = rng.matrix_uniform(4, 2, -1.0, 1.0);

        // Scalar objective: sum(out * probe). Flatten params + input.
        let mut flat: Vec<f64> = Vec::new();
        for m in [&ff.w1, &ff.b1, &ff.w2, &ff.b2] {
            flat.extend_from_slice(m.data());
        }
        flat.extend_from_slice(x.data());

        let rebuild = |p: &[f64]| -> (FeedForward, Matrix) {
            let mut at = 0;
            let mut take = |rows: usize, cols: usize| {
                let m = Matrix::from_vec(rows, cols, p[at..at + rows * cols].to_vec()).unwrap();
                at += rows * cols;
                m
            };
            let ff = FeedForward {
                w1: take(3, 5),
                b1: take(1, 5),
                w2: take(5, 2),
                b2: take(1, 2),
            };
            let x = take(4, 3);
            (ff, x)
        };

        let (out, cache) = ff.forward(&x).unwrap();
        let _ = out;
        let (grads, d_x) = ff.backward(&cache, &probe).unwrap();
        let mut analytic: Vec<f64> = Vec::new();
        for m in [&grads.w1, &grads.b1, &grads.w2, &grads.b2] {
            analytic.extend_from_slice(m.data());
        }
        analytic.extend_from_slice(d_x.data());

        let mut f = |p: &[f64]| {
            let (ff, x) = rebuild(p);
            let (out, _) = ff.forward(&x)?;
            Ok(out.data().iter().zip(probe.data()).map(|(o, q)| o * q).sum())
        };
        let err = grad_check(&mut f, &analytic, &flat, 1e-5).unwrap();
        assert!(err <= 1e-4, "rel error {err}");
    }
}
