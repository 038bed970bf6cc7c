//! Toy speech encoder: a strided local linear map over a window of raw
//! feature frames, followed by small residual blocks (linear + GELU +
//! linear). Stands in for a full conformer stack at desk scale.

use crate::error::{Error, Result};
use crate::layers::{FeedForward, FeedForwardCache};
use crate::numerics::{matmul, matmul_transpose_a, matmul_transpose_b, Matrix, Rng};

#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub window: usize,
    pub stride: usize,
    pub frame_map: Matrix, // (window * d_feat) x d_enc
    pub frame_bias: Matrix, // 1 x d_enc
    pub blocks: Vec<FeedForward>, // residual: x + block(x), d_enc -> d_enc -> d_enc
}

impl EncoderParams {
    pub fn init(
        d_feat: usize,
        d_enc: usize,
        window: usize,
        stride: usize,
        n_blocks: usize,
        rng: &mut Rng,
    ) -> Self {
        assert!(stride >= 1 && window >= 1);
        let fan_in = window * d_feat;
        let scale = (2.0 / (fan_in + d_enc) as f64).sqrt();
        EncoderParams {
            window,
            stride,
            frame_map: rng.matrix_normal(fan_in, d_enc, scale),
            frame_bias: Matrix::zeros(1, d_enc),
            blocks: (0..n_blocks)
                .map(|_| FeedForward::init(d_enc, d_enc, d_enc, rng))
                .collect(),
        }
    }

    pub fn d_feat(&self) -> usize {
        self.frame_map.rows() / self.window
    }

    pub fn d_enc(&self) -> usize {
        self.frame_map.cols()
    }

    /// Encoder output length for a raw input of `frames` rows.
    pub fn output_len(&self, frames: usize) -> usize {
        frames.div_ceil(self.stride)
    }

    pub fn zeros_like(&self) -> EncoderGrads {
        EncoderGrads {
            frame_map: self.frame_map.zeros_like(),
            frame_bias: self.frame_bias.zeros_like(),
            blocks: self.blocks.iter().map(|b| b.zeros_like()).collect(),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Matrix)) {
        f("encoder.frame_map".into(), &self.frame_map);
        f("encoder.frame_bias".into(), &self.frame_bias);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("encoder.block{i}"), f);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        f("encoder.frame_map".into(), &mut self.frame_map);
        f("encoder.frame_bias".into(), &mut self.frame_bias);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("encoder.block{i}"), f);
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub frame_map: Matrix,
    pub frame_bias: Matrix,
    pub blocks: Vec<FeedForward>,
}

impl EncoderGrads {
    pub fn accumulate(&mut self, other: &EncoderGrads) {
        self.frame_map.add_assign(&other.frame_map);
        self.frame_bias.add_assign(&other.frame_bias);
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.accumulate(b);
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Matrix)) {
        f("encoder.frame_map".into(), &self.frame_map);
        f("encoder.frame_bias".into(), &self.frame_bias);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("encoder.block{i}"), f);
        }
    }
}

pub struct EncoderCache {
    gathered: Matrix, // L x (window * d_feat)
    block_caches: Vec<FeedForwardCache>,
}

/// Maps raw feature frames to the encoder output sequence E.
/// Output length is ceil(frames / stride); windows past the end are
/// zero-padded.
pub fn encode(features: &Matrix, params: &EncoderParams) -> Result<(Matrix, EncoderCache)> {
    let frames = features.rows();
    if frames < params.window {
        return Err(Error::InputTooShort { got: frames, needed: params.window });
    }
    if features.cols() != params.d_feat() {
        return Err(Error::Dimension(format!(
            "feature width {} vs encoder d_feat {}",
            features.cols(),
            params.d_feat()
        )));
    }
    let out_len = params.output_len(frames);
    let d_feat = params.d_feat();
    let mut gathered = Matrix::zeros(out_len, params.window * d_feat);
    for i in 0..out_len {
        let row = gathered.row_mut(i);
        for k in 0..params.window {
            let src = i * params.stride + k;
            if src < frames {
                row[k * d_feat..(k + 1) * d_feat].copy_from_slice(features.row(src));
            }
        }
    }
    let mut x = matmul(&gathered, &params.frame_map)?;
    for r in 0..x.rows() {
        for c in 0..x.cols() {
            let v = x.get(r, c) + params.frame_bias.get(0, c);
            x.set(r, c, v);
        }
    }
    let mut block_caches = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (delta, cache) = block.forward(&x)?;
        x.add_assign(&delta);
        block_caches.push(cache);
    }
    Ok((x, EncoderCache { gathered, block_caches }))
}

/// Parameter gradients given the upstream gradient on E. The gradient with
/// respect to the raw features is not needed anywhere, so it is not formed.
pub fn encode_backward(
    params: &EncoderParams,
    cache: &EncoderCache,
    d_output: &Matrix,
) -> Result<EncoderGrads> {
    let mut grads = params.zeros_like();
    let mut dx = d_output.clone();
    for i in (0..params.blocks.len()).rev() {
        let (block_grads, d_in) = params.blocks[i].backward(&cache.block_caches[i], &dx)?;
        grads.blocks[i] = block_grads;
        dx.add_assign(&d_in);
    }
    grads.frame_map = matmul_transpose_a(&cache.gathered, &dx)?;
    for r in 0..dx.rows() {
        for c in 0..dx.cols() {
            let v = grads.frame_bias.get(0, c) + dx.get(r, c);
            grads.frame_bias.set(0, c, v);
        }
    }
    Ok(grads)
}
