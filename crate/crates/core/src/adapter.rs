//! The CTC-guided modality adapter and the linear-projection baseline.
//!
//! Both map encoder frames E into the language model's embedding space
//! without changing the temporal length. The CTC-guided variant projects each
//! frame to CTC logits (blank kept separate from the non-blank softmax), uses
//! the thresholded non-blank distribution to take a weighted combination of
//! embedding rows, and adds a gated residual of the frame itself.

use crate::ctc::CtcPosteriorSequence;
use crate::error::{Error, Result};
use crate::layers::{FeedForward, FeedForwardCache};
use crate::numerics::{sigmoid, softmax_backward, softmax_row, Matrix, Rng};

/// Parameters of the CTC-guided adapter.
///
/// `out_proj` ends in V+1 logits with the blank logit at index V; `res_proj`
/// ends in D+1 values with the gate logit at index D. Both conventions are
/// pinned by tests.
#[derive(Debug, Clone)]
pub struct CtcAdapterParams {
    pub out_proj: FeedForward, // d_enc -> hidden -> V+1
    pub res_proj: FeedForward, // d_enc -> hidden -> D+1
    pub tau: f64,
    /// Renormalize the thresholded weights to sum to one. Off by default:
    /// the weights are only zeroed, preserving the one-hot collapse limit.
    pub renormalize: bool,
}

impl CtcAdapterParams {
    pub fn init(d_enc: usize, d_model: usize, vocab: usize, hidden: usize, tau: f64, rng: &mut Rng) -> Self {
        CtcAdapterParams {
            out_proj: FeedForward::init(d_enc, hidden, vocab + 1, rng),
            res_proj: FeedForward::init(d_enc, hidden, d_model + 1, rng),
            tau,
            renormalize: false,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.out_proj.output_dim() - 1
    }

    pub fn zeros_like(&self) -> CtcAdapterGrads {
        CtcAdapterGrads {
            out_proj: self.out_proj.zeros_like(),
            res_proj: self.res_proj.zeros_like(),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Matrix)) {
        self.out_proj.visit("adapter.out_proj", f);
        self.res_proj.visit("adapter.res_proj", f);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        self.out_proj.visit_mut("adapter.out_proj", f);
        self.res_proj.visit_mut("adapter.res_proj", f);
    }
}

#[derive(Debug, Clone)]
pub struct CtcAdapterGrads {
    pub out_proj: FeedForward,
    pub res_proj: FeedForward,
}

impl CtcAdapterGrads {
    pub fn accumulate(&mut self, other: &CtcAdapterGrads) {
        self.out_proj.accumulate(&other.out_proj);
        self.res_proj.accumulate(&other.res_proj);
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Matrix)) {
        self.out_proj.visit("adapter.out_proj", f);
        self.res_proj.visit("adapter.res_proj", f);
    }
}

struct AdapterCache {
    out_cache: FeedForwardCache,
    res_cache: FeedForwardCache,
    nonblank_probs: Matrix, // L x V, pre-threshold softmax
    weights: Matrix,        // L x V, thresholded (and optionally renormalized)
    gates: Vec<f64>,
    residual: Matrix, // L x D
}

/// Forward result: the adapted prompt sequence A, the CTC posteriors for the
/// loss, the raw logits the loss differentiates against, and (unless built
/// for inference) the cache the backward pass needs.
pub struct CtcAdapterForward {
    pub prompts: Matrix, // L x D
    pub posteriors: CtcPosteriorSequence,
    pub logit_blank: Vec<f64>,
    pub logit_nonblank: Matrix, // L x V
    cache: Option<AdapterCache>,
}

fn run_ctc_adapter(
    frames: &Matrix,
    w_emb: &Matrix,
    params: &CtcAdapterParams,
    keep_cache: bool,
) -> Result<CtcAdapterForward> {
    if frames.rows() == 0 {
        return Err(Error::Dimension("empty frame sequence".into()));
    }
    let vocab = params.vocab_size();
    if w_emb.rows() < vocab {
        return Err(Error::Dimension(format!(
            "embedding table has {} rows, adapter vocabulary is {}",
            w_emb.rows(),
            vocab
        )));
    }
    let d_model = params.res_proj.output_dim() - 1;
    if w_emb.cols() != d_model {
        return Err(Error::Dimension(format!(
            "embedding width {} vs residual width {}",
            w_emb.cols(),
            d_model
        )));
    }
    let len = frames.rows();

    let (logits, out_cache) = params.out_proj.forward(frames)?;
    let (res_out, res_cache) = params.res_proj.forward(frames)?;

    let mut logit_blank = Vec::with_capacity(len);
    let mut logit_nonblank = Matrix::zeros(len, vocab);
    let mut nonblank_probs = Matrix::zeros(len, vocab);
    let mut weights = Matrix::zeros(len, vocab);
    let mut gates = Vec::with_capacity(len);
    let mut residual = Matrix::zeros(len, d_model);
    let mut prompts = Matrix::zeros(len, d_model);

    for t in 0..len {
        let row = logits.row(t);
        logit_blank.push(row[vocab]);
        logit_nonblank.row_mut(t).copy_from_slice(&row[..vocab]);

        let probs = softmax_row(&row[..vocab])?;
        nonblank_probs.row_mut(t).copy_from_slice(&probs);

        // Entries below tau are zeroed, not renormalized, so a one-hot
        // distribution passes through as the exact embedding row.
        let mut w: Vec<f64> = probs.iter().map(|&p| if p < params.tau { 0.0 } else { p }).collect();
        if params.renormalize {
            let sum: f64 = w.iter().sum();
            if sum > 0.0 {
                for v in w.iter_mut() {
                    *v /= sum;
                }
            }
        }
        weights.row_mut(t).copy_from_slice(&w);

        let res_row = res_out.row(t);
        let gate = sigmoid(res_row[d_model]);
        gates.push(gate);
        residual.row_mut(t).copy_from_slice(&res_row[..d_model]);

        // u_t = w_t * W_emb, then the gated residual on top.
        let prompt = prompts.row_mut(t);
        for (v, &wv) in w.iter().enumerate() {
            if wv != 0.0 {
                for (p, &e) in prompt.iter_mut().zip(w_emb.row(v)) {
                    *p += wv * e;
                }
            }
        }
        for (p, &r) in prompt.iter_mut().zip(&res_row[..d_model]) {
            *p += gate * r;
        }
    }

    let posteriors = CtcPosteriorSequence::from_logits(&logit_blank, &logit_nonblank)?;
    let cache = keep_cache.then_some(AdapterCache {
        out_cache,
        res_cache,
        nonblank_probs,
        weights,
        gates,
        residual,
    });
    Ok(CtcAdapterForward { prompts, posteriors, logit_blank, logit_nonblank, cache })
}

/// Forward pass keeping the cache needed for `ctc_adapter_backward`.
pub fn ctc_adapter_forward(
    frames: &Matrix,
    w_emb: &Matrix,
    params: &CtcAdapterParams,
) -> Result<CtcAdapterForward> {
    run_ctc_adapter(frames, w_emb, params, true)
}

/// Cache-free forward for decoding.
pub fn ctc_adapter_forward_inference(
    frames: &Matrix,
    w_emb: &Matrix,
    params: &CtcAdapterParams,
) -> Result<CtcAdapterForward> {
    run_ctc_adapter(frames, w_emb, params, false)
}

pub struct CtcAdapterBackward {
    pub grads: CtcAdapterGrads,
    pub d_frames: Matrix,
    pub d_w_emb: Matrix,
}

/// Exact gradients for the thresholded forward. Upstream is the gradient
/// with respect to the prompts A plus the CTC-loss gradient with respect to
/// the raw logits (already weighted by the loss weight). Zeroed weight
/// entries are a hard mask: they contribute nothing to any gradient.
pub fn ctc_adapter_backward(
    forward: &CtcAdapterForward,
    w_emb: &Matrix,
    params: &CtcAdapterParams,
    d_prompts: &Matrix,
    d_logit_blank: &[f64],
    d_logit_nonblank: &Matrix,
) -> Result<CtcAdapterBackward> {
    let cache = forward
        .cache
        .as_ref()
        .ok_or_else(|| Error::State("adapter backward called without a cached forward".into()))?;
    let len = forward.prompts.rows();
    let vocab = params.vocab_size();
    let d_model = w_emb.cols();
    if d_prompts.rows() != len || d_prompts.cols() != d_model {
        return Err(Error::Dimension("upstream prompt gradient shape mismatch".into()));
    }
    if d_logit_blank.len() != len || d_logit_nonblank.rows() != len || d_logit_nonblank.cols() != vocab
    {
        return Err(Error::Dimension("upstream CTC logit gradient shape mismatch".into()));
    }

    let mut d_w_emb = Matrix::zeros(w_emb.rows(), d_model);
    let mut d_out_logits = Matrix::zeros(len, vocab + 1);
    let mut d_res_out = Matrix::zeros(len, d_model + 1);

    for t in 0..len {
        let da = d_prompts.row(t);
        let w = cache.weights.row(t);

        // Eq. 7 path: u_t = w_t * W_emb.
        let mut d_w = vec![0.0; vocab];
        for v in 0..vocab {
            if w[v] != 0.0 {
                let emb = w_emb.row(v);
                let mut dot = 0.0;
                for k in 0..d_model {
                    dot += da[k] * emb[k];
                }
                d_w[v] = dot;
                let target = d_w_emb.row_mut(v);
                for k in 0..d_model {
                    target[k] += w[v] * da[k];
                }
            }
        }

        // Threshold mask, then optional renormalization Jacobian, then the
        // softmax Jacobian back to the non-blank logits.
        let probs = cache.nonblank_probs.row(t);
        let mut d_probs = vec![0.0; vocab];
        if params.renormalize {
            let kept: f64 = probs.iter().filter(|&&p| p >= params.tau).sum();
            if kept > 0.0 {
                let weighted: f64 = (0..vocab).map(|v| d_w[v] * w[v]).sum();
                for v in 0..vocab {
                    if probs[v] >= params.tau {
                        d_probs[v] = d_w[v] / kept - weighted / kept;
                    }
                }
            }
        } else {
            for v in 0..vocab {
                if probs[v] >= params.tau {
                    d_probs[v] = d_w[v];
                }
            }
        }
        let mut d_znb = softmax_backward(probs, &d_probs);
        for v in 0..vocab {
            d_znb[v] += d_logit_nonblank.get(t, v);
        }
        d_out_logits.row_mut(t)[..vocab].copy_from_slice(&d_znb);
        d_out_logits.row_mut(t)[vocab] = d_logit_blank[t];

        // Gated residual path: a_t += g_t * r_t.
        let gate = cache.gates[t];
        let r = cache.residual.row(t);
        let mut d_gate = 0.0;
        let d_res_row = d_res_out.row_mut(t);
        for k in 0..d_model {
            d_res_row[k] = gate * da[k];
            d_gate += da[k] * r[k];
        }
        d_res_row[d_model] = d_gate * gate * (1.0 - gate);
    }

    let (out_grads, d_frames_out) = params.out_proj.backward(&cache.out_cache, &d_out_logits)?;
    let (res_grads, d_frames_res) = params.res_proj.backward(&cache.res_cache, &d_res_out)?;
    let mut d_frames = d_frames_out;
    d_frames.add_assign(&d_frames_res);

    Ok(CtcAdapterBackward {
        grads: CtcAdapterGrads { out_proj: out_grads, res_proj: res_grads },
        d_frames,
        d_w_emb,
    })
}

/// Baseline adapter: two feed-forward projections with a GELU between them.
#[derive(Debug, Clone)]
pub struct LinearAdapterParams {
    pub proj: FeedForward, // d_enc -> hidden -> D
}

impl LinearAdapterParams {
    pub fn init(d_enc: usize, d_model: usize, hidden: usize, rng: &mut Rng) -> Self {
        LinearAdapterParams { proj: FeedForward::init(d_enc, hidden, d_model, rng) }
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Matrix)) {
        self.proj.visit("adapter.proj", f);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        self.proj.visit_mut("adapter.proj", f);
    }
}

pub struct LinearAdapterForward {
    pub prompts: Matrix,
    cache: Option<FeedForwardCache>,
}

pub fn linear_adapter_forward(
    frames: &Matrix,
    params: &LinearAdapterParams,
) -> Result<LinearAdapterForward> {
    if frames.rows() == 0 {
        return Err(Error::Dimension("empty frame sequence".into()));
    }
    let (prompts, cache) = params.proj.forward(frames)?;
    Ok(LinearAdapterForward { prompts, cache: Some(cache) })
}

pub struct LinearAdapterBackward {
    pub grads: FeedForward,
    pub d_frames: Matrix,
}

pub fn linear_adapter_backward(
    forward: &LinearAdapterForward,
    params: &LinearAdapterParams,
    d_prompts: &Matrix,
) -> Result<LinearAdapterBackward> {
    let cache = forward
        .cache
        .as_ref()
        .ok_or_else(|| Error::State("linear adapter backward without cached forward".into()))?;
    let (grads, d_frames) = params.proj.backward(cache, d_prompts)?;
    Ok(LinearAdapterBackward { grads, d_frames })
}
