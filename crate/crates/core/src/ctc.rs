//! Exact CTC log-likelihood and gradients.
//!
//! The emission model is the blank/non-blank split: an independent sigmoid
//! gives the per-frame blank probability, a softmax over the non-blank
//! vocabulary is scaled by the remaining mass, and the DP consumes those two
//! pieces directly. Everything runs in log space; probability space is
//! allowed only inside the brute-force enumeration oracle.

use crate::error::{Error, Result};
use crate::numerics::{log_add, log_sum_exp, sigmoid, softmax_row, Matrix};

/// Per-frame blank probability plus non-blank distribution over V tokens.
#[derive(Debug, Clone)]
pub struct CtcPosteriorSequence {
    blank: Vec<f64>,
    nonblank: Matrix, // T x V, each row sums to 1
}

impl CtcPosteriorSequence {
    /// Validates the distribution invariants: blank in (0,1), each non-blank
    /// row summing to 1 within 1e-9 (which makes blank + scaled mass = 1).
    pub fn new(blank: Vec<f64>, nonblank: Matrix) -> Result<Self> {
        if blank.len() != nonblank.rows() {
            return Err(Error::Dimension(format!(
                "{} blank probs vs {} non-blank rows",
                blank.len(),
                nonblank.rows()
            )));
        }
        for (t, &b) in blank.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Invariant(format!("blank prob out of (0,1) at frame {t}: {b}")));
            }
            let row_sum: f64 = nonblank.row(t).iter().sum();
            if (row_sum - 1.0).abs() > 1e-9 {
                return Err(Error::Invariant(format!(
                    "non-blank row {t} sums to {row_sum}, expected 1"
                )));
            }
            if nonblank.row(t).iter().any(|&p| p < 0.0) {
                return Err(Error::Invariant(format!("negative probability in row {t}")));
            }
        }
        Ok(CtcPosteriorSequence { blank, nonblank })
    }

    /// Posteriors from raw logits: blank via sigmoid, non-blank via softmax.
    pub fn from_logits(logit_blank: &[f64], logit_nonblank: &Matrix) -> Result<Self> {
        if logit_blank.len() != logit_nonblank.rows() {
            return Err(Error::Dimension("blank/non-blank frame count mismatch".into()));
        }
        let blank = logit_blank.iter().map(|&z| sigmoid(z)).collect();
        let mut nonblank = logit_nonblank.zeros_like();
        for t in 0..logit_nonblank.rows() {
            let p = softmax_row(logit_nonblank.row(t))?;
            nonblank.row_mut(t).copy_from_slice(&p);
        }
        CtcPosteriorSequence::new(blank, nonblank)
    }

    pub fn frames(&self) -> usize {
        self.blank.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.nonblank.cols()
    }

    pub fn blank_prob(&self, t: usize) -> f64 {
        self.blank[t]
    }

    pub fn nonblank_prob(&self, t: usize, v: usize) -> f64 {
        self.nonblank.get(t, v)
    }

    /// Scaled non-blank probability: (1 - p_b) * p_nb. Together with the
    /// blank probability these sum to one per frame.
    pub fn scaled_nonblank_prob(&self, t: usize, v: usize) -> f64 {
        (1.0 - self.blank[t]) * self.nonblank.get(t, v)
    }
}

/// Non-blank token ids making up a CTC target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CtcTarget(Vec<usize>);

impl CtcTarget {
    pub fn new(tokens: Vec<usize>) -> Self {
        CtcTarget(tokens)
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Minimum frame count any alignment needs: one frame per label plus a
    /// separating blank between each adjacent repeat.
    pub fn min_frames(&self) -> usize {
        let repeats = self.0.windows(2).filter(|w| w[0] == w[1]).count();
        self.0.len() + repeats
    }
}

fn check_target_vocab(target: &CtcTarget, vocab: usize) -> Result<()> {
    if let Some(&bad) = target.tokens().iter().find(|&&v| v >= vocab) {
        return Err(Error::Invariant(format!(
            "target token {bad} outside vocabulary of size {vocab}"
        )));
    }
    Ok(())
}

/// Log emission probabilities for the blank-extended label sequence:
/// even states are blanks, odd state s is target[(s-1)/2].
struct LogEmissions {
    frames: usize,
    log_blank: Vec<f64>,          // ln p_b per frame
    log_scaled: Matrix,           // ln p_tilde per frame x vocab
}

impl LogEmissions {
    fn from_posteriors(post: &CtcPosteriorSequence) -> Self {
        let frames = post.frames();
        let vocab = post.vocab_size();
        let log_blank = (0..frames).map(|t| post.blank_prob(t).ln()).collect();
        let mut log_scaled = Matrix::zeros(frames, vocab);
        for t in 0..frames {
            for v in 0..vocab {
                log_scaled.set(t, v, post.scaled_nonblank_prob(t, v).ln());
            }
        }
        LogEmissions { frames, log_blank, log_scaled }
    }

    /// Straight from logits, in log space, so saturated logits never round
    /// a probability to zero:
    ///   ln p_b      = -softplus(-z_b)
    ///   ln p_tilde  = -softplus(z_b) + z_v - logsumexp(z_nb)
    fn from_logits(logit_blank: &[f64], logit_nonblank: &Matrix) -> Self {
        let frames = logit_blank.len();
        let vocab = logit_nonblank.cols();
        let softplus = |z: f64| {
            if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            }
        };
        let log_blank: Vec<f64> = logit_blank.iter().map(|&z| -softplus(-z)).collect();
        let mut log_scaled = Matrix::zeros(frames, vocab);
        for t in 0..frames {
            let lse = log_sum_exp(logit_nonblank.row(t));
            let log_one_minus_b = -softplus(logit_blank[t]);
            for v in 0..vocab {
                log_scaled.set(t, v, log_one_minus_b + logit_nonblank.get(t, v) - lse);
            }
        }
        LogEmissions { frames, log_blank, log_scaled }
    }

    #[inline]
    fn emit(&self, t: usize, state: usize, target: &CtcTarget) -> f64 {
        if state % 2 == 0 {
            self.log_blank[t]
        } else {
            self.log_scaled.get(t, target.tokens()[state / 2])
        }
    }
}

/// Whether the diagonal skip into odd state `s` is allowed: label states may
/// skip the preceding blank unless the previous label is identical.
#[inline]
fn skip_allowed(state: usize, target: &CtcTarget) -> bool {
    state % 2 == 1 && state >= 2 && target.tokens()[state / 2] != target.tokens()[state / 2 - 1]
}

fn forward_pass(em: &LogEmissions, target: &CtcTarget) -> Vec<Vec<f64>> {
    let states = 2 * target.len() + 1;
    let mut alpha = vec![vec![f64::NEG_INFINITY; states]; em.frames];
    alpha[0][0] = em.emit(0, 0, target);
    if states > 1 {
        alpha[0][1] = em.emit(0, 1, target);
    }
    for t in 1..em.frames {
        for s in 0..states {
            let mut acc = alpha[t - 1][s];
            if s >= 1 {
                acc = log_add(acc, alpha[t - 1][s - 1]);
            }
            if s >= 2 && skip_allowed(s, target) {
                acc = log_add(acc, alpha[t - 1][s - 2]);
            }
            if acc != f64::NEG_INFINITY {
                alpha[t][s] = acc + em.emit(t, s, target);
            }
        }
    }
    alpha
}

/// beta[t][s]: log probability of emitting frames t+1.. while finishing the
/// extended sequence from state s. Excludes the emission at frame t, so
/// alpha[t][s] + beta[t][s] summed over s gives log P at every t.
fn backward_pass(em: &LogEmissions, target: &CtcTarget) -> Vec<Vec<f64>> {
    let states = 2 * target.len() + 1;
    let frames = em.frames;
    let mut beta = vec![vec![f64::NEG_INFINITY; states]; frames];
    beta[frames - 1][states - 1] = 0.0;
    if states > 1 {
        beta[frames - 1][states - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let mut acc = if beta[t + 1][s] != f64::NEG_INFINITY {
                beta[t + 1][s] + em.emit(t + 1, s, target)
            } else {
                f64::NEG_INFINITY
            };
            if s + 1 < states && beta[t + 1][s + 1] != f64::NEG_INFINITY {
                acc = log_add(acc, beta[t + 1][s + 1] + em.emit(t + 1, s + 1, target));
            }
            if s + 2 < states && skip_allowed(s + 2, target) && beta[t + 1][s + 2] != f64::NEG_INFINITY
            {
                acc = log_add(acc, beta[t + 1][s + 2] + em.emit(t + 1, s + 2, target));
            }
            beta[t][s] = acc;
        }
    }
    beta
}

fn total_log_prob(alpha: &[Vec<f64>], target: &CtcTarget) -> f64 {
    let last = alpha.last().expect("at least one frame");
    let states = 2 * target.len() + 1;
    let mut total = last[states - 1];
    if states > 1 {
        total = log_add(total, last[states - 2]);
    }
    total
}

/// Log probability that the frame-level emissions collapse to `target`
/// (remove adjacent repeats, then blanks). Infeasible targets yield -inf.
pub fn ctc_log_likelihood(post: &CtcPosteriorSequence, target: &CtcTarget) -> Result<f64> {
    check_target_vocab(target, post.vocab_size())?;
    if post.frames() == 0 {
        return Err(Error::Dimension("zero-frame posterior sequence".into()));
    }
    if post.frames() < target.min_frames() {
        return Ok(f64::NEG_INFINITY);
    }
    let em = LogEmissions::from_posteriors(post);
    let alpha = forward_pass(&em, target);
    Ok(total_log_prob(&alpha, target))
}

/// Loss and exact gradients of the CTC objective with respect to raw logits.
#[derive(Debug, Clone)]
pub struct CtcLossGrad {
    pub loss: f64,
    pub grad_blank: Vec<f64>,
    pub grad_nonblank: Matrix,
}

/// -log P(target) under the blank-sigmoid / scaled-softmax emission model,
/// with gradients from forward-backward state occupancies.
///
/// Infeasible targets are a hard error here: during training they signal a
/// data bug and must surface rather than be skipped.
pub fn ctc_loss_and_grad(
    logit_blank: &[f64],
    logit_nonblank: &Matrix,
    target: &CtcTarget,
) -> Result<CtcLossGrad> {
    let frames = logit_blank.len();
    let vocab = logit_nonblank.cols();
    if logit_nonblank.rows() != frames {
        return Err(Error::Dimension("blank/non-blank frame count mismatch".into()));
    }
    if frames == 0 {
        return Err(Error::Dimension("zero-frame logit sequence".into()));
    }
    check_target_vocab(target, vocab)?;
    if !logit_blank.iter().all(|z| z.is_finite()) || !logit_nonblank.is_finite() {
        return Err(Error::Numerical("non-finite CTC logits".into()));
    }
    if frames < target.min_frames() {
        return Err(Error::InfeasibleTarget { frames, needed: target.min_frames() });
    }

    let em = LogEmissions::from_logits(logit_blank, logit_nonblank);
    let alpha = forward_pass(&em, target);
    let beta = backward_pass(&em, target);
    let log_p = total_log_prob(&alpha, target);

    let states = 2 * target.len() + 1;
    let mut grad_blank = vec![0.0; frames];
    let mut grad_nonblank = Matrix::zeros(frames, vocab);
    for t in 0..frames {
        // State occupancies gamma_t(s) = exp(alpha + beta - log P); their sum
        // over s is 1. The gradient of log P wrt a LOG emission probability is
        // the occupancy mass of the states emitting it.
        let mut occ_blank = 0.0;
        let mut occ_token = vec![0.0; vocab];
        let mut occ_total = 0.0;
        for s in 0..states {
            let lg = alpha[t][s] + beta[t][s] - log_p;
            if lg == f64::NEG_INFINITY {
                continue;
            }
            let g = lg.exp();
            occ_total += g;
            if s % 2 == 0 {
                occ_blank += g;
            } else {
                occ_token[target.tokens()[s / 2]] += g;
            }
        }
        // Chain into logits. With p_b = sigmoid(z_b) and p_nb = softmax(z_nb):
        //   d ln p_b / d z_b       = 1 - p_b
        //   d ln p_tilde / d z_b   = -p_b
        //   d ln p_tilde_v / d z_u = delta_uv - p_nb_u
        let p_b = sigmoid(logit_blank[t]);
        let occ_nonblank = occ_total - occ_blank;
        grad_blank[t] = -(occ_blank * (1.0 - p_b) - occ_nonblank * p_b);
        let p_nb = softmax_row(logit_nonblank.row(t))?;
        for u in 0..vocab {
            grad_nonblank.set(t, u, -(occ_token[u] - occ_nonblank * p_nb[u]));
        }
    }

    Ok(CtcLossGrad { loss: -log_p, grad_blank, grad_nonblank })
}

/// Collapse an emission string: remove adjacent repeats, then blanks.
fn collapse(emission: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for &e in emission {
        if e != prev && e != blank {
            out.push(e);
        }
        prev = e;
    }
    out
}

/// Enumeration oracle: sums the probability of every length-T emission string
/// whose collapse equals the target. Exponential in T, hence the hard bounds.
pub fn ctc_brute_force(post: &CtcPosteriorSequence, target: &CtcTarget) -> Result<f64> {
    let frames = post.frames();
    let vocab = post.vocab_size();
    if frames > 8 || vocab > 4 {
        return Err(Error::Bounds(format!(
            "brute force limited to T <= 8 and V <= 4, got T={frames}, V={vocab}"
        )));
    }
    check_target_vocab(target, vocab)?;
    let blank = vocab; // emission symbol ids: 0..vocab are tokens, vocab is blank
    let symbols = vocab + 1;
    let mut total = 0.0_f64;
    let mut emission = vec![0usize; frames];
    let count = (symbols as u64).pow(frames as u32);
    for mut code in 0..count {
        for slot in emission.iter_mut() {
            *slot = (code % symbols as u64) as usize;
            code /= symbols as u64;
        }
        if collapse(&emission, blank) != target.tokens() {
            continue;
        }
        let mut p = 1.0;
        for (t, &e) in emission.iter().enumerate() {
            p *= if e == blank {
                post.blank_prob(t)
            } else {
                post.scaled_nonblank_prob(t, e)
            };
        }
        total += p;
    }
    Ok(total.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn uniform_posteriors(frames: usize, vocab: usize) -> CtcPosteriorSequence {
        // p_b = 1/(V+1) and p_nb uniform, so every emission has prob 1/(V+1).
        let blank = vec![1.0 / (vocab + 1) as f64; frames];
        let mut nonblank = Matrix::zeros(frames, vocab);
        for t in 0..frames {
            for v in 0..vocab {
                nonblank.set(t, v, 1.0 / vocab as f64);
            }
        }
        CtcPosteriorSequence::new(blank, nonblank).unwrap()
    }

    fn random_posteriors(rng: &mut Rng, frames: usize, vocab: usize) -> CtcPosteriorSequence {
        let logit_blank: Vec<f64> = (0..frames).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let logit_nonblank = rng.matrix_uniform(frames, vocab, -2.0, 2.0);
        CtcPosteriorSequence::from_logits(&logit_blank, &logit_nonblank).unwrap()
    }

    #[test]
    fn uniform_two_frame_single_token() {
        // Paths collapsing to "a": aa, a-, -a, each 1/9.
        let post = uniform_posteriors(2, 2);
        let target = CtcTarget::new(vec![0]);
        let ll = ctc_log_likelihood(&post, &target).unwrap();
        assert!((ll - (1.0f64 / 3.0).ln()).abs() < 1e-12, "ll={ll}");
        let bf = ctc_brute_force(&post, &target).unwrap();
        assert!((ll - bf).abs() < 1e-12);
    }

    #[test]
    fn empty_target_is_all_blank_path() {
        let blank = vec![0.5, 0.5];
        let mut nonblank = Matrix::zeros(2, 2);
        for t in 0..2 {
            nonblank.set(t, 0, 0.5);
            nonblank.set(t, 1, 0.5);
        }
        let post = CtcPosteriorSequence::new(blank, nonblank).unwrap();
        let ll = ctc_log_likelihood(&post, &CtcTarget::new(vec![])).unwrap();
        assert!((ll - 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_target_is_neg_inf() {
        let post = uniform_posteriors(1, 2);
        let ll = ctc_log_likelihood(&post, &CtcTarget::new(vec![0, 0])).unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn malformed_distribution_is_invariant_error() {
        let blank = vec![0.5];
        let mut nonblank = Matrix::zeros(1, 2);
        nonblank.set(0, 0, 0.9);
        nonblank.set(0, 1, 0.3);
        assert!(matches!(
            CtcPosteriorSequence::new(blank, nonblank),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn loss_matches_hand_enumeration_at_zero_logits() {
        // All logits 0: p_b = 0.5, p_tilde = [0.25, 0.25].
        // P("a") = 2 * 0.25*0.5 + 0.25*0.25 = 0.3125.
        let logit_blank = vec![0.0, 0.0];
        let logit_nonblank = Matrix::zeros(2, 2);
        let out = ctc_loss_and_grad(&logit_blank, &logit_nonblank, &CtcTarget::new(vec![0])).unwrap();
        assert!((out.loss - 1.1631508).abs() < 1e-7, "loss={}", out.loss);
        assert!((out.loss + 0.3125f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn infeasible_target_is_hard_error_for_training() {
        let logit_blank = vec![0.0];
        let logit_nonblank = Matrix::zeros(1, 2);
        let res = ctc_loss_and_grad(&logit_blank, &logit_nonblank, &CtcTarget::new(vec![0, 0]));
        assert!(matches!(res, Err(Error::InfeasibleTarget { frames: 1, needed: 3 })));
    }

    #[test]
    fn gradient_breaks_symmetry_toward_target() {
        let logit_blank = vec![0.0, 0.0];
        let logit_nonblank = Matrix::zeros(2, 2);
        let out = ctc_loss_and_grad(&logit_blank, &logit_nonblank, &CtcTarget::new(vec![0])).unwrap();
        for t in 0..2 {
            assert!(out.grad_nonblank.get(t, 0) < 0.0, "token 0 should be pushed up");
            assert!(out.grad_nonblank.get(t, 1) > 0.0, "token 1 should be pushed down");
        }
    }

    #[test]
    fn gradient_passes_finite_difference_check() {
        let mut rng = Rng::new(101);
        for case in 0..30 {
            let frames = rng.range_inclusive(2, 6);
            let vocab = rng.range_inclusive(2, 3);
            let target_len = rng.range_inclusive(1, 3.min(frames));
            let target =
                CtcTarget::new((0..target_len).map(|_| rng.below(vocab)).collect());
            if frames < target.min_frames() {
                continue;
            }
            let logit_blank: Vec<f64> = (0..frames).map(|_| rng.uniform(-1.5, 1.5)).collect();
            let logit_nonblank = rng.matrix_uniform(frames, vocab, -1.5, 1.5);

            let out = ctc_loss_and_grad(&logit_blank, &logit_nonblank, &target).unwrap();
            let mut analytic = out.grad_blank.clone();
            analytic.extend_from_slice(out.grad_nonblank.data());
            let mut point = logit_blank.clone();
            point.extend_from_slice(logit_nonblank.data());

            let mut f = |x: &[f64]| {
                let lb = &x[..frames];
                let lnb = Matrix::from_vec(frames, vocab, x[frames..].to_vec())?;
                Ok(ctc_loss_and_grad(lb, &lnb, &target)?.loss)
            };
            let err = crate::numerics::grad_check(&mut f, &analytic, &point, 1e-5).unwrap();
            assert!(err <= 1e-4, "case {case}: rel error {err}");
        }
    }

    #[test]
    fn brute_force_empty_target_is_blank_product() {
        let mut rng = Rng::new(5);
        let post = random_posteriors(&mut rng, 4, 3);
        let want: f64 = (0..4).map(|t| post.blank_prob(t).ln()).sum();
        let got = ctc_brute_force(&post, &CtcTarget::new(vec![])).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn brute_force_bounds_are_enforced() {
        let post = uniform_posteriors(9, 2);
        assert!(matches!(
            ctc_brute_force(&post, &CtcTarget::new(vec![0])),
            Err(Error::Bounds(_))
        ));
    }

    #[test]
    fn dp_matches_brute_force_on_random_instances() {
        let mut rng = Rng::new(77);
        for _ in 0..60 {
            let frames = rng.range_inclusive(1, 5);
            let vocab = rng.range_inclusive(1, 3);
            let target_len = rng.range_inclusive(0, 3);
            let target = CtcTarget::new((0..target_len).map(|_| rng.below(vocab)).collect());
            let post = random_posteriors(&mut rng, frames, vocab);
            let dp = ctc_log_likelihood(&post, &target).unwrap();
            let bf = ctc_brute_force(&post, &target).unwrap();
            if dp == f64::NEG_INFINITY || bf == f64::NEG_INFINITY {
                assert_eq!(dp, bf, "feasibility disagreement");
            } else {
                assert!((dp - bf).abs() <= 1e-9, "dp={dp} bf={bf}");
            }
        }
    }

    #[test]
    fn collapse_map_partitions_emission_strings() {
        // Sum of P(target) over every target of length <= T must be 1:
        // each emission string collapses to exactly one label sequence.
        let mut rng = Rng::new(13);
        for _ in 0..5 {
            let frames = rng.range_inclusive(1, 4);
            let vocab = 2;
            let post = random_posteriors(&mut rng, frames, vocab);
            let mut total = 0.0;
            let mut stack: Vec<Vec<usize>> = vec![vec![]];
            while let Some(tokens) = stack.pop() {
                if tokens.len() <= frames {
                    let ll = ctc_log_likelihood(&post, &CtcTarget::new(tokens.clone())).unwrap();
                    if ll != f64::NEG_INFINITY {
                        total += ll.exp();
                    }
                    if tokens.len() < frames {
                        for v in 0..vocab {
                            let mut next = tokens.clone();
                            next.push(v);
                            stack.push(next);
                        }
                    }
                }
            }
            assert!((total - 1.0).abs() <= 1e-9, "total probability {total}");
        }
    }

    #[test]
    fn near_blank_frame_appends_its_log_blank() {
        let mut rng = Rng::new(21);
        let post = random_posteriors(&mut rng, 4, 3);
        let target = CtcTarget::new(vec![1, 2]);
        let base = ctc_log_likelihood(&post, &target).unwrap();

        let p_b = 1.0 - 1e-9;
        let mut blank: Vec<f64> = (0..5).map(|t| if t < 4 { post.blank_prob(t) } else { p_b }).collect();
        let mut nonblank = Matrix::zeros(5, 3);
        for t in 0..4 {
            for v in 0..3 {
                nonblank.set(t, v, post.nonblank_prob(t, v));
            }
        }
        for v in 0..3 {
            nonblank.set(4, v, 1.0 / 3.0);
        }
        blank[4] = p_b;
        let extended = CtcPosteriorSequence::new(blank, nonblank).unwrap();
        let longer = ctc_log_likelihood(&extended, &target).unwrap();
        assert!((longer - base - p_b.ln()).abs() < 1e-6, "delta {}", longer - base);
        assert!(longer >= base + p_b.ln() - 1e-12);
    }
}
