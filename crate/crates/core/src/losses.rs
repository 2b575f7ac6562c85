//! Contrastive, paraphrase and negation losses and their weighted mean.

use crate::autodiff::{Tape, Tensor, Var};
use crate::Error;
use serde::{Deserialize, Serialize};

/// Weights of the three loss components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, Error> {
        let w = Self { alpha, beta, gamma };
        w.check()?;
        Ok(w)
    }

    pub fn check(&self) -> Result<(), Error> {
        let all = [self.alpha, self.beta, self.gamma];
        if all.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Contract(format!("loss weights must be finite and non-negative: {self:?}")));
        }
        if self.sum() <= 0.0 {
            return Err(Error::Contract("loss weights sum to zero".into()));
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.alpha + self.beta + self.gamma
    }

    /// Every {0,1}³ combination except all-zero.
    pub fn binary_grid() -> Vec<LossWeights> {
        (1..8u8)
            .map(|m| LossWeights { alpha: (m & 1) as f64, beta: ((m >> 1) & 1) as f64, gamma: ((m >> 2) & 1) as f64 })
            .collect()
    }
}

/// Initial temperature, the CLIP convention `1 / 0.07`.
pub const TAU_INIT: f64 = 1.0 / 0.07;
pub const TAU_MAX: f64 = 100.0;

/// Learnable log-temperature `θ`, with `τ = exp(θ)` capped at `tau_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct Temperature {
    /// `1 × 1` trainable.
    pub theta: Tensor,
    pub tau_max: f64,
}

impl Default for Temperature {
    fn default() -> Self {
        Self::new(TAU_INIT, TAU_MAX)
    }
}

impl Temperature {
    pub fn new(tau: f64, tau_max: f64) -> Self {
        let theta = Tensor::matrix(1, 1, vec![tau.min(tau_max).ln()]).expect("1x1").with_grad();
        Self { theta, tau_max }
    }

    pub fn tau(&self) -> f64 {
        self.theta.values()[0].exp()
    }

    /// Enforces `τ ≤ tau_max`.
    pub fn clamp(&mut self) {
        let cap = self.tau_max.ln();
        let theta = &mut self.theta.values_mut()[0];
        if *theta > cap {
            *theta = cap;
        }
    }
}

/// Symmetric cross-entropy over `S = τ · cos(images, texts)`:
/// `(1/2N) Σ_i [CE(S_i,:, i) + CE(S_:,i, i)]`.
///
/// `theta` is the log-temperature node.
pub fn contrastive_loss(tape: &mut Tape, images: Var, texts: Var, theta: Var) -> Result<Var, Error> {
    let (n, _) = tape.shape(images);
    if tape.shape(texts).0 != n {
        return Err(Error::Contract(format!("{n} images vs {} texts", tape.shape(texts).0)));
    }
    let images = tape.l2_normalize_rows(images)?;
    let texts = tape.l2_normalize_rows(texts)?;
    let tt = tape.transpose(texts);
    let cos = tape.matmul(images, tt)?;
    let tau = tape.exp(theta);
    let logits = tape.mul_scalar_var(cos, tau)?;
    let targets: Vec<usize> = (0..n).collect();
    let image_to_text = tape.softmax_cross_entropy(logits, &targets)?;
    let logits_t = tape.transpose(logits);
    let text_to_image = tape.softmax_cross_entropy(logits_t, &targets)?;
    let both = tape.add(image_to_text, text_to_image)?;
    let s = tape.sum(both);
    Ok(tape.scale(s, 0.5 / n as f64))
}

/// Batch mean of `1 − cos(p, p⁺)`.
pub fn paraphrase_loss(tape: &mut Tape, p: Var, p_plus: Var) -> Result<Var, Error> {
    let c = projected_cosine(tape, p, p_plus)?;
    let m = tape.mean(c);
    let neg = tape.scale(m, -1.0);
    Ok(tape.add_scalar(neg, 1.0))
}

/// Batch mean of `max(0, cos(p, p⁻))`.
pub fn negation_loss(tape: &mut Tape, p: Var, p_minus: Var) -> Result<Var, Error> {
    let c = projected_cosine(tape, p, p_minus)?;
    let hinge = tape.relu(c);
    Ok(tape.mean(hinge))
}

fn projected_cosine(tape: &mut Tape, a: Var, b: Var) -> Result<Var, Error> {
    tape.cosine_similarity(a, b).map_err(|e| match e {
        crate::autodiff::AutodiffError::Degenerate { norm, .. } => Error::DegenerateProjection { norm },
        other => other.into(),
    })
}

/// Component nodes of one batch.
#[derive(Clone, Copy, Debug)]
pub struct LossComponents {
    pub contrastive: Var,
    pub paraphrase: Var,
    pub negation: Var,
}

/// Scalar values for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub contrastive: f64,
    pub paraphrase: f64,
    pub negation: f64,
}

/// `(α·L_c + β·L_p + γ·L_n) / (α + β + γ)`.
///
/// Components with zero weight are left out of the graph, so they are
/// reported but receive no gradient.
pub fn total_loss(tape: &mut Tape, parts: LossComponents, weights: &LossWeights) -> Result<(Var, LossReport), Error> {
    weights.check()?;
    let mut acc: Option<Var> = None;
    for (var, w) in [(parts.contrastive, weights.alpha), (parts.paraphrase, weights.beta), (parts.negation, weights.gamma)] {
        if w == 0.0 {
            continue;
        }
        let term = tape.scale(var, w);
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    let acc = acc.expect("weights sum to a positive value");
    let total = tape.scale(acc, 1.0 / weights.sum());
    let report = LossReport {
        total: tape.scalar(total),
        contrastive: tape.scalar(parts.contrastive),
        paraphrase: tape.scalar(parts.paraphrase),
        negation: tape.scalar(parts.negation),
    };
    Ok((total, report))
}

/// Plain arithmetic form of [`total_loss`] for already-evaluated components.
pub fn combine(contrastive: f64, paraphrase: f64, negation: f64, weights: &LossWeights) -> Result<f64, Error> {
    weights.check()?;
    Ok((weights.alpha * contrastive + weights.beta * paraphrase + weights.gamma * negation) / weights.sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{analytic_gradient, finite_difference_check};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rows(tape: &mut Tape, r: &[&[f64]]) -> Var {
        let v: Vec<f64> = r.iter().flat_map(|x| x.iter().copied()).collect();
        tape.constant(r.len(), r[0].len(), v).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn contrastive_single_pair_is_zero() {
        let mut tape = Tape::new();
        let i = rows(&mut tape, &[&[0.6, 0.8]]);
        let t = rows(&mut tape, &[&[0.0, 1.0]]);
        let theta = tape.constant(1, 1, vec![TAU_INIT.ln()]).unwrap();
        let l = contrastive_loss(&mut tape, i, t, theta).unwrap();
        assert_eq!(tape.scalar(l), 0.0);
    }

    #[test]
    fn contrastive_two_orthogonal_pairs() {
        let mut tape = Tape::new();
        let i = rows(&mut tape, &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let t = rows(&mut tape, &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]);
        let theta = tape.constant(1, 1, vec![0.0]).unwrap();
        let l = contrastive_loss(&mut tape, i, t, theta).unwrap();
        let expected = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((tape.scalar(l) - 0.3133).abs() < 1e-4);
        assert!((tape.scalar(l) - expected).abs() < 1e-12);
    }

    #[test]
    fn contrastive_is_invariant_to_joint_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random(&mut rng, 4, 5);
        let txt = random(&mut rng, 4, 5);
        let perm = [2usize, 0, 3, 1];
        let permute = |t: &Tensor| {
            let r: Vec<Vec<f64>> = perm.iter().map(|&p| t.row(p).to_vec()).collect();
            Tensor::from_rows(&r).unwrap()
        };
        let eval = |i: &Tensor, t: &Tensor| {
            let mut tape = Tape::new();
            let (iv, tv) = (tape.leaf(i), tape.leaf(t));
            let theta = tape.constant(1, 1, vec![1.3]).unwrap();
            let l = contrastive_loss(&mut tape, iv, tv, theta).unwrap();
            tape.scalar(l)
        };
        assert!((eval(&img, &txt) - eval(&permute(&img), &permute(&txt))).abs() < 1e-12);
    }

    #[test]
    fn paraphrase_examples() {
        let cases: [(&[f64], &[f64], f64); 3] =
            [(&[0.3, 0.4], &[0.3, 0.4], 0.0), (&[0.3, 0.4], &[-0.3, -0.4], 2.0), (&[1.0, 0.0], &[1.0, 1.0], 0.2929)];
        for (p, q, want) in cases {
            let mut tape = Tape::new();
            let (a, b) = (rows(&mut tape, &[p]), rows(&mut tape, &[q]));
            let l = paraphrase_loss(&mut tape, a, b).unwrap();
            assert!((tape.scalar(l) - want).abs() < 1e-4, "{p:?} {q:?}");
        }
        let mut tape = Tape::new();
        let (a, b) = (rows(&mut tape, &[&[0.0, 0.0]]), rows(&mut tape, &[&[1.0, 0.0]]));
        assert!(matches!(paraphrase_loss(&mut tape, a, b), Err(Error::DegenerateProjection { .. })));
    }

    #[test]
    fn negation_examples() {
        let h = 3f64.sqrt() / 2.0;
        let cases: [(&[f64], &[f64], f64); 3] =
            [(&[1.0, 0.0], &[0.0, 2.0], 0.0), (&[0.3, 0.4], &[0.3, 0.4], 1.0), (&[1.0, 0.0], &[-0.5, h], 0.0)];
        for (p, q, want) in cases {
            let mut tape = Tape::new();
            let (a, b) = (rows(&mut tape, &[p]), rows(&mut tape, &[q]));
            let l = negation_loss(&mut tape, a, b).unwrap();
            assert!((tape.scalar(l) - want).abs() < 1e-12, "{p:?} {q:?}");
        }
        let mut tape = Tape::new();
        let (a, b) = (rows(&mut tape, &[&[1.0, 0.0]]), rows(&mut tape, &[&[0.0, 0.0]]));
        assert!(matches!(negation_loss(&mut tape, a, b), Err(Error::DegenerateProjection { .. })));
    }

    #[test]
    fn weight_collapse_and_mean() {
        let w = LossWeights::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(combine(0.9, 0.3, 0.0, &w).unwrap(), 0.9);
        let w = LossWeights::new(0.0, 1.0, 0.0).unwrap();
        assert_eq!(combine(0.9, 0.3, 0.0, &w).unwrap(), 0.3);
        let w = LossWeights::new(1.0, 1.0, 1.0).unwrap();
        assert!((combine(0.9, 0.3, 0.0, &w).unwrap() - 0.4).abs() < 1e-15);
        assert!(LossWeights::new(0.0, 0.0, 0.0).is_err());
        assert!(LossWeights::new(-1.0, 1.0, 0.0).is_err());
        assert_eq!(LossWeights::binary_grid().len(), 7);
    }

    #[test]
    fn total_loss_matches_arithmetic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (t, tp, tn, img) = (random(&mut rng, 4, 6), random(&mut rng, 4, 6), random(&mut rng, 4, 6), random(&mut rng, 4, 6));
        let v = random(&mut rng, 6, 2);
        for w in LossWeights::binary_grid() {
            let mut tape = Tape::new();
            let (t, tp, tn, img, v) = (tape.leaf(&t), tape.leaf(&tp), tape.leaf(&tn), tape.leaf(&img), tape.leaf(&v));
            let theta = tape.constant(1, 1, vec![0.5]).unwrap();
            let contrastive = contrastive_loss(&mut tape, img, t, theta).unwrap();
            let (p, pp, pn) = (tape.matmul(t, v).unwrap(), tape.matmul(tp, v).unwrap(), tape.matmul(tn, v).unwrap());
            let paraphrase = paraphrase_loss(&mut tape, p, pp).unwrap();
            let negation = negation_loss(&mut tape, p, pn).unwrap();
            let (total, r) = total_loss(&mut tape, LossComponents { contrastive, paraphrase, negation }, &w).unwrap();
            let expected = combine(r.contrastive, r.paraphrase, r.negation, &w).unwrap();
            assert!((tape.scalar(total) - expected).abs() < 1e-12);
            let lo = [r.contrastive, r.paraphrase, r.negation].iter().zip([w.alpha, w.beta, w.gamma]).filter(|(_, w)| *w > 0.0).map(|(x, _)| *x).fold(f64::INFINITY, f64::min);
            let hi = [r.contrastive, r.paraphrase, r.negation].iter().zip([w.alpha, w.beta, w.gamma]).filter(|(_, w)| *w > 0.0).map(|(x, _)| *x).fold(f64::NEG_INFINITY, f64::max);
            assert!(r.total >= lo - 1e-12 && r.total <= hi + 1e-12);
            assert!(r.contrastive >= 0.0 && r.paraphrase >= 0.0 && r.negation >= 0.0);
        }
    }

    #[test]
    fn paraphrase_loss_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let p = random(&mut rng, 4, 2);
            let q = random(&mut rng, 4, 2);
            let err = finite_difference_check(|t, x| { let qv = t.leaf(&q); paraphrase_loss(t, x, qv).map_err(into_ad) }, &p, 1e-5);
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn total_loss_gradient_check_for_every_weighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for w in LossWeights::binary_grid() {
            for _ in 0..10 {
                let (img, tp, tn, v) = (random(&mut rng, 4, 6), random(&mut rng, 4, 6), random(&mut rng, 4, 6), random(&mut rng, 6, 2));
                let texts = random(&mut rng, 4, 6);
                let f = |tape: &mut Tape, x: Var| {
                    let (img, tp, tn, v) = (tape.leaf(&img), tape.leaf(&tp), tape.leaf(&tn), tape.leaf(&v));
                    let theta = tape.constant(1, 1, vec![0.7]).unwrap();
                    let contrastive = contrastive_loss(tape, img, x, theta).map_err(into_ad)?;
                    let p = tape.matmul(x, v)?;
                    let pp = tape.matmul(tp, v)?;
                    let pn = tape.matmul(tn, v)?;
                    let paraphrase = paraphrase_loss(tape, p, pp).map_err(into_ad)?;
                    let negation = negation_loss(tape, p, pn).map_err(into_ad)?;
                    let (total, _) = total_loss(tape, LossComponents { contrastive, paraphrase, negation }, &w).map_err(into_ad)?;
                    Ok(total)
                };
                let err = finite_difference_check(f, &texts, 1e-5);
                // Skip draws that sit within a step of the hinge kink.
                if err.is_finite() && err > 1e-4 && w.gamma > 0.0 && near_kink(&texts, &tn, &v) {
                    continue;
                }
                assert!(err < 1e-4, "{w:?}: {err}");
            }
        }
    }

    fn near_kink(t: &Tensor, tn: &Tensor, v: &Tensor) -> bool {
        let (p, pn) = (t.matmul(v).unwrap(), tn.matmul(v).unwrap());
        (0..t.rows()).any(|r| {
            let (a, b) = (p.row(r), pn.row(r));
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let n = a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt();
            (dot / n).abs() < 1e-3
        })
    }

    #[test]
    fn contrastive_gradient_in_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let (img, txt) = (random(&mut rng, 4, 5), random(&mut rng, 4, 5));
            let theta = Tensor::matrix(1, 1, vec![rng.random_range(-1.0..2.0)]).unwrap();
            let err = finite_difference_check(
                |tape: &mut Tape, th| {
                    let (i, t) = (tape.leaf(&img), tape.leaf(&txt));
                    contrastive_loss(tape, i, t, th).map_err(into_ad)
                },
                &theta,
                1e-5,
            );
            assert!(err < 1e-4, "{err}");
        }
    }

    #[test]
    fn negation_gradient_vanishes_in_dead_zone() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tested = 0;
        while tested < 200 {
            let p = random(&mut rng, 1, 2);
            let q = random(&mut rng, 1, 2);
            let cos = {
                let mut tape = Tape::new();
                let (a, b) = (tape.leaf(&p), tape.leaf(&q));
                let c = tape.cosine_similarity(a, b).unwrap();
                tape.scalar(c)
            };
            if cos >= 0.0 {
                continue;
            }
            let g = analytic_gradient(&|t: &mut Tape, x: Var| { let qv = t.leaf(&q); negation_loss(t, x, qv).map_err(into_ad) }, &p).unwrap();
            assert!(g.iter().all(|x| *x == 0.0));
            tested += 1;
        }
    }

    #[test]
    fn contrastive_decreases_when_matched_cosine_increases() {
        // Works on the logit matrix directly: only S_00 moves, every other
        // similarity is held fixed.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = random(&mut rng, 4, 4);
        let eval = |bump: f64| {
            let mut tape = Tape::new();
            let mut logits = base.values().to_vec();
            logits[0] += bump;
            let s = tape.constant(4, 4, logits).unwrap();
            let t: Vec<usize> = (0..4).collect();
            let a = tape.softmax_cross_entropy(s, &t).unwrap();
            let st = tape.transpose(s);
            let b = tape.softmax_cross_entropy(st, &t).unwrap();
            let both = tape.add(a, b).unwrap();
            let sum = tape.sum(both);
            tape.scalar(sum) / 8.0
        };
        let mut last = eval(0.0);
        for k in 1..10 {
            let next = eval(0.1 * k as f64);
            assert!(next < last);
            last = next;
        }
    }

    fn into_ad(e: Error) -> crate::autodiff::AutodiffError {
        crate::autodiff::AutodiffError::Contract(e.to_string())
    }

    #[test]
    fn temperature_clamps_at_ceiling() {
        let mut t = Temperature::default();
        assert!((t.tau() - 14.2857).abs() < 1e-4);
        t.theta.values_mut()[0] = 10.0;
        t.clamp();
        assert!((t.tau() - TAU_MAX).abs() < 1e-9);
    }
}
