//! Orthonormal projection bank `V ∈ ℝ^{d×n}` and the map `p(t) = Vᵀt`.

use crate::autodiff::kernels::{dot, norm};
use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::encoders::{stream_rng, streams};
use crate::Error;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Residual norm below which a column is treated as linearly dependent.
pub const RANK_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankConfig {
    /// Number of directions.
    pub n: usize,
    /// ℓ2-normalize `p(t)` before the paraphrase/negation losses.
    pub normalize: bool,
    /// Let the optimizer update `V`.
    pub learnable: bool,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self { n: 2, normalize: true, learnable: false }
    }
}

#[derive(Clone, Debug)]
pub struct ProjectionBank {
    /// `d × n`, one direction per column.
    pub v: Tensor,
    pub normalize: bool,
    pub learnable: bool,
    pub seed: u64,
    rng: ChaCha8Rng,
}

impl PartialEq for ProjectionBank {
    fn eq(&self, other: &Self) -> bool {
        self.v == other.v && self.normalize == other.normalize && self.learnable == other.learnable && self.seed == other.seed
    }
}

/// Standard-normal columns, Gram-Schmidt orthogonalized and normalized.
pub fn init_projection_bank(d: usize, n: usize, seed: u64, normalize: bool, learnable: bool) -> Result<ProjectionBank, Error> {
    if n == 0 || n >= d {
        return Err(Error::Contract(format!("projection needs 0 < n < d, got n={n}, d={d}")));
    }
    let mut rng = stream_rng(seed, streams::PROJECTION);
    let raw: Vec<f64> = (0..d * n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let raw = Tensor::matrix(d, n, raw)?;
    let mut bank = ProjectionBank { v: raw, normalize, learnable, seed, rng };
    bank.gram_schmidt();
    bank.set_trainable(learnable);
    Ok(bank)
}

impl ProjectionBank {
    /// Orthonormalizes the given columns (`d × n`) in order.
    pub fn from_columns(raw: Tensor, seed: u64, normalize: bool, learnable: bool) -> Result<(Self, Vec<usize>), Error> {
        let (d, n) = (raw.rows(), raw.cols());
        if n == 0 || n >= d {
            return Err(Error::Contract(format!("projection needs 0 < n < d, got n={n}, d={d}")));
        }
        let rng = stream_rng(seed, streams::PROJECTION);
        let mut bank = ProjectionBank { v: Tensor::matrix(d, n, raw.into_values())?, normalize, learnable, seed, rng };
        let resampled = bank.gram_schmidt();
        bank.set_trainable(learnable);
        Ok((bank, resampled))
    }

    /// Rebuilds a bank from stored columns without re-orthonormalizing, so a
    /// saved bank round-trips exactly.
    pub fn from_stored(v: Tensor, seed: u64, normalize: bool, learnable: bool) -> Result<Self, Error> {
        let (d, n) = (v.rows(), v.cols());
        if n == 0 || n >= d {
            return Err(Error::Contract(format!("projection needs 0 < n < d, got n={n}, d={d}")));
        }
        let rng = stream_rng(seed, streams::PROJECTION);
        let mut bank = ProjectionBank { v: Tensor::matrix(d, n, v.into_values())?, normalize, learnable, seed, rng };
        bank.set_trainable(learnable);
        Ok(bank)
    }

    pub fn config(&self) -> BankConfig {
        BankConfig { n: self.n(), normalize: self.normalize, learnable: self.learnable }
    }

    pub fn dim(&self) -> usize {
        self.v.rows()
    }

    pub fn n(&self) -> usize {
        self.v.cols()
    }

    fn set_trainable(&mut self, learnable: bool) {
        if learnable && !self.v.requires_grad() {
            self.v = self.v.clone().with_grad();
        } else if !learnable && self.v.requires_grad() {
            self.v = Tensor::matrix(self.dim(), self.n(), self.v.values().to_vec()).expect("same shape");
        }
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        let n = self.n();
        self.v.values().iter().skip(i).step_by(n).copied().collect()
    }

    fn set_column(&mut self, i: usize, col: &[f64]) {
        let n = self.n();
        for (r, x) in col.iter().enumerate() {
            self.v.values_mut()[r * n + i] = *x;
        }
    }

    /// Modified Gram-Schmidt over the columns, resampling any column whose
    /// residual falls below [`RANK_EPS`]. Returns the resampled indices.
    fn gram_schmidt(&mut self) -> Vec<usize> {
        let (d, n) = (self.dim(), self.n());
        let mut done: Vec<Vec<f64>> = Vec::with_capacity(n);
        let mut resampled = Vec::new();
        for i in 0..n {
            let mut col = self.column(i);
            loop {
                // two passes keep the residual orthogonal to working precision
                for _ in 0..2 {
                    for q in &done {
                        let c = dot(q, &col);
                        col.iter_mut().zip(q).for_each(|(x, qi)| *x -= c * qi);
                    }
                }
                let r = norm(&col);
                if r >= RANK_EPS {
                    col.iter_mut().for_each(|x| *x /= r);
                    break;
                }
                resampled.push(i);
                col = (0..d).map(|_| StandardNormal.sample(&mut self.rng)).collect();
            }
            self.set_column(i, &col);
            done.push(col);
        }
        resampled
    }

    /// Restores `VᵀV = I` after an optimizer step. Returns the indices of
    /// columns that collapsed and were resampled from the bank's stream.
    pub fn reorthonormalize(&mut self) -> Result<Vec<usize>, Error> {
        if !self.learnable {
            return Err(Error::Contract("reorthonormalize on a non-learnable projection bank".into()));
        }
        Ok(self.gram_schmidt())
    }

    /// `max |VᵀV − I|`
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.n();
        let cols: Vec<Vec<f64>> = (0..n).map(|i| self.column(i)).collect();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(&cols[i], &cols[j]) - target).abs());
            }
        }
        worst
    }

    /// Records `V` on the tape; it receives gradients only when learnable.
    pub fn register(&self, tape: &mut Tape) -> Var {
        tape.leaf(&self.v)
    }

    /// Projects each row of `t` (`[B × d]`) to `[B × n]`.
    pub fn project(&self, tape: &mut Tape, t: Var, v: Var) -> Result<Var, Error> {
        let p = tape.matmul(t, v)?;
        if !self.normalize {
            return Ok(p);
        }
        tape.l2_normalize_rows(p).map_err(|e| match e {
            AutodiffError::Degenerate { norm, .. } => Error::DegenerateProjection { norm },
            other => other.into(),
        })
    }

    /// `p(t)` for a single unit-norm embedding.
    pub fn project_vector(&self, t: &[f64]) -> Result<Vec<f64>, Error> {
        if t.len() != self.dim() {
            return Err(AutodiffError::ShapeMismatch { op: "project", left: vec![t.len()], right: vec![self.dim(), self.n()] }.into());
        }
        let tn = norm(t);
        if (tn - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("project expects a unit vector, norm is {tn}")));
        }
        let mut p: Vec<f64> = (0..self.n()).map(|i| dot(&self.column(i), t)).collect();
        if self.normalize {
            let pn = norm(&p);
            if !(pn >= crate::autodiff::NORM_EPS) {
                return Err(Error::DegenerateProjection { norm: pn });
            }
            p.iter_mut().for_each(|x| *x /= pn);
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        v.into_iter().map(|x| x / n).collect()
    }

    #[test]
    fn hand_gram_schmidt_example() {
        let raw = Tensor::matrix(3, 2, vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let (bank, resampled) = ProjectionBank::from_columns(raw, 0, false, false).unwrap();
        assert!(resampled.is_empty());
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (got, want) in bank.column(0).iter().zip([h, h, 0.0]) {
            assert!((got - want).abs() < 1e-4);
        }
        for (got, want) in bank.column(1).iter().zip([h, -h, 0.0]) {
            assert!((got - want).abs() < 1e-4);
        }
        let vtv = bank.v.transposed().matmul(&bank.v).unwrap();
        for (got, want) in vtv.values().iter().zip([1.0, 0.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_orthonormal_and_deterministic() {
        for seed in 0..20 {
            let bank = init_projection_bank(64, 2, seed, true, false).unwrap();
            assert!(bank.orthonormality_error() < 1e-8);
            assert_eq!(bank, init_projection_bank(64, 2, seed, true, false).unwrap());
        }
        assert_ne!(init_projection_bank(64, 2, 0, true, false).unwrap().v, init_projection_bank(64, 2, 1, true, false).unwrap().v);
    }

    #[test]
    fn init_rejects_n_not_below_d() {
        assert!(init_projection_bank(4, 4, 0, false, false).is_err());
        assert!(init_projection_bank(4, 0, 0, false, false).is_err());
    }

    #[test]
    fn learnable_flag_controls_gradient_storage() {
        assert!(init_projection_bank(8, 2, 0, false, true).unwrap().v.requires_grad());
        assert!(!init_projection_bank(8, 2, 0, false, false).unwrap().v.requires_grad());
    }

    #[test]
    fn basis_projection() {
        let mut raw = vec![0.0; 4 * 2];
        raw[0] = 1.0; // e1 in column 0
        raw[3] = 1.0; // e2 in column 1
        let (bank, _) = ProjectionBank::from_columns(Tensor::matrix(4, 2, raw).unwrap(), 0, false, false).unwrap();
        assert_eq!(bank.project_vector(&[1.0, 0.0, 0.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(bank.project_vector(&[0.0, 0.0, 1.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn degenerate_normalized_projection_is_an_error() {
        let mut raw = vec![0.0; 4 * 2];
        raw[0] = 1.0;
        raw[3] = 1.0;
        let (bank, _) = ProjectionBank::from_columns(Tensor::matrix(4, 2, raw).unwrap(), 0, true, false).unwrap();
        assert!(matches!(bank.project_vector(&[0.0, 0.0, 1.0, 0.0]), Err(Error::DegenerateProjection { .. })));
        let mut tape = Tape::new();
        let t = tape.constant(1, 4, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        let v = bank.register(&mut tape);
        assert!(matches!(bank.project(&mut tape, t, v), Err(Error::DegenerateProjection { .. })));
    }

    #[test]
    fn bessel_inequality_holds() {
        let bank = init_projection_bank(64, 2, 9, false, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1_000 {
            let p = bank.project_vector(&unit(&mut rng, 64)).unwrap();
            assert!(norm(&p) <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn unnormalized_projection_is_linear() {
        let bank = init_projection_bank(16, 2, 3, false, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (t1, t2) = (unit(&mut rng, 16), unit(&mut rng, 16));
            let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let mix: Vec<f64> = t1.iter().zip(&t2).map(|(x, y)| a * x + b * y).collect();
            let mut tape = Tape::new();
            let v = bank.register(&mut tape);
            let m = tape.constant(1, 16, mix).unwrap();
            let pm = bank.project(&mut tape, m, v).unwrap();
            let (p1, p2) = (bank.project_vector(&t1).unwrap(), bank.project_vector(&t2).unwrap());
            for (i, got) in tape.value(pm).iter().enumerate() {
                assert!((got - (a * p1[i] + b * p2[i])).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn projected_cosine_is_scale_invariant() {
        let bank = init_projection_bank(16, 2, 4, false, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let (t1, t2) = (unit(&mut rng, 16), unit(&mut rng, 16));
            let (s1, s2) = (rng.random_range(0.1..10.0), rng.random_range(0.1..10.0));
            let cos_at = |a: f64, b: f64| {
                let mut tape = Tape::new();
                let v = bank.register(&mut tape);
                let x = tape.constant(1, 16, t1.iter().map(|x| a * x).collect()).unwrap();
                let y = tape.constant(1, 16, t2.iter().map(|x| b * x).collect()).unwrap();
                let (px, py) = (bank.project(&mut tape, x, v).unwrap(), bank.project(&mut tape, y, v).unwrap());
                let c = tape.cosine_similarity(px, py).unwrap();
                tape.scalar(c)
            };
            assert!((cos_at(1.0, 1.0) - cos_at(s1, s2)).abs() < 1e-12);
        }
    }

    #[test]
    fn reorthonormalize_restores_invariant() {
        let mut bank = init_projection_bank(64, 2, 5, false, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for x in bank.v.values_mut() {
            *x += 0.01 * rng.random_range(-1.0..1.0);
        }
        assert!(bank.orthonormality_error() > 1e-8);
        assert!(bank.reorthonormalize().unwrap().is_empty());
        assert!(bank.orthonormality_error() < 1e-8);
    }

    #[test]
    fn duplicate_columns_are_resampled() {
        let mut bank = init_projection_bank(8, 2, 6, false, true).unwrap();
        let first = bank.column(0);
        bank.set_column(1, &first);
        assert_eq!(bank.reorthonormalize().unwrap(), vec![1]);
        assert!(bank.orthonormality_error() < 1e-8);
    }

    #[test]
    fn reorthonormalize_requires_learnable() {
        let mut bank = init_projection_bank(8, 2, 7, false, false).unwrap();
        assert!(matches!(bank.reorthonormalize(), Err(Error::Contract(_))));
    }

    #[test]
    fn gradient_reaches_v_only_when_learnable() {
        for learnable in [false, true] {
            let bank = init_projection_bank(8, 2, 8, false, learnable).unwrap();
            let mut tape = Tape::new();
            let v = bank.register(&mut tape);
            let t = tape.param(&Tensor::matrix(1, 8, vec![0.3; 8]).unwrap());
            let p = bank.project(&mut tape, t, v).unwrap();
            let s = tape.sum(p);
            let grads = tape.backward(s).unwrap();
            assert_eq!(grads.get(v).is_some(), learnable);
            assert!(grads.get(t).is_some());
        }
    }
}
