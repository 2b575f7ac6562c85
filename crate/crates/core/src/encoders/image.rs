use super::{scaled_normal, stream_rng, streams};
use crate::autodiff::kernels::norm;
use crate::autodiff::Tensor;
use crate::scene::{Scene, SCENE_FEATURES};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Frozen random map from one-hot scene features to unit embeddings.
///
/// The projection never receives gradients; it is stored without a gradient
/// accumulator so an accidental update is a type-level error.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEncoder {
    /// `SCENE_FEATURES × d`
    pub projection: Tensor,
    /// Standard deviation of additive Gaussian noise applied before
    /// normalization. Zero disables noise.
    pub noise_sigma: f64,
}

impl ImageEncoder {
    pub fn init(seed: u64, d: usize) -> Self {
        let mut rng = stream_rng(seed, streams::IMAGE);
        Self { projection: scaled_normal(&mut rng, SCENE_FEATURES, d), noise_sigma: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.projection.cols()
    }

    /// Noise-free embedding.
    pub fn encode(&self, scene: &Scene) -> Vec<f64> {
        self.embed(scene, None::<&mut rand_chacha::ChaCha8Rng>)
    }

    /// Embedding with the configured noise drawn from `rng`.
    pub fn encode_noisy<R: Rng + ?Sized>(&self, scene: &Scene, rng: &mut R) -> Vec<f64> {
        self.embed(scene, Some(rng))
    }

    fn embed<R: Rng + ?Sized>(&self, scene: &Scene, rng: Option<&mut R>) -> Vec<f64> {
        let d = self.dim();
        let features = scene.features();
        let mut out = vec![0.0; d];
        for (f, row) in features.iter().zip(self.projection.values().chunks(d)) {
            if *f != 0.0 {
                out.iter_mut().zip(row).for_each(|(o, w)| *o += f * w);
            }
        }
        if let Some(rng) = rng.filter(|_| self.noise_sigma > 0.0) {
            for o in &mut out {
                let z: f64 = StandardNormal.sample(rng);
                *o += self.noise_sigma * z;
            }
        }
        let n = norm(&out);
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}
