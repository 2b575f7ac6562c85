//! Encoders, projection bank and temperature bundled as one trainable model.

use crate::autodiff::Tensor;
use crate::encoders::{init_encoders, tokenize, ImageEncoder, TextEncoder, DEFAULT_DIM, DEFAULT_TOKEN_DIM};
use crate::losses::Temperature;
use crate::projection::{init_projection_bank, BankConfig, ProjectionBank};
use crate::scene::{Caption, Scene, Vocabulary};
use crate::Error;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d: usize,
    pub d_tok: usize,
    pub seed: u64,
    pub bank: BankConfig,
    /// Image-embedding noise; zero disables it.
    pub noise_sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { d: DEFAULT_DIM, d_tok: DEFAULT_TOKEN_DIM, seed: 42, bank: BankConfig::default(), noise_sigma: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemClipModel {
    pub text: TextEncoder,
    pub image: ImageEncoder,
    pub bank: ProjectionBank,
    pub temperature: Temperature,
    pub seed: u64,
}

/// One trainable tensor, named as in the checkpoint.
pub struct Param<'a> {
    pub name: &'static str,
    pub tensor: &'a mut Tensor,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

impl SemClipModel {
    pub fn init(config: &ModelConfig) -> Result<Self, Error> {
        if config.d == 0 || config.d_tok == 0 {
            return Err(Error::Contract("encoder dimensions must be positive".into()));
        }
        if !(config.noise_sigma >= 0.0 && config.noise_sigma.is_finite()) {
            return Err(Error::Contract(format!("noise sigma {} must be non-negative", config.noise_sigma)));
        }
        let (text, mut image) = init_encoders(config.seed, config.d, config.d_tok);
        image.noise_sigma = config.noise_sigma;
        let b = config.bank;
        let bank = init_projection_bank(config.d, b.n, config.seed, b.normalize, b.learnable)?;
        Ok(Self { text, image, bank, temperature: Temperature::default(), seed: config.seed })
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            d: self.text.dim(),
            d_tok: self.text.token_dim(),
            seed: self.seed,
            bank: self.bank.config(),
            noise_sigma: self.image.noise_sigma,
        }
    }

    /// Trainable tensors in a fixed order. `V` is listed only when learnable;
    /// the image encoder never is.
    pub fn params_mut(&mut self) -> Vec<Param<'_>> {
        let t = &mut self.text;
        let mut out = vec![
            Param { name: "text.embedding", tensor: &mut t.embedding, decay: true },
            Param { name: "text.w1", tensor: &mut t.w1, decay: true },
            Param { name: "text.b1", tensor: &mut t.b1, decay: false },
            Param { name: "text.w2", tensor: &mut t.w2, decay: true },
            Param { name: "text.b2", tensor: &mut t.b2, decay: false },
            Param { name: "temperature.theta", tensor: &mut self.temperature.theta, decay: false },
        ];
        if self.bank.learnable {
            out.push(Param { name: "projection_V", tensor: &mut self.bank.v, decay: false });
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.tensor.zero_grad());
    }

    pub fn embed_texts(&self, captions: &[Caption]) -> Result<Vec<Vec<f64>>, Error> {
        if captions.is_empty() {
            return Ok(Vec::new());
        }
        let vocab = Vocabulary::standard();
        let bags = captions
            .iter()
            .map(|c| tokenize(c, &vocab).map_err(|e| Error::Data(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.text.encode_batch(&bags)?)
    }

    /// Noise-free image embeddings.
    pub fn embed_images(&self, scenes: &[Scene]) -> Vec<Vec<f64>> {
        scenes.iter().map(|s| self.image.encode(s)).collect()
    }
}
