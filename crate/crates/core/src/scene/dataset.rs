use super::{sample_scene, validate_triple, CaptionTriple, NegationStrategy, Scene, Vocabulary};
use crate::io::{self, sha256_hex};
use crate::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeSet;
use std::path::Path;

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const MANIFEST_FILE: &str = "dataset.json";
const FORMAT_VERSION: u32 = 1;
const MAX_ATTEMPTS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub count: usize,
    pub seed: u64,
    /// Fraction of distinct scenes assigned to the training split.
    pub train_fraction: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { count: 2000, seed: 42, train_fraction: 0.8 }
    }
}

/// One line of a dataset file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleRecord {
    pub scene_id: String,
    pub scene: Scene,
    pub original: String,
    pub paraphrase: String,
    pub negation: String,
    pub strategy: NegationStrategy,
}

impl TripleRecord {
    pub fn triple(&self) -> CaptionTriple {
        CaptionTriple {
            scene_id: self.scene_id.clone(),
            original: self.original.as_str().into(),
            paraphrase: self.paraphrase.as_str().into(),
            negation: self.negation.as_str().into(),
            negation_strategy: self.strategy,
            validated: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub seed: u64,
    pub count: usize,
    pub train_fraction: f64,
    pub vocab_hash: String,
    pub train_count: usize,
    pub test_count: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Candidates rejected by validation and generated again.
    pub regenerated: usize,
    pub train_sha256: String,
    pub test_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<TripleRecord>,
    pub test: Vec<TripleRecord>,
    pub manifest: DatasetManifest,
}

/// Generates `count` validated triples and splits them by scene.
///
/// Triple `i` draws from its own ChaCha stream, so the output is identical
/// for any number of worker threads. Each candidate passes through
/// [`validate_triple`]; rejected candidates are drawn again.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset, Error> {
    if config.count == 0 {
        return Err(Error::Usage("count must be positive".into()));
    }
    if !(config.train_fraction > 0.0 && config.train_fraction < 1.0) {
        return Err(Error::Usage(format!("split fraction {} not in (0, 1)", config.train_fraction)));
    }
    let generated: Vec<(TripleRecord, usize)> = (0..config.count)
        .into_par_iter()
        .map(|i| generate_one(config.seed, i as u64))
        .collect::<Result<_, _>>()?;
    let regenerated = generated.iter().map(|(_, r)| r).sum();

    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (record, _) in generated {
        if in_train_split(config.seed, &record.scene_id, config.train_fraction) {
            train.push(record);
        } else {
            test.push(record);
        }
    }
    let distinct = |v: &[TripleRecord]| v.iter().map(|r| r.scene_id.as_str()).collect::<BTreeSet<_>>().len();
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        seed: config.seed,
        count: config.count,
        train_fraction: config.train_fraction,
        vocab_hash: Vocabulary::standard().hash(),
        train_count: train.len(),
        test_count: test.len(),
        train_scenes: distinct(&train),
        test_scenes: distinct(&test),
        regenerated,
        train_sha256: sha256_hex(&to_jsonl(&train)?),
        test_sha256: sha256_hex(&to_jsonl(&test)?),
    };
    Ok(Dataset { train, test, manifest })
}

fn generate_one(seed: u64, index: u64) -> Result<(TripleRecord, usize), Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    for attempt in 0..MAX_ATTEMPTS {
        let scene = sample_scene(&mut rng);
        let strategy = if rng.random_bool(0.5) { NegationStrategy::LexicalNot } else { NegationStrategy::RelationFlip };
        let mut triple = CaptionTriple::generate(&scene, strategy);
        if validate_triple(&triple, &scene).is_ok() {
            triple.validated = true;
            let record = TripleRecord {
                scene_id: triple.scene_id,
                scene,
                original: triple.original.text(),
                paraphrase: triple.paraphrase.text(),
                negation: triple.negation.text(),
                strategy,
            };
            return Ok((record, attempt));
        }
    }
    Err(Error::Data(format!("triple {index}: no valid candidate after {MAX_ATTEMPTS} attempts")))
}

/// Scene-level split: every copy of a scene lands on the same side.
fn in_train_split(seed: u64, scene_id: &str, fraction: f64) -> bool {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(scene_id.as_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    let unit = (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64;
    unit < fraction
}

fn to_jsonl(records: &[TripleRecord]) -> Result<Vec<u8>, Error> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Data(e.to_string()))?;
        out.push(b'\n');
    }
    Ok(out)
}

fn from_jsonl(path: &Path) -> Result<Vec<TripleRecord>, Error> {
    let text = io::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            serde_json::from_str(line)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

impl Dataset {
    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        io::create_dir(dir)?;
        io::write(&dir.join(TRAIN_FILE), &to_jsonl(&self.train)?)?;
        io::write(&dir.join(TEST_FILE), &to_jsonl(&self.test)?)?;
        let mut manifest = serde_json::to_vec_pretty(&self.manifest).map_err(|e| Error::Data(e.to_string()))?;
        manifest.push(b'\n');
        io::write(&dir.join(MANIFEST_FILE), &manifest)
    }

    /// Loads a dataset directory and re-validates every triple.
    pub fn read(dir: &Path) -> Result<Self, Error> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest: DatasetManifest = serde_json::from_str(&io::read_to_string(&manifest_path)?)
            .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
        let train = from_jsonl(&dir.join(TRAIN_FILE))?;
        let test = from_jsonl(&dir.join(TEST_FILE))?;
        if manifest.vocab_hash != Vocabulary::standard().hash() {
            return Err(Error::Incompatible("dataset vocabulary hash differs from this build".into()));
        }
        for r in train.iter().chain(&test) {
            validate_triple(&r.triple(), &r.scene)
                .map_err(|e| Error::Data(format!("invalid triple for {}: {e}", r.scene_id)))?;
        }
        Ok(Self { train, test, manifest })
    }

    /// SHA-256 over both split files, as written.
    pub fn content_hash(&self) -> Result<String, Error> {
        let mut bytes = to_jsonl(&self.train)?;
        bytes.extend(to_jsonl(&self.test)?);
        Ok(sha256_hex(&bytes))
    }
}
