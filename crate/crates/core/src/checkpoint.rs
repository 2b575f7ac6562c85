//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0 | 8 | magic `SEMCLIP\0` |
//! | 8 | 4 | format version (`u32`, currently 1) |
//! | 12 | 4 | `d` |
//! | 16 | 4 | `d_tok` |
//! | 20 | 4 | vocabulary size |
//! | 24 | 32 | SHA-256 of the vocabulary |
//! | 56 | 8 | seed (`u64`) |
//! | 64 | 4 | `n` |
//! | 68 | 1 | normalize flag |
//! | 69 | 1 | learnable flag |
//! | 70 | 2 | reserved, zero |
//! | 72 | 8 | image noise σ (`f64`) |
//! | 80 | 8 | τ ceiling (`f64`) |
//! | 88 | 4 | array count |
//! | 92 | … | arrays |
//! | end − 32 | 32 | SHA-256 of every preceding byte |
//!
//! Each array is a `u16` name length, the UTF-8 name, a `u8` rank, one
//! `u32` per dimension and the row-major `f32` values. Arrays appear in the
//! order of [`ARRAY_NAMES`].

use crate::autodiff::Tensor;
use crate::encoders::{ImageEncoder, TextEncoder};
use crate::io;
use crate::losses::Temperature;
use crate::model::SemClipModel;
use crate::projection::ProjectionBank;
use crate::scene::Vocabulary;
use crate::Error;
use sha2::{Digest, Sha256};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"SEMCLIP\0";
pub const VERSION: u32 = 1;
pub const ARRAY_NAMES: [&str; 8] = [
    "text.embedding",
    "text.w1",
    "text.b1",
    "text.w2",
    "text.b2",
    "image.projection",
    "projection_V",
    "temperature.theta",
];

fn vocab_digest() -> [u8; 32] {
    Sha256::digest(Vocabulary::standard().tokens().join("\n").as_bytes()).into()
}

pub fn to_bytes(model: &SemClipModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for x in [VERSION, model.text.dim() as u32, model.text.token_dim() as u32, model.text.vocab_size() as u32] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&vocab_digest());
    out.extend_from_slice(&model.seed.to_le_bytes());
    out.extend_from_slice(&(model.bank.n() as u32).to_le_bytes());
    out.push(model.bank.normalize as u8);
    out.push(model.bank.learnable as u8);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&model.image.noise_sigma.to_le_bytes());
    out.extend_from_slice(&model.temperature.tau_max.to_le_bytes());
    let arrays = arrays(model);
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, t) in arrays {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &dim in t.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &x in t.values() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

fn arrays(m: &SemClipModel) -> [(&'static str, &Tensor); 8] {
    [
        (ARRAY_NAMES[0], &m.text.embedding),
        (ARRAY_NAMES[1], &m.text.w1),
        (ARRAY_NAMES[2], &m.text.b1),
        (ARRAY_NAMES[3], &m.text.w2),
        (ARRAY_NAMES[4], &m.text.b2),
        (ARRAY_NAMES[5], &m.image.projection),
        (ARRAY_NAMES[6], &m.bank.v),
        (ARRAY_NAMES[7], &m.temperature.theta),
    ]
}

pub fn save(model: &SemClipModel, path: &Path) -> Result<(), Error> {
    io::write(path, &to_bytes(model))
}

pub fn load(path: &Path) -> Result<SemClipModel, Error> {
    from_bytes(&io::read(path)?)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Checkpoint { offset: self.pos as u64, message: message.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], Error> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated while reading {what}")));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N], Error> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8, Error> {
        Ok(self.array::<1>(what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, Error> {
        Ok(u16::from_le_bytes(self.array(what)?))
    }

    fn u32(&mut self, what: &str) -> Result<u32, Error> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64, Error> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64, Error> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn flag(&mut self, what: &str) -> Result<bool, Error> {
        let start = self.pos;
        match self.u8(what)? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(Error::Checkpoint { offset: start as u64, message: format!("{what} flag is {b}, expected 0 or 1") }),
        }
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<SemClipModel, Error> {
    const TRAILER: usize = 32;
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint { offset: 0, message: "not a checkpoint (bad magic)".into() });
    }
    let at = r.pos;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint { offset: at as u64, message: format!("unsupported format version {version}") });
    }
    let d = r.u32("d")? as usize;
    let d_tok = r.u32("d_tok")? as usize;
    let vocab_size = r.u32("vocabulary size")? as usize;
    let hash: [u8; 32] = r.array("vocabulary hash")?;
    if hash != vocab_digest() || vocab_size != Vocabulary::standard().len() {
        return Err(Error::Incompatible(format!(
            "checkpoint vocabulary {} does not match this build's {}",
            io::hex(&hash),
            Vocabulary::standard().hash()
        )));
    }
    let seed = r.u64("seed")?;
    let n = r.u32("n")? as usize;
    let normalize = r.flag("normalize")?;
    let learnable = r.flag("learnable")?;
    let at = r.pos;
    if r.u16("reserved")? != 0 {
        return Err(Error::Checkpoint { offset: at as u64, message: "reserved field is not zero".into() });
    }
    let noise_sigma = r.f64("noise sigma")?;
    let tau_max = r.f64("tau ceiling")?;
    let at = r.pos;
    let count = r.u32("array count")? as usize;
    if count != ARRAY_NAMES.len() {
        return Err(Error::Checkpoint { offset: at as u64, message: format!("expected {} arrays, found {count}", ARRAY_NAMES.len()) });
    }
    let vocab = Vocabulary::standard().len();
    let expected: [Vec<usize>; 8] = [
        vec![vocab, d_tok],
        vec![d_tok, d],
        vec![1, d],
        vec![d, d],
        vec![1, d],
        vec![crate::scene::SCENE_FEATURES, d],
        vec![d, n],
        vec![1, 1],
    ];
    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in ARRAY_NAMES.iter().zip(expected) {
        let at = r.pos;
        let len = r.u16("array name length")? as usize;
        let got = r.take(len, "array name")?;
        if got != name.as_bytes() {
            return Err(Error::Checkpoint {
                offset: at as u64,
                message: format!("expected array {name:?}, found {:?}", String::from_utf8_lossy(got)),
            });
        }
        let at = r.pos;
        let rank = r.u8("rank")? as usize;
        let dims = (0..rank).map(|_| r.u32("dimension").map(|x| x as usize)).collect::<Result<Vec<_>, _>>()?;
        if dims != shape {
            return Err(Error::Checkpoint { offset: at as u64, message: format!("{name} has shape {dims:?}, expected {shape:?}") });
        }
        let total: usize = dims.iter().product();
        let raw = r.take(total * 4, name)?;
        let values: Vec<f64> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        tensors.push(Tensor::new(dims, values)?);
    }
    let body_end = r.pos;
    let stored = r.take(TRAILER, "checksum")?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint { offset: r.pos as u64, message: format!("{} trailing bytes", bytes.len() - r.pos) });
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != stored {
        return Err(Error::Checkpoint { offset: body_end as u64, message: "checksum mismatch".into() });
    }
    if let Some(bad) = tensors.iter().position(|t| t.values().iter().any(|x| !x.is_finite())) {
        return Err(Error::Data(format!("checkpoint array {} holds non-finite values", ARRAY_NAMES[bad])));
    }

    let mut it = tensors.into_iter();
    let mut next = || it.next().expect("eight arrays");
    let text = TextEncoder {
        embedding: next().with_grad(),
        w1: next().with_grad(),
        b1: next().with_grad(),
        w2: next().with_grad(),
        b2: next().with_grad(),
    };
    let image = ImageEncoder { projection: next(), noise_sigma };
    let bank = ProjectionBank::from_stored(next(), seed, normalize, learnable)?;
    let temperature = Temperature { theta: next().with_grad(), tau_max };
    Ok(SemClipModel { text, image, bank, temperature, seed })
}
