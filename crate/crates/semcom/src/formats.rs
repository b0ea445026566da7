//! Binary files: `MSIT` image tensors, `MNN1` network checkpoints and
//! `MCB1` codebooks. All little-endian.
//!
//! Pixels are stored as `f32` and widened to `f64` on load. Images produced
//! by the generator are already `f32`-representable, so a save/load round
//! trip is exact for them.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use semcom_core::dataset::{Dataset, MultispectralImage};
use semcom_core::dtjscc::{Codebook, DtJsccSystem};
use semcom_core::nn::{Activation, Dense, Network, Tensor};
use thiserror::Error;

pub const MSIT_MAGIC: [u8; 4] = *b"MSIT";
pub const MSIT_VERSION: u32 = 1;
pub const MNN_MAGIC: [u8; 4] = *b"MNN1";
pub const MCB_MAGIC: [u8; 4] = *b"MCB1";
/// Largest image accepted from an `MSIT` record, in pixels (1 GiB of `f32`).
pub const MAX_IMAGE_PIXELS: u64 = 1 << 28;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("dimensions {0:?} overflow")]
    DimensionOverflow(Vec<u64>),
    #[error("truncated at byte {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error(transparent)]
    Invalid(#[from] semcom_core::Error),
}

impl FormatError {
    /// Stable numeric code per failure class.
    pub fn code(&self) -> u8 {
        match self {
            FormatError::Io { .. } => 1,
            FormatError::BadMagic { .. } => 2,
            FormatError::UnsupportedVersion(_) => 3,
            FormatError::DimensionOverflow(_) => 4,
            FormatError::Truncated { .. } => 5,
            FormatError::Invalid(_) => 6,
        }
    }
}

pub type Result<T> = std::result::Result<T, FormatError>;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if n > left {
            return Err(FormatError::Truncated { offset: self.buf.len(), needed: n - left });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found = self.array::<4>()?;
        if found != expected {
            return Err(FormatError::BadMagic { expected, found });
        }
        Ok(())
    }

    /// `count` values of `width` bytes each, failing before allocating if
    /// the file cannot hold them.
    fn block(&mut self, count: u64, width: u64, dims: &[u64]) -> Result<&'a [u8]> {
        let bytes = count.checked_mul(width).and_then(|b| usize::try_from(b).ok());
        let bytes = bytes.ok_or_else(|| FormatError::DimensionOverflow(dims.to_vec()))?;
        self.take(bytes)
    }

    fn f64s(&mut self, count: u64, dims: &[u64]) -> Result<Vec<f64>> {
        let raw = self.block(count, 8, dims)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.to_path_buf(), source }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn encode_images(images: &[MultispectralImage]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MSIT_MAGIC);
    out.extend_from_slice(&MSIT_VERSION.to_le_bytes());
    out.extend_from_slice(&(images.len() as u32).to_le_bytes());
    for im in images {
        for v in [im.height(), im.width(), im.bands(), im.label() as u16] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&im.timestamp_index().to_le_bytes());
        for &p in im.pixels() {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_images(bytes: &[u8]) -> Result<Vec<MultispectralImage>> {
    let mut r = Reader::new(bytes);
    r.magic(MSIT_MAGIC)?;
    let version = r.u32()?;
    if version != MSIT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let count = r.u32()?;
    let mut images = Vec::new();
    for _ in 0..count {
        let (h, w, d, label) = (r.u16()?, r.u16()?, r.u16()?, r.u16()?);
        let t = r.u32()?;
        let dims = [h as u64, w as u64, d as u64];
        let n = dims.iter().product::<u64>();
        if n > MAX_IMAGE_PIXELS {
            return Err(FormatError::DimensionOverflow(dims.to_vec()));
        }
        let raw = r.block(n, 4, &dims)?;
        let pixels = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        images.push(MultispectralImage::new(h, w, d, pixels, label, t)?);
    }
    Ok(images)
}

pub fn save_tensor_file(path: &Path, images: &[MultispectralImage]) -> Result<()> {
    write_file(path, &encode_images(images))
}

pub fn load_tensor_file(path: &Path) -> Result<Dataset> {
    Ok(Dataset::new(decode_images(&read_file(path)?)?))
}

/// `MNN1` carries shapes and parameters only; activations are supplied by
/// the caller from the network's role.
pub fn encode_network(net: &Network) -> Vec<u8> {
    let mut out = MNN_MAGIC.to_vec();
    for layer in net.layers() {
        out.extend_from_slice(&(layer.outputs() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.inputs() as u32).to_le_bytes());
        for v in layer.weights.data().iter().chain(&layer.biases) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads layers until the end of the buffer. Every layer but the last gets
/// `hidden`, the last gets `output`.
pub fn decode_network(bytes: &[u8], hidden: Activation, output: Activation) -> Result<Network> {
    let mut r = Reader::new(bytes);
    r.magic(MNN_MAGIC)?;
    let mut layers = Vec::new();
    while !r.at_end() {
        let (rows, cols) = (r.u32()? as u64, r.u32()? as u64);
        let dims = [rows, cols];
        let n = rows.checked_mul(cols).ok_or_else(|| FormatError::DimensionOverflow(dims.to_vec()))?;
        let weights = r.f64s(n, &dims)?;
        let biases = r.f64s(rows, &dims)?;
        let weights = Tensor::from_vec(&[rows as usize, cols as usize], weights)?;
        layers.push(Dense { weights, biases, activation: hidden });
    }
    if let Some(last) = layers.last_mut() {
        last.activation = output;
    }
    Ok(Network::new(layers)?)
}

pub fn save_network(path: &Path, net: &Network) -> Result<()> {
    write_file(path, &encode_network(net))
}

pub fn load_network(path: &Path, hidden: Activation, output: Activation) -> Result<Network> {
    decode_network(&read_file(path)?, hidden, output)
}

pub fn encode_codebook(cb: &Codebook) -> Vec<u8> {
    let mut out = MCB_MAGIC.to_vec();
    out.extend_from_slice(&(cb.k() as u32).to_le_bytes());
    out.extend_from_slice(&(cb.dim() as u32).to_le_bytes());
    for v in cb.entries() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_codebook(bytes: &[u8]) -> Result<Codebook> {
    let mut r = Reader::new(bytes);
    r.magic(MCB_MAGIC)?;
    let (k, a) = (r.u32()? as u64, r.u32()? as u64);
    let dims = [k, a];
    let n = k.checked_mul(a).ok_or_else(|| FormatError::DimensionOverflow(dims.to_vec()))?;
    let entries = r.f64s(n, &dims)?;
    Ok(Codebook::new(k as usize, a as usize, entries)?)
}

pub fn save_codebook(path: &Path, cb: &Codebook) -> Result<()> {
    write_file(path, &encode_codebook(cb))
}

pub fn load_codebook(path: &Path) -> Result<Codebook> {
    decode_codebook(&read_file(path)?)
}

pub const ENCODER_FILE: &str = "encoder.mnn";
pub const CLASSIFIER_FILE: &str = "classifier.mnn";
pub const COVARIANCE_FILE: &str = "covariance.mnn";
pub const CODEBOOK_FILE: &str = "codebook.mcb";

/// Writes encoder, classifier and codebook into `dir`, plus the covariance
/// predictor when given.
pub fn save_system(dir: &Path, sys: &DtJsccSystem, g: Option<&Network>) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    save_network(&dir.join(ENCODER_FILE), &sys.encoder)?;
    save_network(&dir.join(CLASSIFIER_FILE), &sys.classifier)?;
    save_codebook(&dir.join(CODEBOOK_FILE), &sys.codebook)?;
    if let Some(g) = g {
        save_network(&dir.join(COVARIANCE_FILE), g)?;
    }
    Ok(())
}

pub fn load_system(dir: &Path) -> Result<DtJsccSystem> {
    Ok(DtJsccSystem {
        encoder: load_network(&dir.join(ENCODER_FILE), Activation::Relu, Activation::Identity)?,
        classifier: load_network(&dir.join(CLASSIFIER_FILE), Activation::Identity, Activation::Identity)?,
        codebook: load_codebook(&dir.join(CODEBOOK_FILE))?,
    })
}

pub fn load_covariance_network(dir: &Path) -> Result<Network> {
    load_network(&dir.join(COVARIANCE_FILE), Activation::Relu, Activation::Softplus)
}
