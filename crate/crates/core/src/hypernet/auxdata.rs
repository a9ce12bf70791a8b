use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::Rng;

pub const AUXD_MAGIC: &[u8; 4] = b"AUXD";

/// Labelled images for the auxiliary loss.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxBatch {
    /// `[B, C, H, W]`.
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl AuxBatch {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.shape().len() != 4 {
            return Err(Error::Shape(format!("batch inputs must be NCHW, got {:?}", inputs.shape())));
        }
        if labels.is_empty() || labels.len() != inputs.shape()[0] {
            return Err(Error::Contract(format!(
                "{} labels for {} inputs",
                labels.len(),
                inputs.shape()[0]
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Contract(format!("label {bad} ≥ class count {classes}")));
        }
        Ok(AuxBatch {
            inputs,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// An in-memory image classification set.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxDataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Row-major samples, `channels·height·width` values each.
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
}

impl AuxDataset {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        classes: usize,
        images: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let size = channels * height * width;
        if size == 0 || classes == 0 {
            return Err(Error::Validation("dataset dimensions must be positive".into()));
        }
        if images.len() != size * labels.len() {
            return Err(Error::Validation(format!(
                "{} values for {} samples of size {size}",
                images.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l >= classes) {
            return Err(Error::Validation(format!("label outside {classes} classes")));
        }
        if images.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite pixel".into()));
        }
        Ok(AuxDataset {
            channels,
            height,
            width,
            classes,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_size(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn batch(&self, indices: &[usize]) -> Result<AuxBatch> {
        let size = self.sample_size();
        let mut data = Vec::with_capacity(indices.len() * size);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Contract(format!("sample {i} of {}", self.len())));
            }
            data.extend_from_slice(&self.images[i * size..(i + 1) * size]);
            labels.push(self.labels[i]);
        }
        let inputs = Tensor::new(vec![indices.len(), self.channels, self.height, self.width], data)?;
        AuxBatch::new(inputs, labels, self.classes)
    }

    /// `size` samples drawn uniformly with replacement.
    pub fn sample_batch(&self, rng: &mut Rng, size: usize) -> Result<AuxBatch> {
        if self.is_empty() {
            return Err(Error::Contract("cannot sample from an empty dataset".into()));
        }
        let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..self.len())).collect();
        self.batch(&idx)
    }

    /// Consecutive batches of at most `size` covering the whole set.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = Result<AuxBatch>> + '_ {
        let size = size.max(1);
        (0..self.len())
            .step_by(size)
            .map(move |s| self.batch(&(s..(s + size).min(self.len())).collect::<Vec<_>>()))
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn read_auxd(path: &Path) -> Result<AuxDataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| format_err(path, "truncated header"))?;
    if &magic != AUXD_MAGIC {
        return Err(format_err(path, "bad magic, expected AUXD"));
    }
    let u32s = |r: &mut BufReader<fs::File>| -> Result<usize> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| format_err(path, "truncated file"))?;
        Ok(u32::from_le_bytes(b) as usize)
    };
    let count = u32s(&mut r)?;
    let channels = u32s(&mut r)?;
    let height = u32s(&mut r)?;
    let width = u32s(&mut r)?;
    let classes = u32s(&mut r)?;
    let size = channels * height * width;
    let mut images = Vec::with_capacity(count * size);
    let mut labels = Vec::with_capacity(count);
    let mut buf = vec![0u8; size * 4];
    for _ in 0..count {
        r.read_exact(&mut buf).map_err(|_| format_err(path, "truncated sample"))?;
        images.extend(buf.chunks(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))));
        labels.push(u32s(&mut r)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(format_err(path, "trailing bytes after last sample"));
    }
    AuxDataset::new(channels, height, width, classes, images, labels).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_auxd(path: &Path, data: &AuxDataset) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(AUXD_MAGIC).map_err(io)?;
    for v in [data.len(), data.channels, data.height, data.width, data.classes] {
        w.write_all(&(v as u32).to_le_bytes()).map_err(io)?;
    }
    let size = data.sample_size();
    for (i, &label) in data.labels.iter().enumerate() {
        for &px in &data.images[i * size..(i + 1) * size] {
            w.write_all(&(px as f32).to_le_bytes()).map_err(io)?;
        }
        w.write_all(&(label as u32).to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}
