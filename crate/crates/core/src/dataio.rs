//! IDX datasets, model files and result tables.

use crate::neuro::{CompartmentLayer, CompartmentParams};
use crate::trainer::Network;
use flate2::read::GzDecoder;
use ndarray::{Array1, Array2};
use rand::seq::index;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const DEFAULT_ITEM_CAP: usize = 10_000_000;
const MAX_SIDE: usize = 4096;
pub const N_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{field}: expected {expected}, found {found}")]
    BadMagic { field: &'static str, expected: u32, found: u32 },
    #[error("{field}: file ends early (needed {needed} bytes)")]
    Truncated { field: &'static str, needed: usize },
    #[error("{field} = {value} exceeds the limit {cap}")]
    TooLarge { field: &'static str, value: usize, cap: usize },
    #[error("{field} must be positive")]
    Empty { field: &'static str },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {value} at index {index} is not a class in [0, {N_CLASSES})")]
    Label { index: usize, value: u8 },
    #[error("cannot draw {requested} samples from {available}")]
    Split { requested: usize, available: usize },
    #[error("model format version {found} is not supported (this build reads version {supported})")]
    ModelVersion { found: u32, supported: u32 },
    #[error("corrupt model file: {0}")]
    ModelCorrupt(String),
    #[error("no records to write")]
    NoRecords,
    #[error("results: {0}")]
    Results(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Images as rows of intensities in `[0, 1]`, with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.n_pixels();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn label_counts(&self) -> [usize; N_CLASSES] {
        let mut counts = [0; N_CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }
}

fn open_maybe_gzip(path: &Path) -> Result<Box<dyn Read>, DataError> {
    let mut file = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut head = [0u8; 2];
    let n = read_up_to(&mut file, &mut head).map_err(io_err(path))?;
    let prefix = io::Cursor::new(head[..n].to_vec());
    let stream = prefix.chain(file);
    if n == 2 && head == [0x1f, 0x8b] {
        Ok(Box::new(GzDecoder::new(stream)))
    } else {
        Ok(Box::new(stream))
    }
}

fn read_up_to<R: Read + ?Sized>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            k => filled += k,
        }
    }
    Ok(filled)
}

fn read_exact_or(r: &mut dyn Read, buf: &mut [u8], field: &'static str, path: &Path) -> Result<(), DataError> {
    match read_up_to(r, buf) {
        Ok(n) if n == buf.len() => Ok(()),
        Ok(_) => Err(DataError::Truncated {
            field,
            needed: buf.len(),
        }),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(DataError::Truncated {
            field,
            needed: buf.len(),
        }),
        Err(e) => Err(io_err(path)(e)),
    }
}

fn read_u32(r: &mut dyn Read, field: &'static str, path: &Path) -> Result<u32, DataError> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, field, path)?;
    Ok(u32::from_be_bytes(b))
}

fn check_dim(field: &'static str, value: u32, cap: usize) -> Result<usize, DataError> {
    let value = value as usize;
    if value == 0 {
        return Err(DataError::Empty { field });
    }
    if value > cap {
        return Err(DataError::TooLarge { field, value, cap });
    }
    Ok(value)
}

/// Reads an IDX image/label file pair, gzip-compressed or not.
pub fn load_idx(name: &str, images: &Path, labels: &Path) -> Result<Dataset, DataError> {
    load_idx_with_cap(name, images, labels, DEFAULT_ITEM_CAP)
}

/// As [`load_idx`], refusing headers that declare more than `cap` items.
pub fn load_idx_with_cap(name: &str, images: &Path, labels: &Path, cap: usize) -> Result<Dataset, DataError> {
    let mut r = open_maybe_gzip(images)?;
    let magic = read_u32(&mut *r, "image magic", images)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            field: "image magic",
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let n_images = check_dim("image count", read_u32(&mut *r, "image count", images)?, cap)?;
    let height = check_dim("image rows", read_u32(&mut *r, "image rows", images)?, MAX_SIDE)?;
    let width = check_dim("image columns", read_u32(&mut *r, "image columns", images)?, MAX_SIDE)?;

    let mut l = open_maybe_gzip(labels)?;
    let magic = read_u32(&mut *l, "label magic", labels)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            field: "label magic",
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let n_labels = check_dim("label count", read_u32(&mut *l, "label count", labels)?, cap)?;
    if n_labels != n_images {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }

    let mut pixels = vec![0u8; n_images * height * width];
    read_exact_or(&mut *r, &mut pixels, "image pixels", images)?;
    let mut label_bytes = vec![0u8; n_labels];
    read_exact_or(&mut *l, &mut label_bytes, "labels", labels)?;
    if let Some(index) = label_bytes.iter().position(|&v| v as usize >= N_CLASSES) {
        return Err(DataError::Label {
            index,
            value: label_bytes[index],
        });
    }
    Ok(Dataset {
        name: name.to_string(),
        width,
        height,
        images: pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        labels: label_bytes,
    })
}

/// Writes an uncompressed IDX pair from 8-bit pixels.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    width: usize,
    height: usize,
    pixels: &[u8],
    labels: &[u8],
) -> Result<(), DataError> {
    let n = labels.len();
    if pixels.len() != n * width * height {
        return Err(DataError::CountMismatch {
            images: pixels.len() / (width * height).max(1),
            labels: n,
        });
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, n as u32, height as u32, width as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    std::fs::write(images_path, img).map_err(io_err(images_path))?;
    let mut lab = Vec::with_capacity(8 + n);
    for v in [LABEL_MAGIC, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    std::fs::write(labels_path, lab).map_err(io_err(labels_path))
}

/// Seeded uniform subsample without replacement, kept in original order.
pub fn split(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset, DataError> {
    if n == 0 || n > ds.len() {
        return Err(DataError::Split {
            requested: n,
            available: ds.len(),
        });
    }
    let mut picked = index::sample(&mut crate::rng::stream(seed, &[0x5b17]), ds.len(), n).into_vec();
    picked.sort_unstable();
    let mut images = Vec::with_capacity(n * ds.n_pixels());
    for &i in &picked {
        images.extend_from_slice(ds.image(i));
    }
    Ok(Dataset {
        name: ds.name.clone(),
        width: ds.width,
        height: ds.height,
        images,
        labels: picked.iter().map(|&i| ds.labels[i]).collect(),
    })
}

pub const MODEL_MAGIC: &[u8; 4] = b"QSNN";
pub const MODEL_VERSION: u32 = 1;
const MODEL_HEADER_LEN: usize = 4 + 4 + 3 * 4 + 8 * 8;

fn push_params(buf: &mut Vec<u8>, p: &CompartmentParams) {
    for v in [p.g_b, p.g_l, p.tau_l, p.r_max] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_f64s<'a>(buf: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes a network into the versioned model container.
pub fn encode_model(net: &Network) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    for d in [net.n_in(), net.n_hidden(), net.n_out()] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    push_params(&mut buf, &net.hidden.params);
    push_params(&mut buf, &net.output.params);
    push_f64s(&mut buf, net.hidden.weights.iter());
    push_f64s(&mut buf, net.hidden.bias.iter());
    push_f64s(&mut buf, net.output.weights.iter());
    push_f64s(&mut buf, net.output.bias.iter());
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out = self.bytes[self.pos..self.pos + N].try_into().expect("length checked");
        self.pos += N;
        out
    }
    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
    fn params(&mut self) -> CompartmentParams {
        CompartmentParams {
            g_b: self.f64(),
            g_l: self.f64(),
            tau_l: self.f64(),
            r_max: self.f64(),
        }
    }
    fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Network, DataError> {
    if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
        return Err(DataError::ModelCorrupt("missing QSNN signature".into()));
    }
    let mut c = Cursor { bytes, pos: 4 };
    let version = c.u32();
    if version != MODEL_VERSION {
        return Err(DataError::ModelVersion {
            found: version,
            supported: MODEL_VERSION,
        });
    }
    if bytes.len() < MODEL_HEADER_LEN {
        return Err(DataError::ModelCorrupt(format!(
            "header is {} bytes, expected {MODEL_HEADER_LEN}",
            bytes.len()
        )));
    }
    let (n_in, n_hidden, n_out) = (c.u32() as usize, c.u32() as usize, c.u32() as usize);
    if n_in == 0 || n_hidden == 0 || n_out == 0 {
        return Err(DataError::ModelCorrupt(format!(
            "empty layer in a {n_in}-{n_hidden}-{n_out} network"
        )));
    }
    let expected = n_hidden
        .checked_mul(n_in + 1)
        .zip(n_out.checked_mul(n_hidden + 1))
        .and_then(|(h, o)| h.checked_add(o))
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(MODEL_HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(DataError::ModelCorrupt(format!(
            "{} bytes do not fit a {n_in}-{n_hidden}-{n_out} network",
            bytes.len()
        )));
    }
    if bytes[MODEL_HEADER_LEN - 64..]
        .chunks_exact(8)
        .any(|b| !f64::from_le_bytes(b.try_into().expect("8 bytes")).is_finite())
    {
        return Err(DataError::ModelCorrupt("non-finite parameter".into()));
    }
    let hidden_params = c.params();
    let output_params = c.params();
    let layer = |c: &mut Cursor, n_in: usize, n_out: usize, params| -> Result<CompartmentLayer, DataError> {
        let weights =
            Array2::from_shape_vec((n_out, n_in), c.vec(n_in * n_out)).map_err(|e| DataError::ModelCorrupt(e.to_string()))?;
        let bias = Array1::from(c.vec(n_out));
        Ok(CompartmentLayer { weights, bias, params })
    };
    let hidden = layer(&mut c, n_in, n_hidden, hidden_params)?;
    let output = layer(&mut c, n_hidden, n_out, output_params)?;
    Ok(Network { hidden, output })
}

pub fn save_model(net: &Network, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, encode_model(net)).map_err(io_err(path))
}

pub fn load_model(path: &Path) -> Result<Network, DataError> {
    decode_model(&std::fs::read(path).map_err(io_err(path))?)
}

/// One accuracy measurement; a row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub model: String,
    pub noise_kind: String,
    pub noise_param: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultsFormat {
    Csv,
    Json,
}

impl ResultsFormat {
    /// `.json` selects JSON; anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ResultsFormat::Json,
            _ => ResultsFormat::Csv,
        }
    }
}

/// Stable sort by `(noise_kind, noise_param)`.
pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| a.noise_kind.cmp(&b.noise_kind).then(a.noise_param.total_cmp(&b.noise_param)));
}

pub fn write_results(records: &[RunRecord], path: &Path, format: ResultsFormat) -> Result<(), DataError> {
    if records.is_empty() {
        return Err(DataError::NoRecords);
    }
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    match format {
        ResultsFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut out);
            for r in &sorted {
                w.serialize(r).map_err(|e| DataError::Results(e.to_string()))?;
            }
            w.flush().map_err(io_err(path))?;
        }
        ResultsFormat::Json => {
            serde_json::to_writer_pretty(&mut out, &sorted).map_err(|e| DataError::Results(e.to_string()))?;
            out.write_all(b"\n").map_err(io_err(path))?;
        }
    }
    out.flush().map_err(io_err(path))
}

pub fn read_results(path: &Path, format: ResultsFormat) -> Result<Vec<RunRecord>, DataError> {
    let file = BufReader::new(File::open(path).map_err(io_err(path))?);
    let records: Vec<RunRecord> = match format {
        ResultsFormat::Csv => csv::Reader::from_reader(file)
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| DataError::Results(e.to_string()))?,
        ResultsFormat::Json => serde_json::from_reader(file).map_err(|e| DataError::Results(e.to_string()))?,
    };
    if let Some(r) = records.iter().find(|r| !(0.0..=1.0).contains(&r.accuracy)) {
        return Err(DataError::Results(format!("accuracy {} outside [0, 1]", r.accuracy)));
    }
    Ok(records)
}
