//! Optional dataset download from pinned npm package tarballs.
//!
//! MNIST ships as raw IDX files inside `mnist-data`. Fashion-MNIST ships as
//! one JSON file per class inside `fashion-mnist`; each class lists its 1000
//! test images first, then its 6000 training images, and is converted to IDX
//! with the classes interleaved.

use crate::error::CliError;
use flate2::read::GzDecoder;
use qsnn_core::dataio::write_idx;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::io::Read;
use std::path::{Path, PathBuf};
use ureq::tls::{RootCerts, TlsConfig};

pub struct Source {
    pub dataset: &'static str,
    pub url: &'static str,
    pub sha256: &'static str,
}

pub const SOURCES: [Source; 2] = [
    Source {
        dataset: "mnist",
        url: "https://registry.npmjs.org/mnist-data/-/mnist-data-1.2.6.tgz",
        sha256: "8f87f2d0d9133e6c9f7012d6d26bb05409e7e870a1de21d1a600b8d400cc07ed",
    },
    Source {
        dataset: "fashion",
        url: "https://registry.npmjs.org/fashion-mnist/-/fashion-mnist-1.1.0.tgz",
        sha256: "7fe48b6f9470efb6e15354b1b2005d60a544177bd24cf4b5da500e3e83d1f396",
    },
];

const IDX_NAMES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];
const MAX_DOWNLOAD: u64 = 256 * 1024 * 1024;

pub fn source(dataset: &str) -> Result<&'static Source, CliError> {
    SOURCES
        .iter()
        .find(|s| s.dataset == dataset)
        .ok_or_else(|| CliError::Config(format!("no download source for dataset {dataset:?}")))
}

/// True when all four IDX files (plain or gzipped) are present.
pub fn is_installed(data_dir: &Path, dataset: &str) -> bool {
    IDX_NAMES.iter().all(|n| {
        let dir = data_dir.join(dataset);
        dir.join(n).exists() || dir.join(format!("{n}.gz")).exists()
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn verify(bytes: &[u8], expected: &str) -> Result<(), CliError> {
    let got = sha256_hex(bytes);
    if got != expected {
        return Err(CliError::Data(format!("checksum mismatch: expected {expected}, got {got}")));
    }
    Ok(())
}

pub fn download(url: &str) -> Result<Vec<u8>, CliError> {
    // System roots, so installed corporate or proxy CAs are honoured.
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .tls_config(TlsConfig::builder().root_certs(RootCerts::PlatformVerifier).build())
        .build()
        .into();
    let mut resp = agent
        .get(url)
        .call()
        .map_err(|e| CliError::Data(format!("download {url}: {e}")))?;
    resp.body_mut()
        .with_config()
        .limit(MAX_DOWNLOAD)
        .read_to_vec()
        .map_err(|e| CliError::Data(format!("download {url}: {e}")))
}

/// Downloads (or reads `local`), verifies, and installs one dataset.
pub fn fetch(dataset: &str, data_dir: &Path, local: Option<&Path>, force: bool) -> Result<Vec<PathBuf>, CliError> {
    let src = source(dataset)?;
    if !force && is_installed(data_dir, dataset) {
        return Ok(Vec::new());
    }
    let bytes = match local {
        Some(p) => std::fs::read(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        None => download(src.url)?,
    };
    verify(&bytes, src.sha256)?;
    install(dataset, &bytes, data_dir, &FashionLayout::default())
}

fn tar_entries(tgz: &[u8], mut keep: impl FnMut(&str) -> bool) -> Result<Vec<(String, Vec<u8>)>, CliError> {
    let bad = |e: std::io::Error| CliError::Data(format!("package archive: {e}"));
    let mut archive = tar::Archive::new(GzDecoder::new(tgz));
    let mut out = Vec::new();
    for entry in archive.entries().map_err(bad)? {
        let mut entry = entry.map_err(bad)?;
        let name = entry.path().map_err(bad)?.to_string_lossy().into_owned();
        if keep(&name) {
            let mut buf = Vec::new();
            entry.read_to_end(&mut buf).map_err(bad)?;
            out.push((name, buf));
        }
    }
    Ok(out)
}

/// Per-class image counts in the Fashion-MNIST JSON files.
#[derive(Debug, Clone, Copy)]
pub struct FashionLayout {
    pub test_per_class: usize,
    pub train_per_class: usize,
}

impl Default for FashionLayout {
    fn default() -> Self {
        Self {
            test_per_class: 1000,
            train_per_class: 6000,
        }
    }
}

#[derive(Deserialize)]
struct ClassFile {
    data: Vec<Vec<u8>>,
}

pub fn install(dataset: &str, tgz: &[u8], data_dir: &Path, layout: &FashionLayout) -> Result<Vec<PathBuf>, CliError> {
    let dir = data_dir.join(dataset);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let write = |name: &str, bytes: &[u8]| -> Result<PathBuf, CliError> {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        Ok(p)
    };
    match dataset {
        "mnist" => {
            let files = tar_entries(tgz, |n| IDX_NAMES.iter().any(|idx| n == format!("package/data/{idx}")))?;
            if files.len() != IDX_NAMES.len() {
                return Err(CliError::Data(format!("archive holds {} of the 4 IDX files", files.len())));
            }
            files
                .iter()
                .map(|(name, bytes)| write(name.rsplit('/').next().expect("path has a file name"), bytes))
                .collect()
        }
        "fashion" => {
            let files = tar_entries(tgz, |n| n.starts_with("package/src/clothes/") && n.ends_with(".json"))?;
            let mut classes: Vec<Vec<Vec<u8>>> = vec![Vec::new(); 10];
            for (name, bytes) in files {
                let stem = name.trim_start_matches("package/src/clothes/").trim_end_matches(".json");
                let c: usize = stem
                    .parse()
                    .ok()
                    .filter(|&c| c < 10)
                    .ok_or_else(|| CliError::Data(format!("unexpected class file {name}")))?;
                let parsed: ClassFile = serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{name}: {e}")))?;
                classes[c] = parsed.data;
            }
            let (train, test) = fashion_split(&classes, layout)?;
            let (trp, trl) = (dir.join(IDX_NAMES[0]), dir.join(IDX_NAMES[1]));
            write_idx(&trp, &trl, 28, 28, &train.0, &train.1).map_err(|e| CliError::Io(e.to_string()))?;
            let (tep, tel) = (dir.join(IDX_NAMES[2]), dir.join(IDX_NAMES[3]));
            write_idx(&tep, &tel, 28, 28, &test.0, &test.1).map_err(|e| CliError::Io(e.to_string()))?;
            Ok(vec![trp, trl, tep, tel])
        }
        other => Err(CliError::Config(format!("no download source for dataset {other:?}"))),
    }
}

type Split = (Vec<u8>, Vec<u8>);

/// Splits per-class image lists into interleaved train and test sets.
/// Empty entries separate the blocks in the source files and are dropped.
pub fn fashion_split(classes: &[Vec<Vec<u8>>], layout: &FashionLayout) -> Result<(Split, Split), CliError> {
    let mut blocks = Vec::with_capacity(classes.len());
    for (c, images) in classes.iter().enumerate() {
        let kept: Vec<&Vec<u8>> = images.iter().filter(|im| !im.is_empty()).collect();
        if let Some(bad) = kept.iter().find(|im| im.len() != 784) {
            return Err(CliError::Data(format!("class {c}: image with {} pixels", bad.len())));
        }
        if kept.len() != layout.test_per_class + layout.train_per_class {
            return Err(CliError::Data(format!(
                "class {c}: {} images, expected {}",
                kept.len(),
                layout.test_per_class + layout.train_per_class
            )));
        }
        blocks.push(kept);
    }
    let interleave = |range: std::ops::Range<usize>| -> Split {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for k in range {
            for (c, b) in blocks.iter().enumerate() {
                pixels.extend_from_slice(b[k]);
                labels.push(c as u8);
            }
        }
        (pixels, labels)
    };
    let n_test = layout.test_per_class;
    Ok((interleave(n_test..n_test + layout.train_per_class), interleave(0..n_test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::write::GzEncoder;
    use flate2::Compression;
    use qsnn_core::experiment::{load_part, Part};

    fn tgz(files: &[(&str, Vec<u8>)]) -> Vec<u8> {
        let mut builder = tar::Builder::new(GzEncoder::new(Vec::new(), Compression::fast()));
        for (name, data) in files {
            let mut header = tar::Header::new_gnu();
            header.set_size(data.len() as u64);
            header.set_mode(0o644);
            header.set_cksum();
            builder.append_data(&mut header, name, &data[..]).unwrap();
        }
        builder.into_inner().unwrap().finish().unwrap()
    }

    #[test]
    fn checksums() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert!(verify(b"abc", SOURCES[0].sha256).is_err());
    }

    #[test]
    fn installs_fashion_from_class_json() {
        let layout = FashionLayout {
            test_per_class: 2,
            train_per_class: 3,
        };
        let files: Vec<(String, Vec<u8>)> = (0..10)
            .map(|c| {
                let mut rows: Vec<String> = (0..5)
                    .map(|k| format!("[{}]", vec![(c * 10 + k).to_string(); 784].join(",")))
                    .collect();
                if c == 0 {
                    rows.insert(2, "[]".into());
                }
                (
                    format!("package/src/clothes/{c}.json"),
                    format!("{{\"data\":[{}]}}", rows.join(",")).into_bytes(),
                )
            })
            .collect();
        let borrowed: Vec<(&str, Vec<u8>)> = files.iter().map(|(n, b)| (n.as_str(), b.clone())).collect();
        let dir = tempfile::tempdir().unwrap();
        install("fashion", &tgz(&borrowed), dir.path(), &layout).unwrap();
        let test = load_part(dir.path(), "fashion", Part::Test).unwrap();
        let train = load_part(dir.path(), "fashion", Part::Train).unwrap();
        assert_eq!((test.len(), train.len()), (20, 30));
        assert_eq!(&test.labels[..12], &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 0, 1]);
        // First training image of class 3 is its third entry.
        assert_eq!(train.image(3)[0], 32.0 / 255.0);
        assert_eq!(test.image(10)[0], 1.0 / 255.0);
        assert!(is_installed(dir.path(), "fashion"));
    }

    #[test]
    fn installs_mnist_idx_files() {
        let dir = tempfile::tempdir().unwrap();
        let staging = tempfile::tempdir().unwrap();
        let (a, b) = (staging.path().join("i"), staging.path().join("l"));
        write_idx(&a, &b, 28, 28, &vec![7u8; 784 * 3], &[1, 2, 3]).unwrap();
        let (img, lab) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let archive = tgz(&[
            ("package/index.js", b"//".to_vec()),
            ("package/data/train-images-idx3-ubyte", img.clone()),
            ("package/data/train-labels-idx1-ubyte", lab.clone()),
            ("package/data/t10k-images-idx3-ubyte", img),
            ("package/data/t10k-labels-idx1-ubyte", lab),
        ]);
        let written = install("mnist", &archive, dir.path(), &FashionLayout::default()).unwrap();
        assert_eq!(written.len(), 4);
        assert_eq!(load_part(dir.path(), "mnist", Part::Train).unwrap().labels, vec![1, 2, 3]);

        let partial = tgz(&[("package/data/train-images-idx3-ubyte", vec![0; 4])]);
        assert!(matches!(
            install("mnist", &partial, dir.path(), &FashionLayout::default()),
            Err(CliError::Data(_))
        ));
    }

    #[test]
    fn fashion_layout_is_checked() {
        let classes = vec![vec![vec![0u8; 784]; 4]; 10];
        let layout = FashionLayout {
            test_per_class: 2,
            train_per_class: 3,
        };
        assert!(fashion_split(&classes, &layout).is_err());
    }
}
