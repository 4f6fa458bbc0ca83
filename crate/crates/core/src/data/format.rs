//! Bundle directory layout: `manifest.json` plus one CSV per domain with
//! header `y,f0,...,f{D-1}`. Floats use the shortest decimal form that
//! round-trips, so save/load/save is byte-stable.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DomainDataset, MultiDomainBundle};
use crate::autograd::Tensor;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub domains: Vec<ManifestDomain>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDomain {
    pub id: usize,
    pub name: String,
    pub file: String,
    pub num_samples: usize,
    pub sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn domain_csv(d: &DomainDataset) -> String {
    let dim = d.features.cols();
    let mut out = String::from("y");
    for j in 0..dim {
        write!(out, ",f{j}").unwrap();
    }
    out.push('\n');
    for (i, &y) in d.labels.iter().enumerate() {
        write!(out, "{y}").unwrap();
        for v in d.features.row(i) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Writes `bundle` under `dir`, creating the directory if needed.
pub fn save_bundle(bundle: &MultiDomainBundle, dir: &Path) -> Result<Manifest> {
    bundle.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut domains = Vec::with_capacity(bundle.domains.len());
    for d in &bundle.domains {
        let file = format!("domain_{}.csv", d.domain_id);
        let body = domain_csv(d);
        let path = dir.join(&file);
        fs::write(&path, body.as_bytes()).map_err(|e| Error::io(&path, e))?;
        domains.push(ManifestDomain {
            id: d.domain_id,
            name: d.name.clone(),
            file,
            num_samples: d.len(),
            sha256: sha256_hex(body.as_bytes()),
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        feature_dim: bundle.feature_dim,
        num_classes: bundle.num_classes,
        domains,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn parse_domain(entry: &ManifestDomain, text: &str, feature_dim: usize, num_classes: usize) -> Result<DomainDataset> {
    let domain = entry.id;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let mut expected = String::from("y");
    for j in 0..feature_dim {
        write!(expected, ",f{j}").unwrap();
    }
    if header != expected {
        let cols = header.split(',').count();
        return Err(Error::Dimension {
            domain,
            detail: format!("header has {cols} columns, expected {} (y plus {feature_dim} features)", feature_dim + 1),
        });
    }
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (row, line) in lines.enumerate() {
        let mut fields = line.split(',');
        let y_text = fields.next().unwrap_or("");
        let label: i64 = y_text.parse().map_err(|_| Error::Parse {
            domain,
            row,
            detail: format!("label {y_text:?} is not an integer"),
        })?;
        if label < 0 || label as usize >= num_classes {
            return Err(Error::LabelRange { domain, row, label, num_classes });
        }
        let before = data.len();
        for f in fields {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                domain,
                row,
                detail: format!("feature {f:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { domain, row, detail: format!("non-finite feature {f}") });
            }
            data.push(v);
        }
        if data.len() - before != feature_dim {
            return Err(Error::Dimension {
                domain,
                detail: format!("row {row} has {} features, expected {feature_dim}", data.len() - before),
            });
        }
        labels.push(label as usize);
    }
    if labels.len() != entry.num_samples {
        return Err(Error::Dimension {
            domain,
            detail: format!("{} rows, manifest declares {}", labels.len(), entry.num_samples),
        });
    }
    if labels.is_empty() {
        return Err(Error::Dimension { domain, detail: "no samples".into() });
    }
    Ok(DomainDataset {
        domain_id: domain,
        name: entry.name.clone(),
        features: Tensor::matrix(labels.len(), feature_dim, data)?,
        labels,
    })
}

/// Reads and validates the bundle under `dir`, verifying every checksum.
pub fn load_bundle(dir: &Path) -> Result<MultiDomainBundle> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::InvalidInput(format!("unsupported bundle format_version {}", manifest.format_version)));
    }
    let mut domains = Vec::with_capacity(manifest.domains.len());
    for entry in &manifest.domains {
        let path = dir.join(&entry.file);
        if !path.is_file() {
            return Err(Error::MissingFile { domain: entry.id, path });
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let actual = sha256_hex(&bytes);
        if actual != entry.sha256 {
            return Err(Error::Checksum { domain: entry.id, expected: entry.sha256.clone(), actual });
        }
        let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
            domain: entry.id,
            row: 0,
            detail: "file is not UTF-8".into(),
        })?;
        domains.push(parse_domain(entry, &text, manifest.feature_dim, manifest.num_classes)?);
    }
    MultiDomainBundle::new(manifest.feature_dim, manifest.num_classes, domains)
}
