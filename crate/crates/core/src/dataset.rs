//! On-disk datasets.
//!
//! ```text
//! <root>/manifest.json
//! <root>/samples/<idx>.img.tvt     input image (C, H, W)
//! <root>/samples/<idx>.hm.tvt      ground-truth heatmap (1, H, W)
//! <root>/samples/<idx>.labels.csv  one `x_mm,y_mm,depth_mm` line per contact
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{ContactPoint, ContactSet, HeatmapGrid};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::format::{decode_tensor, encode_tensor, write_file};
use crate::par;
use crate::sim::{Sample, ScenarioKind, ScenarioSpec};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SAMPLES_DIR: &str = "samples";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub index: usize,
    pub seed: u64,
    pub kind: ScenarioKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub master_seed: u64,
    pub scenario: String,
    pub counts: BTreeMap<String, usize>,
    pub total: usize,
    pub config: RunConfig,
    pub samples: Vec<SampleEntry>,
}

impl Manifest {
    fn new(master_seed: u64, spec: &ScenarioSpec, config: &RunConfig, samples: &[Sample]) -> Self {
        let mut counts = BTreeMap::new();
        for s in samples {
            *counts.entry(s.kind.name().to_string()).or_insert(0) += 1;
        }
        Self {
            format_version: FORMAT_VERSION,
            master_seed,
            scenario: spec.to_spec_string(),
            counts,
            total: samples.len(),
            config: config.clone(),
            samples: samples
                .iter()
                .map(|s| SampleEntry {
                    index: s.index,
                    seed: s.seed,
                    kind: s.kind,
                    separation_mm: s.separation_mm,
                })
                .collect(),
        }
    }
}

/// A dataset held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Generates every sample of `spec` in memory.
    pub fn generate(master_seed: u64, spec: &ScenarioSpec, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let samples = config.simulator()?.generate(master_seed, spec)?;
        let manifest = Manifest::new(master_seed, spec, config, &samples);
        Ok(Self { manifest, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn of_kind(&self, kind: ScenarioKind) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.kind == kind).collect()
    }

    /// Writes the dataset under `root`, creating directories as needed.
    pub fn save(&self, root: &Path) -> Result<()> {
        let dir = root.join(SAMPLES_DIR);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        par::map_slice(&self.samples, |s| save_sample(&dir, s))
            .into_iter()
            .collect::<Result<Vec<()>>>()?;
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        write_file(&root.join(MANIFEST_FILE), manifest.as_bytes())
    }

    /// Reads a dataset written by [`Dataset::save`], or an externally produced
    /// one with the same layout.
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingInput(path.clone())
            } else {
                Error::io(&path, e)
            }
        })?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "dataset format version {} is not supported",
                manifest.format_version
            )));
        }
        if manifest.samples.len() != manifest.total {
            return Err(Error::Schema("manifest sample list does not match its total".into()));
        }
        let dir = root.join(SAMPLES_DIR);
        let mapping = manifest.config.grid;
        let samples = par::map_slice(&manifest.samples, |e| load_sample(&dir, e, mapping))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, samples })
    }
}

pub fn sample_stem(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:06}"))
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Shortest round-trip formatting, so labels re-encode bit-exactly.
pub fn labels_to_csv(contacts: &[ContactPoint]) -> String {
    contacts
        .iter()
        .map(|c| format!("{},{},{}\n", c.x_mm, c.y_mm, c.depth_mm))
        .collect()
}

pub fn labels_from_csv(text: &str) -> Result<ContactSet> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let v: Vec<f64> = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Schema(format!("bad label line {line:?}")))?;
            match v.as_slice() {
                &[x, y, d] => Ok(ContactPoint::new(x, y, d)),
                _ => Err(Error::Schema(format!("label line {line:?} needs 3 fields"))),
            }
        })
        .collect()
}

fn save_sample(dir: &Path, s: &Sample) -> Result<()> {
    let stem = sample_stem(dir, s.index);
    write_file(&with_suffix(&stem, ".img.tvt"), &encode_tensor(&s.image)?)?;
    write_file(&with_suffix(&stem, ".hm.tvt"), &encode_tensor(&s.heatmap.to_tensor())?)?;
    write_file(&with_suffix(&stem, ".labels.csv"), labels_to_csv(&s.contacts).as_bytes())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

fn load_sample(dir: &Path, e: &SampleEntry, mapping: crate::codec::GridMapping) -> Result<Sample> {
    let stem = sample_stem(dir, e.index);
    let tensor = |suffix: &str| {
        let p = with_suffix(&stem, suffix);
        decode_tensor(&read(&p)?).map_err(|source| Error::Format { path: p, source })
    };
    let image = tensor(".img.tvt")?;
    let heatmap = HeatmapGrid::from_tensor(&tensor(".hm.tvt")?, mapping)?;
    let labels_path = with_suffix(&stem, ".labels.csv");
    let text = String::from_utf8(read(&labels_path)?)
        .map_err(|_| Error::Schema(format!("{} is not UTF-8", labels_path.display())))?;
    let contacts = labels_from_csv(&text)?;
    Ok(Sample {
        index: e.index,
        seed: e.seed,
        kind: e.kind,
        separation_mm: e.separation_mm,
        image,
        contacts,
        heatmap,
    })
}
