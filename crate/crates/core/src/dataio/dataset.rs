//! Benchmark-style `root/{images,masks,splits.txt}` datasets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;

use super::pnm;
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::MaskImage;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Dataset(format!("unknown split `{s}` (train, val or test)"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug)]
pub struct SamplePair {
    pub id: String,
    pub image: Tensor,
    pub mask: MaskImage,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    /// Matched ids in lexicographic order with their split.
    pub entries: Vec<(String, Split)>,
    /// `(height, width)` of the first image.
    pub image_size: (usize, usize),
    image_ext: BTreeMap<String, &'static str>,
}

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, s)| *s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|(_, s)| *s == split).count()
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        let ext = self.image_ext.get(id).copied().unwrap_or("pgm");
        self.root.join("images").join(format!("{id}.{ext}"))
    }

    pub fn mask_path(&self, id: &str) -> PathBuf {
        self.root.join("masks").join(format!("{id}.pgm"))
    }

    pub fn load_sample(&self, id: &str) -> Result<SamplePair> {
        let image = pnm::load_image(self.image_path(id))?;
        let mask = pnm::load_mask(self.mask_path(id))?;
        let (_, h, w) = image.chw()?;
        if (mask.height(), mask.width()) != (h, w) {
            return Err(Error::Dataset(format!(
                "`{id}`: image is {h}×{w} but mask is {}×{}",
                mask.height(),
                mask.width()
            )));
        }
        Ok(SamplePair {
            id: id.to_string(),
            image,
            mask,
        })
    }

    /// Loads every sample of `split`, in manifest order.
    pub fn load_split(&self, split: Split) -> Result<Vec<SamplePair>> {
        let ids = self.ids(split);
        exec::map(&ids, |id| self.load_sample(id)).into_iter().collect()
    }
}

fn stems(dir: &Path, exts: &[&'static str]) -> Result<BTreeMap<String, &'static str>> {
    let mut out = BTreeMap::new();
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let (Some(stem), Some(ext)) = (path.file_stem(), path.extension()) else {
            continue;
        };
        let Some(&ext) = exts.iter().find(|&&e| ext == e) else {
            continue;
        };
        if let Some(stem) = stem.to_str() {
            out.entry(stem.to_string()).or_insert(ext);
        }
    }
    Ok(out)
}

/// Split sizes used when no `splits.txt` is present: train, val, test in
/// id order, with val and test each `max(1, round(n/10))` once `n ≥ 3`.
pub fn default_split_sizes(n: usize) -> (usize, usize, usize) {
    if n < 3 {
        return (n, 0, 0);
    }
    let tenth = ((n as f64 * 0.1).round() as usize).max(1);
    (n - 2 * tenth, tenth, tenth)
}

pub fn scan_dataset(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref().to_path_buf();
    let images = stems(&root.join("images"), &["pgm", "ppm"])?;
    let masks = stems(&root.join("masks"), &["pgm"])?;
    for id in images.keys().filter(|id| !masks.contains_key(*id)) {
        warn!("{}: image `{id}` has no mask, skipping", root.display());
    }
    for id in masks.keys().filter(|id| !images.contains_key(*id)) {
        warn!("{}: mask `{id}` has no image, skipping", root.display());
    }
    let matched: Vec<String> = images.keys().filter(|id| masks.contains_key(*id)).cloned().collect();
    if matched.is_empty() {
        return Err(Error::Dataset(format!(
            "{}: no id has both an image and a mask",
            root.display()
        )));
    }

    let splits_path = root.join("splits.txt");
    let entries = if splits_path.exists() {
        let text = fs::read_to_string(&splits_path).map_err(|e| Error::io(&splits_path, e))?;
        let assigned = parse_splits(&text, &splits_path)?;
        let matched_set: BTreeSet<&String> = matched.iter().collect();
        for id in assigned.keys().filter(|id| !matched_set.contains(id)) {
            warn!("{}: `{id}` has no image/mask pair, ignoring", splits_path.display());
        }
        matched
            .iter()
            .map(|id| {
                assigned
                    .get(id)
                    .map(|&s| (id.clone(), s))
                    .ok_or_else(|| Error::Dataset(format!("{}: `{id}` is not assigned a split", splits_path.display())))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        let (ntr, nva, _) = default_split_sizes(matched.len());
        matched
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let s = if i < ntr {
                    Split::Train
                } else if i < ntr + nva {
                    Split::Val
                } else {
                    Split::Test
                };
                (id.clone(), s)
            })
            .collect()
    };

    let image_ext: BTreeMap<String, &'static str> = matched.iter().map(|id| (id.clone(), images[id])).collect();
    let first = &matched[0];
    let image_size = pnm::peek_size(root.join("images").join(format!("{first}.{}", images[first])))?;
    Ok(DatasetManifest {
        root,
        entries,
        image_size,
        image_ext,
    })
}

fn parse_splits(text: &str, path: &Path) -> Result<BTreeMap<String, Split>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |d: String| Error::Parse {
            path: path.to_path_buf(),
            detail: format!("line {}: {d}", n + 1),
        };
        let mut parts = line.split_whitespace();
        let (Some(id), Some(split), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad(format!("expected `<id> <split>`, got `{line}`")));
        };
        let split: Split = split.parse().map_err(|e: Error| bad(e.to_string()))?;
        if out.insert(id.to_string(), split).is_some() {
            return Err(bad(format!("`{id}` assigned twice")));
        }
    }
    Ok(out)
}

pub fn write_splits(root: &Path, entries: &[(String, Split)]) -> Result<()> {
    let path = root.join("splits.txt");
    let text: String = entries.iter().map(|(id, s)| format!("{id} {s}\n")).collect();
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
