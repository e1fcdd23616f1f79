//! Photo and synthetic-frame corpora mixed into a shuffled, resized stream.

mod procedural;

pub use procedural::{
    procedural_game_frame, procedural_photo, procedural_style, write_procedural_corpus,
};

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::imaging::{ColourSpace, ImageTensor};
use crate::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadMode {
    /// Any undecodable file aborts ingestion.
    #[default]
    Strict,
    /// Undecodable files are skipped and listed in the manifest.
    Lenient,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Photo,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub photo_dir: PathBuf,
    /// `None` trains on photos only.
    pub synthetic_dir: Option<PathBuf>,
    /// `(height, width)` every item is resized to.
    pub resize_to: (usize, usize),
    pub shuffle_seed: u64,
    pub mode: LoadMode,
    /// Times each photo appears per epoch.
    pub photo_repeat: usize,
    /// Times each synthetic frame appears per epoch.
    pub synthetic_repeat: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            photo_dir: PathBuf::from("data/photos"),
            synthetic_dir: Some(PathBuf::from("data/synthetic")),
            resize_to: (360, 360),
            shuffle_seed: 0,
            mode: LoadMode::Strict,
            photo_repeat: 1,
            synthetic_repeat: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub source: Source,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub resize_to: (usize, usize),
    pub photo_count: usize,
    pub synthetic_count: usize,
    /// SHA-256 over the sorted per-file digests of each source.
    pub photo_sha256: String,
    pub synthetic_sha256: String,
    pub skipped: Vec<(PathBuf, String)>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(Error::io(path))
    }
}

/// Decoded, resized items plus their epoch ordering.
#[derive(Clone, Debug)]
pub struct Dataset {
    items: Vec<(Source, ImageTensor)>,
    /// Indices into `items`, repeated per the mixing config.
    schedule: Vec<usize>,
    seed: u64,
    manifest: DatasetManifest,
}

/// Image files under `dir`, recursively, in sorted order.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Ingestion {
            bad: vec![(dir.to_path_buf(), "not a readable directory".into())],
        });
    }
    let mut out = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Ingestion {
            bad: vec![(e.path().unwrap_or(dir).to_path_buf(), e.to_string())],
        })?;
        let is_image = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if entry.file_type().is_file() && is_image {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

fn digest_all<'a>(digests: impl Iterator<Item = &'a str>) -> String {
    let mut sorted: Vec<&str> = digests.collect();
    sorted.sort_unstable();
    let mut h = Sha256::new();
    for d in sorted {
        h.update(d.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Decodes both corpora. Every file is read and hashed up front so corrupt
/// inputs surface before training starts.
pub fn build_mixed_dataset(spec: &CorpusSpec) -> Result<Dataset> {
    if spec.resize_to.0 == 0 || spec.resize_to.1 == 0 {
        return Err(Error::config("resize_to must be positive"));
    }
    let mut sources = vec![(Source::Photo, spec.photo_dir.clone())];
    if let Some(dir) = &spec.synthetic_dir {
        sources.push((Source::Synthetic, dir.clone()));
    }
    let mut bad = Vec::new();
    let mut decoded = Vec::new();
    let mut entries = Vec::new();
    for (source, dir) in &sources {
        let files = list_images(dir)?;
        if files.is_empty() {
            return Err(Error::Ingestion {
                bad: vec![(dir.clone(), "no png or jpeg images".into())],
            });
        }
        for path in files {
            let bytes = match std::fs::read(&path) {
                Ok(b) => b,
                Err(e) => {
                    bad.push((path, e.to_string()));
                    continue;
                }
            };
            match image::load_from_memory(&bytes) {
                Ok(img) => {
                    let img = ImageTensor::from_rgb8(&img.to_rgb8())
                        .resize_bilinear(spec.resize_to.0, spec.resize_to.1)?;
                    entries.push(ManifestEntry {
                        path,
                        source: *source,
                        sha256: hex::encode(Sha256::digest(&bytes)),
                    });
                    decoded.push((*source, img));
                }
                Err(e) => bad.push((path, e.to_string())),
            }
        }
    }
    if !bad.is_empty() && spec.mode == LoadMode::Strict {
        return Err(Error::Ingestion { bad });
    }
    for (source, dir) in &sources {
        if !decoded.iter().any(|(s, _)| s == source) {
            return Err(Error::Ingestion {
                bad: vec![(dir.clone(), "no decodable images".into())],
            });
        }
    }
    let manifest_for = |s: Source| entries.iter().filter(move |e| e.source == s);
    let manifest = DatasetManifest {
        seed: spec.shuffle_seed,
        resize_to: spec.resize_to,
        photo_count: manifest_for(Source::Photo).count(),
        synthetic_count: manifest_for(Source::Synthetic).count(),
        photo_sha256: digest_all(manifest_for(Source::Photo).map(|e| e.sha256.as_str())),
        synthetic_sha256: digest_all(manifest_for(Source::Synthetic).map(|e| e.sha256.as_str())),
        skipped: bad,
        entries,
    };
    Dataset::assemble(decoded, manifest, spec.photo_repeat, spec.synthetic_repeat)
}

impl Dataset {
    /// Builds a dataset from already decoded images (resized to `resize_to`).
    pub fn from_images(
        photos: Vec<ImageTensor>,
        synthetic: Vec<ImageTensor>,
        resize_to: (usize, usize),
        seed: u64,
    ) -> Result<Self> {
        let mut items = Vec::new();
        let mut entries = Vec::new();
        for (source, imgs) in [(Source::Photo, photos), (Source::Synthetic, synthetic)] {
            for (i, img) in imgs.into_iter().enumerate() {
                if img.colour_space() != ColourSpace::Rgb {
                    return Err(Error::domain("dataset items must be rgb"));
                }
                let img = img.resize_bilinear(resize_to.0, resize_to.1)?;
                let mut h = Sha256::new();
                for v in img.data() {
                    h.update(v.to_le_bytes());
                }
                entries.push(ManifestEntry {
                    path: PathBuf::from(format!("<memory:{source:?}:{i}>")),
                    source,
                    sha256: hex::encode(h.finalize()),
                });
                items.push((source, img));
            }
        }
        if items.is_empty() {
            return Err(Error::Ingestion {
                bad: vec![(PathBuf::from("<memory>"), "no images".into())],
            });
        }
        let count = |s: Source| {
            entries
                .iter()
                .filter(|e: &&ManifestEntry| e.source == s)
                .count()
        };
        let digest = |s: Source| {
            digest_all(
                entries
                    .iter()
                    .filter(|e| e.source == s)
                    .map(|e| e.sha256.as_str()),
            )
        };
        let manifest = DatasetManifest {
            seed,
            resize_to,
            photo_count: count(Source::Photo),
            synthetic_count: count(Source::Synthetic),
            photo_sha256: digest(Source::Photo),
            synthetic_sha256: digest(Source::Synthetic),
            skipped: Vec::new(),
            entries,
        };
        Self::assemble(items, manifest, 1, 1)
    }

    fn assemble(
        items: Vec<(Source, ImageTensor)>,
        manifest: DatasetManifest,
        photo_repeat: usize,
        synthetic_repeat: usize,
    ) -> Result<Self> {
        let schedule: Vec<usize> = items
            .iter()
            .enumerate()
            .flat_map(|(i, (s, _))| {
                let r = match s {
                    Source::Photo => photo_repeat,
                    Source::Synthetic => synthetic_repeat,
                };
                std::iter::repeat_n(i, r)
            })
            .collect();
        if schedule.is_empty() {
            return Err(Error::config("mixing repeats leave the dataset empty"));
        }
        Ok(Self {
            items,
            schedule,
            seed: manifest.seed,
            manifest,
        })
    }

    /// Items per epoch.
    pub fn len(&self) -> usize {
        self.schedule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedule.is_empty()
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn resize_to(&self) -> (usize, usize) {
        self.manifest.resize_to
    }

    pub fn source_of(&self, item: usize) -> Source {
        self.items[item].0
    }

    pub fn item(&self, index: usize) -> &ImageTensor {
        &self.items[index].1
    }

    /// Item indices in the order epoch `epoch` visits them.
    pub fn epoch_order(&self, epoch: u64) -> Vec<usize> {
        let mut order = self.schedule.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
        order
    }

    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        self.len().div_ceil(batch_size.max(1))
    }

    /// Batch `index` of epoch `epoch`; the last batch may be short.
    pub fn batch_at(
        &self,
        epoch: u64,
        index: usize,
        batch_size: usize,
    ) -> Result<Vec<ImageTensor>> {
        if batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        let order = self.epoch_order(epoch);
        let start = index * batch_size;
        if start >= order.len() {
            return Err(Error::domain(format!(
                "batch {index} is past the end of the epoch"
            )));
        }
        Ok(order[start..(start + batch_size).min(order.len())]
            .iter()
            .map(|&i| self.items[i].1.clone())
            .collect())
    }

    pub fn epoch(&self, epoch: u64) -> EpochIter<'_> {
        EpochIter {
            dataset: self,
            order: self.epoch_order(epoch),
            pos: 0,
        }
    }
}

/// Sequential batches of one epoch.
pub struct EpochIter<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    pos: usize,
}

impl EpochIter<'_> {
    /// `Ok(None)` marks the end of the epoch.
    pub fn next_batch(&mut self, batch_size: usize) -> Result<Option<Vec<ImageTensor>>> {
        if batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.pos >= self.order.len() {
            return Ok(None);
        }
        let end = (self.pos + batch_size).min(self.order.len());
        let batch = self.order[self.pos..end]
            .iter()
            .map(|&i| self.dataset.items[i].1.clone())
            .collect();
        self.pos = end;
        Ok(Some(batch))
    }

    /// Item indices not yet delivered.
    pub fn remaining(&self) -> &[usize] {
        &self.order[self.pos..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(v: f64) -> ImageTensor {
        ImageTensor::filled(3, 6, 8, v, ColourSpace::Rgb).unwrap()
    }

    fn toy(n_photo: usize, n_syn: usize, seed: u64) -> Dataset {
        let photos = (0..n_photo).map(|i| solid(i as f64 / 20.0)).collect();
        let syn = (0..n_syn).map(|i| solid(0.5 + i as f64 / 20.0)).collect();
        Dataset::from_images(photos, syn, (4, 4), seed).unwrap()
    }

    #[test]
    fn counts_and_batches() {
        let d = toy(10, 5, 1);
        assert_eq!(d.len(), 15);
        assert_eq!(
            (d.manifest().photo_count, d.manifest().synthetic_count),
            (10, 5)
        );
        let small = toy(3, 2, 1);
        let mut it = small.epoch(0);
        let sizes: Vec<usize> =
            std::iter::from_fn(|| it.next_batch(2).unwrap().map(|b| b.len())).collect();
        assert_eq!(sizes, [2, 2, 1]);
    }

    #[test]
    fn order_is_seeded() {
        assert_eq!(toy(10, 5, 3).epoch_order(0), toy(10, 5, 3).epoch_order(0));
        assert_ne!(toy(10, 5, 3).epoch_order(0), toy(10, 5, 4).epoch_order(0));
        assert_ne!(toy(10, 5, 3).epoch_order(0), toy(10, 5, 3).epoch_order(1));
    }

    #[test]
    fn items_are_resized() {
        let d = toy(2, 1, 0);
        let b = d.batch_at(0, 0, 2).unwrap();
        assert!(b.iter().all(|i| i.dims() == (3, 4, 4)));
    }
}
