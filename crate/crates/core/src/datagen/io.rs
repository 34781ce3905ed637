//! On-disk datasets: `<root>/<split>/<category>/<index>.img` plus a root
//! `manifest.jsonl` with one entry per sample.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DomainTag, SceneSample};
use crate::geometry::{Camera, Pose};
use crate::image::Image;
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

pub fn sample_id(split: &str, category: &str, index: usize) -> String {
    format!("{split}/{category}/{index:05}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub split: String,
    pub category: String,
    pub index: usize,
    /// Image path relative to the dataset root.
    pub file: String,
    pub pose: Pose,
    pub camera: Camera,
    pub texture_id: u64,
    pub background_id: u64,
    pub domain_tag: DomainTag,
    pub seed: u64,
}

impl ManifestEntry {
    pub fn of(split: &str, s: &SceneSample) -> Self {
        let id = sample_id(split, &s.category, s.index);
        ManifestEntry {
            file: format!("{id}.img"),
            id,
            split: split.to_owned(),
            category: s.category.clone(),
            index: s.index,
            pose: s.pose,
            camera: s.camera,
            texture_id: s.texture_id,
            background_id: s.background_id,
            domain_tag: s.domain_tag,
            seed: s.seed,
        }
    }
}

/// Writes every split's images and a single manifest. Refuses to touch an
/// existing dataset unless `force` is set, in which case it is replaced.
pub fn write_dataset(root: &Path, splits: &[(&str, &[SceneSample])], force: bool) -> Result<Vec<ManifestEntry>> {
    let manifest_path = root.join(MANIFEST_FILE);
    if manifest_path.exists() {
        if !force {
            return Err(Error::OutputExists(root.to_path_buf()));
        }
        for (split, _) in splits {
            let dir = root.join(split);
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            }
        }
    }
    let mut entries = Vec::new();
    for (split, samples) in splits {
        for s in samples.iter() {
            let entry = ManifestEntry::of(split, s);
            let path = root.join(&entry.file);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            s.image.save(&path)?;
            entries.push(entry);
        }
    }
    let mut out = Vec::new();
    for e in &entries {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut f = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    f.write_all(&out).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::Decode(format!("{}:{}: {e}", path.display(), n + 1)))?;
        entries.push(entry);
    }
    Ok(entries)
}

/// A dataset directory opened through its manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        Ok(Dataset {
            root: root.to_path_buf(),
            entries: read_manifest(&root.join(MANIFEST_FILE))?,
        })
    }

    pub fn split(&self, name: &str) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == name).collect()
    }

    pub fn load_image(&self, entry: &ManifestEntry) -> Result<Image> {
        Image::load(&self.root.join(&entry.file))
    }

    /// SHA-256 over the manifest and every image file, in manifest order.
    pub fn content_hash(&self) -> Result<String> {
        let mut h = Sha256::new();
        let manifest = self.root.join(MANIFEST_FILE);
        h.update(fs::read(&manifest).map_err(|e| Error::io(&manifest, e))?);
        for e in &self.entries {
            let p = self.root.join(&e.file);
            h.update(fs::read(&p).map_err(|err| Error::io(&p, err))?);
        }
        Ok(format!("{:x}", h.finalize()))
    }
}
