//! Split directory layout:
//!
//! ```text
//! <dir>/images/NNNN.ppm  <dir>/depths/NNNN.pfm  <dir>/masks/NNNN.pgm
//! <dir>/noise/NNNN.pfm   (only for samples with injected label noise)
//! <dir>/manifest.jsonl   one {file, seed, checksum} record per file
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::formats::{decode_pfm, decode_pgm, decode_ppm, encode_pfm, encode_pgm, encode_ppm};
use super::ImageSample;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

const KINDS: [(&str, &str); 4] = [("images", "ppm"), ("depths", "pfm"), ("masks", "pgm"), ("noise", "pfm")];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Path relative to the split directory, `/`-separated.
    pub file: String,
    pub seed: u64,
    /// Lowercase hex SHA-256 of the file contents.
    pub checksum: String,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `samples` under `dir`, numbering them in order.
pub fn write_dataset(samples: &[ImageSample], dir: &Path) -> Result<Vec<ManifestRecord>> {
    for (kind, _) in KINDS {
        if kind != "noise" || samples.iter().any(|s| s.noise_sigma.is_some()) {
            let d = dir.join(kind);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
    }
    let mut records = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let mut files = vec![
            (format!("images/{i:04}.ppm"), encode_ppm(&s.image)?),
            (format!("depths/{i:04}.pfm"), encode_pfm(&s.depth)?),
            (format!("masks/{i:04}.pgm"), encode_pgm(&s.mask)),
        ];
        if let Some(sig) = &s.noise_sigma {
            files.push((format!("noise/{i:04}.pfm"), encode_pfm(sig)?));
        }
        for (file, bytes) in files {
            let p = dir.join(&file);
            fs::write(&p, &bytes).map_err(|e| Error::io(&p, e))?;
            records.push(ManifestRecord {
                file,
                seed: s.sample_seed,
                checksum: sha256_hex(&bytes),
            });
        }
    }
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    let mp = dir.join(MANIFEST_FILE);
    fs::write(&mp, text).map_err(|e| Error::io(&mp, e))?;
    Ok(records)
}

#[derive(Default)]
struct Entry {
    seed: Option<u64>,
    files: BTreeMap<&'static str, Vec<u8>>,
}

/// Reads a split written by [`write_dataset`], verifying every checksum and
/// that the manifest and the `images/` directory agree on the sample count.
pub fn read_dataset(dir: &Path) -> Result<Vec<ImageSample>> {
    let mp = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let mut entries: BTreeMap<usize, Entry> = BTreeMap::new();
    for (ln, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| Error::corrupt(&mp, format!("line {}: {e}", ln + 1)))?;
        let (kind, index) = parse_name(&rec.file).ok_or_else(|| Error::corrupt(&mp, format!("unexpected entry {:?}", rec.file)))?;
        let path = dir.join(&rec.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != rec.checksum {
            return Err(Error::corrupt(&path, "checksum mismatch"));
        }
        let e = entries.entry(index).or_default();
        if e.seed.is_some_and(|s| s != rec.seed) {
            return Err(Error::corrupt(&mp, format!("conflicting seeds for sample {index}")));
        }
        e.seed = Some(rec.seed);
        if e.files.insert(kind, bytes).is_some() {
            return Err(Error::corrupt(&mp, format!("duplicate entry {:?}", rec.file)));
        }
    }

    let images_dir = dir.join("images");
    let on_disk = fs::read_dir(&images_dir)
        .map_err(|e| Error::io(&images_dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "ppm"))
        .count();
    if on_disk != entries.len() || entries.keys().enumerate().any(|(i, &k)| i != k) {
        return Err(Error::corrupt(
            &mp,
            format!("manifest lists {} samples but images/ holds {on_disk}", entries.len()),
        ));
    }

    entries
        .into_iter()
        .map(|(i, mut e)| {
            let mut take = |kind: &'static str, ext: &str| {
                let rel = format!("{kind}/{i:04}.{ext}");
                e.files
                    .remove(kind)
                    .map(|b| (dir.join(&rel), b))
                    .ok_or_else(|| Error::corrupt(&mp, format!("missing entry {rel}")))
            };
            let (ip, ib) = take("images", "ppm")?;
            let (dp, db) = take("depths", "pfm")?;
            let (kp, kb) = take("masks", "pgm")?;
            let noise = take("noise", "pfm").ok();
            let sample = ImageSample {
                image: decode_ppm(&ib, &ip)?,
                depth: decode_pfm(&db, &dp)?,
                mask: decode_pgm(&kb, &kp)?,
                sample_seed: e.seed.expect("entry has a seed"),
                noise_sigma: noise.map(|(p, b)| decode_pfm(&b, &p)).transpose()?,
            };
            let hw = [sample.height(), sample.width()];
            let planes_agree = sample.image.shape()[1..] == hw
                && sample.mask.shape() == hw
                && sample.noise_sigma.as_ref().is_none_or(|n| n.shape() == hw);
            if !planes_agree {
                return Err(Error::corrupt(&ip, format!("planes of sample {i} disagree in size")));
            }
            Ok(sample)
        })
        .collect()
}

fn parse_name(file: &str) -> Option<(&'static str, usize)> {
    let (dir, name) = file.split_once('/')?;
    let (stem, ext) = name.split_once('.')?;
    let &(kind, want_ext) = KINDS.iter().find(|(k, _)| *k == dir)?;
    if ext != want_ext || stem.len() < 4 || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((kind, stem.parse().ok()?))
}
