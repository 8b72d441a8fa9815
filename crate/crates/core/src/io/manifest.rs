//! Dataset manifest: one line per image,
//! `filename (class_id xmin ymin xmax ymax azimuth)*`, coordinates normalized
//! to `[0, 1]`, azimuth in degrees. Blank lines and `#` comments are ignored.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::anchors::BoxGeom;
use crate::datagen::{generate_scene, image_filename, SceneSpec};
use crate::error::{Error, Result};
use crate::io::format_coord;
use crate::net::LabeledImage;
use crate::raster::Raster;
use crate::targets::GroundTruthObject;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const IMAGE_DIR: &str = "images";
pub const SPEC_FILE: &str = "dataset.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Image path relative to the manifest's directory.
    pub filename: String,
    pub objects: Vec<GroundTruthObject>,
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = String::from("# filename (class_id xmin ymin xmax ymax azimuth)*\n");
    for e in entries {
        s.push_str(&e.filename);
        for o in &e.objects {
            let [x0, y0, x1, y1] = o.box_.corners();
            let _ = write!(
                s,
                " {} {} {} {} {} {}",
                o.class_id,
                format_coord(x0),
                format_coord(y0),
                format_coord(x1),
                format_coord(y1),
                o.azimuth
            );
        }
        s.push('\n');
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Data(format!("manifest line {}: {msg}", lineno + 1));
        let mut tokens = line.split_whitespace();
        let filename = tokens.next().expect("non-empty line").to_string();
        let rest: Vec<&str> = tokens.collect();
        if !rest.len().is_multiple_of(6) {
            return Err(bad(format!(
                "expected groups of 6 fields after the filename, got {}",
                rest.len()
            )));
        }
        let mut objects = Vec::new();
        for group in rest.chunks(6) {
            let class_id: usize = group[0]
                .parse()
                .map_err(|_| bad(format!("bad class id {:?}", group[0])))?;
            let mut v = [0.0f64; 5];
            for (slot, tok) in v.iter_mut().zip(&group[1..]) {
                *slot = tok
                    .parse()
                    .map_err(|_| bad(format!("bad number {tok:?}")))?;
                if !slot.is_finite() {
                    return Err(bad(format!("non-finite value {tok:?}")));
                }
            }
            let box_ = BoxGeom::from_corners(v[0], v[1], v[2], v[3]);
            if !box_.is_valid() {
                return Err(bad(format!("degenerate box {:?}", &v[..4])));
            }
            objects.push(GroundTruthObject::new(class_id, box_, v[4]));
        }
        entries.push(ManifestEntry { filename, objects });
    }
    Ok(entries)
}

/// A dataset on disk: a manifest plus the images it names.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Dataset {
    /// Open `path`, which is either a dataset directory or a manifest file.
    pub fn open(path: &Path) -> Result<Self> {
        let manifest = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let entries = parse_manifest(&text)
            .map_err(|e| Error::Data(format!("{}: {e}", manifest.display())))?;
        let root = manifest
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(Self { root, entries })
    }

    pub fn image_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.filename)
    }

    pub fn load_images(&self, channels: usize) -> Result<Vec<LabeledImage>> {
        self.entries
            .iter()
            .map(|e| {
                Ok(LabeledImage {
                    image: Raster::load_png(&self.image_path(e), channels)?,
                    gts: e.objects.clone(),
                })
            })
            .collect()
    }

    pub fn check_classes(&self, n_classes: usize) -> Result<()> {
        for e in &self.entries {
            if let Some(o) = e.objects.iter().find(|o| o.class_id >= n_classes) {
                return Err(Error::Data(format!(
                    "{}: class id {} out of range for {} classes",
                    e.filename, o.class_id, n_classes
                )));
            }
        }
        Ok(())
    }
}

/// Render `count` scenes into `dir` (images, manifest, and the generating
/// spec). `dir` must be empty or absent unless `force` is set.
pub fn write_dataset(dir: &Path, spec: &SceneSpec, count: usize, force: bool) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Config("dataset count must be at least 1".into()));
    }
    spec.validate()?;
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    let images = dir.join(IMAGE_DIR);
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        let scene = generate_scene(spec, i as u64)?;
        let filename = format!("{IMAGE_DIR}/{}", image_filename(i));
        scene.image.save_png(&dir.join(&filename))?;
        entries.push(ManifestEntry {
            filename,
            objects: scene.objects,
        });
    }
    let manifest = dir.join(MANIFEST_FILE);
    std::fs::write(&manifest, format_manifest(&entries)).map_err(|e| Error::io(&manifest, e))?;
    let spec_path = dir.join(SPEC_FILE);
    let spec_text = toml::to_string_pretty(spec).expect("scene spec serializes");
    std::fs::write(&spec_path, spec_text).map_err(|e| Error::io(&spec_path, e))?;
    Ok(Dataset {
        root: dir.to_path_buf(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let entries = vec![
            ManifestEntry {
                filename: "a.png".into(),
                objects: vec![
                    GroundTruthObject::new(2, BoxGeom::from_corners(0.125, 0.25, 0.5, 0.875), 359.5),
                    GroundTruthObject::new(0, BoxGeom::from_corners(0.1, 0.2, 0.3, 0.4), 1e-9),
                ],
            },
            ManifestEntry {
                filename: "empty.png".into(),
                objects: vec![],
            },
        ];
        let text = format_manifest(&entries);
        let back = parse_manifest(&text).unwrap();
        assert_eq!(format_manifest(&back), text);
        assert_eq!(back[0].objects[0], entries[0].objects[0]);
        let (a, b) = (back[0].objects[1].box_.corners(), entries[0].objects[1].box_.corners());
        assert!(a.iter().zip(b).all(|(u, v)| (u - v).abs() < 1e-9));
        assert_eq!(back[0].objects[1].azimuth, 1e-9);
        assert_eq!(back[1].objects.len(), 0);
    }

    #[test]
    fn malformed_lines_are_reported() {
        let err = parse_manifest("x.png 0 0.1 0.1 0.2\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        assert!(parse_manifest("x.png 0 0.1 0.1 0.2 nan 3\n").is_err());
        assert!(parse_manifest("x.png 0 0.5 0.5 0.4 0.6 3\n").is_err());
        assert!(parse_manifest("# only a comment\n\n").unwrap().is_empty());
    }
}
