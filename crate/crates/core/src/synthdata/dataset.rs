//! Dataset generation and the JSON Lines manifest.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::occlude::{occlude, OcclusionConfig};
use super::puppet::{sample_puppet, sample_upper_body_puppet, PuppetParams, PuppetRanges};
use super::render::render_puppet;
use crate::geometry::Point2;
use crate::topology::NUM_KEYPOINTS;
use crate::{Error, Pose, Result};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub canvas: usize,
    /// Fraction of samples whose legs extend past the bottom of the canvas.
    pub upper_body_fraction: f64,
    pub occlusion: OcclusionConfig,
    pub puppet: PuppetRanges,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            canvas: 128,
            upper_body_fraction: 0.2,
            occlusion: OcclusionConfig {
                max_rects: 2,
                ..OcclusionConfig::default()
            },
            puppet: PuppetRanges::default(),
        }
    }
}

/// One annotated image. `image` is relative to the manifest's directory
/// unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub image: PathBuf,
    pub keypoints: Vec<[f64; 2]>,
    pub visibility: Vec<u8>,
}

impl Record {
    pub fn from_pose(image: PathBuf, pose: &Pose) -> Self {
        Self {
            image,
            keypoints: pose.points.iter().map(|p| [p.x, p.y]).collect(),
            visibility: pose.visibility.iter().map(|v| u8::from(*v >= 0.5)).collect(),
        }
    }

    pub fn pose(&self) -> Result<Pose> {
        if self.keypoints.len() != NUM_KEYPOINTS || self.visibility.len() != NUM_KEYPOINTS {
            return Err(manifest_err(format!(
                "{}: expected {NUM_KEYPOINTS} keypoints and visibility flags, got {} and {}",
                self.image.display(),
                self.keypoints.len(),
                self.visibility.len()
            )));
        }
        if let Some(v) = self.visibility.iter().find(|v| **v > 1) {
            return Err(manifest_err(format!("visibility flag {v} is not 0 or 1")));
        }
        let points: Vec<_> = self.keypoints.iter().map(|[x, y]| Point2::new(*x, *y)).collect();
        let vis: Vec<f64> = self.visibility.iter().map(|v| *v as f64).collect();
        Pose::from_slices(&points, &vis)
    }
}

fn manifest_err(detail: String) -> Error {
    Error::Format {
        kind: "manifest",
        detail,
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    /// Directory image paths are resolved against.
    pub root: PathBuf,
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn image_path(&self, record: &Record) -> PathBuf {
        self.root.join(&record.image)
    }

    pub fn load_image(&self, index: usize) -> Result<Image> {
        Image::load(&self.image_path(&self.records[index]))
    }

    pub fn poses(&self) -> Result<Vec<Pose>> {
        self.records.iter().map(Record::pose).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R, root: PathBuf) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record =
                serde_json::from_str(&line).map_err(|e| manifest_err(format!("line {}: {e}", n + 1)))?;
            record
                .pose()
                .map_err(|e| manifest_err(format!("line {}: {e}", n + 1)))?;
            records.push(record);
        }
        Ok(Self { root, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_jsonl(BufWriter::new(File::create(path)?))
    }

    /// Loads a manifest file, or `manifest.jsonl` inside a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::read_jsonl(BufReader::new(File::open(&file)?), root)
    }

    /// Records `range` of this manifest, sharing its root.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            root: self.root.clone(),
            records: self.records[range].to_vec(),
        }
    }
}

/// Independent random stream for sample `index` of a run seeded with `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn inside_canvas(p: Point2<f64>, size: usize) -> bool {
    let s = size as f64;
    p.x >= 0.0 && p.y >= 0.0 && p.x < s && p.y < s
}

/// Sample `index` of the dataset generated with `seed`: rendered, occluded
/// canvas plus its annotation. Points covered by an occluder or lying off the
/// canvas are marked invisible.
pub fn render_sample(seed: u64, index: u64, config: &GenerationConfig) -> (Image, Pose, PuppetParams) {
    let mut rng = sample_rng(seed, index);
    let size = config.canvas;
    let (params, mut pose) = if rng.random_bool(config.upper_body_fraction.clamp(0.0, 1.0)) {
        sample_upper_body_puppet(&mut rng, size, size, &config.puppet)
    } else {
        sample_puppet(&mut rng, size, size, &config.puppet)
    };
    let mut image = render_puppet(&params, size, size);
    let (labels, _) = occlude(&mut image, &pose.points, &mut rng, &config.occlusion);
    for ((v, p), label) in pose.visibility.iter_mut().zip(&pose.points).zip(labels) {
        if label == 0.0 || !inside_canvas(*p, size) {
            *v = 0.0;
        }
    }
    (image, pose, params)
}

pub fn image_name(index: usize) -> String {
    format!("img_{index:05}.ppm")
}

/// Renders `n` samples into `dir` and writes `dir/manifest.jsonl`.
pub fn generate_dataset(n: usize, seed: u64, dir: &Path, config: &GenerationConfig) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if config.canvas == 0 {
        return Err(Error::InvalidConfig("canvas must be positive".into()));
    }
    std::fs::create_dir_all(dir)?;
    let records = (0..n)
        .into_par_iter()
        .map(|i| {
            let (image, pose, _) = render_sample(seed, i as u64, config);
            let name = PathBuf::from(image_name(i));
            image.save(&dir.join(&name))?;
            Ok(Record::from_pose(name, &pose))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        records,
    };
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Loads every image of a manifest along with its pose.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Vec<(Image, Pose)>> {
    manifest
        .records
        .par_iter()
        .map(|r| Ok((Image::load(&manifest.image_path(r))?, r.pose()?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trip_and_validation() {
        let (_, pose, _) = render_sample(1, 0, &GenerationConfig::default());
        let r = Record::from_pose("a.ppm".into(), &pose);
        let line = serde_json::to_string(&r).unwrap();
        assert!(line.starts_with("{\"image\":\"a.ppm\",\"keypoints\":[["));
        let m = DatasetManifest::read_jsonl(format!("{line}\n").as_bytes(), PathBuf::new()).unwrap();
        assert_eq!(m.records[0], r);
        assert_eq!(m.records[0].pose().unwrap(), pose);

        let short = r#"{"image":"b.ppm","keypoints":[[1,2]],"visibility":[1]}"#;
        assert!(DatasetManifest::read_jsonl(short.as_bytes(), PathBuf::new()).is_err());
        let extra = line.replace("\"image\"", "\"extra\":1,\"image\"");
        assert!(DatasetManifest::read_jsonl(extra.as_bytes(), PathBuf::new()).is_err());
    }

    #[test]
    fn samples_are_independent_of_order() {
        let config = GenerationConfig::default();
        let a = render_sample(5, 17, &config);
        let _ = render_sample(5, 16, &config);
        let b = render_sample(5, 17, &config);
        assert_eq!(a.1, b.1);
        assert_ne!(render_sample(5, 18, &config).1, a.1);
    }

    #[test]
    fn off_canvas_points_are_invisible() {
        let config = GenerationConfig {
            upper_body_fraction: 1.0,
            occlusion: OcclusionConfig::none(),
            ..Default::default()
        };
        for i in 0..20 {
            let (_, pose, _) = render_sample(2, i, &config);
            for (p, v) in pose.points.iter().zip(pose.visibility) {
                assert_eq!(v == 1.0, inside_canvas(*p, 128));
            }
            assert!(pose.visibility[25..].contains(&0.0));
        }
    }
}
