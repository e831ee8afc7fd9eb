use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sampling::{sample_training_points, SamplingConfig, SdfSample};
use super::scan::{scan_viewpoints, virtual_scan, PointCloud, ScanConfig};
use super::vehicle::make_vehicle;
use crate::error::{Error, Result};
use crate::Point;

pub const DATASET_FORMAT: &str = "mend-dataset/1";
const INDEX_FILE: &str = "index.json";
const DATA_FILE: &str = "data.bin";

/// How each record of a dataset is produced from its shape seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordSpec {
    pub sampling: SamplingConfig,
    pub scans_per_shape: usize,
    pub viewpoint_distance: f64,
    pub rays_per_axis: usize,
    pub max_scan_points: usize,
}

impl Default for RecordSpec {
    fn default() -> Self {
        Self {
            sampling: SamplingConfig::default(),
            scans_per_shape: 5,
            viewpoint_distance: 2.5,
            rays_per_axis: 64,
            max_scan_points: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeRecord {
    pub seed: u64,
    pub samples: Vec<SdfSample>,
    pub scans: Vec<PointCloud>,
}

impl ShapeRecord {
    /// Builds the record for the vehicle of `seed`.
    pub fn generate(seed: u64, spec: &RecordSpec) -> Result<Self> {
        let shape = make_vehicle(seed);
        let samples = sample_training_points(&shape, &spec.sampling, seed)?;
        let scans = scan_viewpoints(spec.scans_per_shape, spec.viewpoint_distance, seed)
            .into_iter()
            .enumerate()
            .map(|(k, vp)| {
                let mut cfg = ScanConfig::looking_at_origin(vp, seed.wrapping_add(k as u64));
                cfg.azimuth_count = spec.rays_per_axis;
                cfg.elevation_count = spec.rays_per_axis;
                cfg.max_points = spec.max_scan_points;
                virtual_scan(&shape, &cfg)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            seed,
            samples,
            scans,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub meta: serde_json::Value,
    pub records: Vec<ShapeRecord>,
}

#[derive(Serialize, Deserialize)]
struct Block {
    offset: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct ScanEntry {
    points: Block,
    origins: Option<Block>,
}

#[derive(Serialize, Deserialize)]
struct RecordEntry {
    seed: u64,
    samples: Block,
    scans: Vec<ScanEntry>,
}

#[derive(Serialize, Deserialize)]
struct Index {
    format: String,
    data: String,
    meta: serde_json::Value,
    records: Vec<RecordEntry>,
}

fn push_points(blob: &mut Vec<f64>, pts: &[Point]) -> Block {
    let offset = blob.len();
    blob.extend(pts.iter().flatten());
    Block {
        offset,
        count: pts.len(),
    }
}

fn read_points(blob: &[f64], b: &Block) -> Result<Vec<Point>> {
    let slice = blob
        .get(b.offset..b.offset + 3 * b.count)
        .ok_or_else(|| Error::Format("point block runs past the data file".into()))?;
    Ok(slice.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

impl Dataset {
    /// Writes `index.json` and `data.bin` (little-endian f64) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut blob: Vec<f64> = Vec::new();
        let mut records = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let offset = blob.len();
            for s in &r.samples {
                blob.extend(s.x);
                blob.push(s.s);
            }
            let samples = Block {
                offset,
                count: r.samples.len(),
            };
            let scans = r
                .scans
                .iter()
                .map(|c| ScanEntry {
                    points: push_points(&mut blob, &c.points),
                    origins: c.origins.as_ref().map(|o| push_points(&mut blob, o)),
                })
                .collect();
            records.push(RecordEntry {
                seed: r.seed,
                samples,
                scans,
            });
        }
        let index = Index {
            format: DATASET_FORMAT.into(),
            data: DATA_FILE.into(),
            meta: self.meta.clone(),
            records,
        };
        let bytes: Vec<u8> = blob.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(DATA_FILE), bytes)?;
        fs::write(dir.join(INDEX_FILE), serde_json::to_string_pretty(&index)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: Index = serde_json::from_str(&fs::read_to_string(dir.join(INDEX_FILE))?)?;
        if index.format != DATASET_FORMAT {
            return Err(Error::Format(format!("unknown dataset format {:?}", index.format)));
        }
        let bytes = fs::read(dir.join(&index.data))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Format("data file length is not a multiple of 8".into()));
        }
        let blob: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut records = Vec::with_capacity(index.records.len());
        for e in &index.records {
            let raw = blob
                .get(e.samples.offset..e.samples.offset + 4 * e.samples.count)
                .ok_or_else(|| Error::Format("sample block runs past the data file".into()))?;
            let samples = raw
                .chunks_exact(4)
                .map(|c| SdfSample {
                    x: [c[0], c[1], c[2]],
                    s: c[3],
                })
                .collect();
            let scans = e
                .scans
                .iter()
                .map(|s| {
                    Ok(PointCloud {
                        points: read_points(&blob, &s.points)?,
                        origins: s.origins.as_ref().map(|o| read_points(&blob, o)).transpose()?,
                    })
                })
                .collect::<Result<_>>()?;
            records.push(ShapeRecord {
                seed: e.seed,
                samples,
                scans,
            });
        }
        Ok(Self {
            meta: index.meta,
            records,
        })
    }
}
