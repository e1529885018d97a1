//! On-disk formats.
//!
//! * Datasets are JSON-lines: a header object followed by one sample per line,
//!   `{"object_id", "round", "source", "label", "config": [...]}`.
//! * Object views live once per object in a sidecar JSON-lines file,
//!   `{"object_id", "size": [3], "resolution", "voxels": "<rle>"}` where the
//!   voxel string is [`VoxelGrid::to_rle`].
//! * Checkpoints are a JSON manifest of named arrays with explicit shapes plus a
//!   raw file of little-endian `f64` values.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, DatasetMeta, GraspSample, ObjectView, VoxelGrid};
use crate::error::{Error, Result};

pub const DATASET_FORMAT: &str = "active-grasp/dataset";
pub const OBJECTS_FORMAT: &str = "active-grasp/objects";
pub const CHECKPOINT_FORMAT: &str = "active-grasp/checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    #[serde(flatten)]
    meta: Option<DatasetMeta>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(f))
}

fn write_line<T: Serialize>(w: &mut impl Write, path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

fn check_header(header: &Header, format: &str) -> Result<()> {
    if header.format != format {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected format {format:?}, found {:?}", header.format),
        });
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

/// Reads a JSON-lines file: header first, then records. A record line that is
/// not terminated by a newline is accepted only if it parses.
fn read_lines<T, F>(path: &Path, format: &str, mut on_header: F) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(&Header) -> Result<()>,
{
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(f);
    let mut out = Vec::new();
    let mut saw_header = false;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            let header: Header = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: lineno,
                msg: e.to_string(),
            })?;
            check_header(&header, format)?;
            on_header(&header)?;
            saw_header = true;
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        out.push(record);
    }
    if !saw_header {
        return Err(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        });
    }
    Ok(out)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let header = Header {
        format: DATASET_FORMAT.into(),
        version: FORMAT_VERSION,
        meta: Some(*dataset.meta()),
    };
    write_line(&mut w, path, &header)?;
    for s in dataset {
        write_line(&mut w, path, s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends samples to an existing dataset file.
pub fn append_samples(path: impl AsRef<Path>, samples: &[GraspSample]) -> Result<()> {
    let path = path.as_ref();
    let f = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for s in samples {
        write_line(&mut w, path, s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut meta = None;
    let samples: Vec<GraspSample> = read_lines(path, DATASET_FORMAT, |h| {
        meta = h.meta;
        Ok(())
    })?;
    let meta = meta.ok_or_else(|| Error::Parse {
        line: 1,
        msg: "dataset header lacks dim/resolution/seed".into(),
    })?;
    let mut d = Dataset::new(meta);
    for (i, s) in samples.into_iter().enumerate() {
        d.push(s).map_err(|e| Error::Parse {
            line: i + 2,
            msg: e.to_string(),
        })?;
    }
    Ok(d)
}

#[derive(Serialize, Deserialize)]
struct ObjectRecord {
    object_id: u32,
    size: [f64; 3],
    resolution: usize,
    voxels: String,
}

pub fn save_objects(views: &[ObjectView], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let header = Header {
        format: OBJECTS_FORMAT.into(),
        version: FORMAT_VERSION,
        meta: None,
    };
    write_line(&mut w, path, &header)?;
    for v in views {
        let rec = ObjectRecord {
            object_id: v.object_id,
            size: v.size,
            resolution: v.voxels.resolution(),
            voxels: v.voxels.to_rle(),
        };
        write_line(&mut w, path, &rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_objects(path: impl AsRef<Path>) -> Result<Vec<ObjectView>> {
    let path = path.as_ref();
    let records: Vec<ObjectRecord> = read_lines(path, OBJECTS_FORMAT, |_| Ok(()))?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let grid = VoxelGrid::from_rle(r.resolution, &r.voxels).map_err(|e| Error::Parse {
                line: i + 2,
                msg: e.to_string(),
            })?;
            ObjectView::new(r.object_id, r.size, grid)
        })
        .collect()
}

/// A named parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    data_file: String,
    params: Vec<ManifestEntry>,
}

fn checkpoint_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("json"), path.with_extension("bin"))
}

/// Writes `<path>.json` (manifest) and `<path>.bin` (little-endian f64 data).
pub fn save_checkpoint(params: &[ParamArray], path: impl AsRef<Path>) -> Result<()> {
    let (manifest_path, data_path) = checkpoint_paths(path.as_ref());
    let mut entries = Vec::with_capacity(params.len());
    let mut bytes = Vec::new();
    let mut offset = 0;
    for p in params {
        let n: usize = p.shape.iter().product();
        if n != p.data.len() {
            return Err(Error::Checkpoint(format!(
                "{}: shape {:?} does not match {} values",
                p.name,
                p.shape,
                p.data.len()
            )));
        }
        if entries.iter().any(|e: &ManifestEntry| e.name == p.name) {
            return Err(Error::Checkpoint(format!("duplicate parameter name {}", p.name)));
        }
        entries.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            offset,
        });
        for v in &p.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        offset += n;
    }
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: FORMAT_VERSION,
        data_file: data_path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
        params: entries,
    };
    let mut w = create(&manifest_path)?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n").map_err(|e| Error::io(&manifest_path, e))?;
    w.flush().map_err(|e| Error::io(&manifest_path, e))?;
    fs::write(&data_path, bytes).map_err(|e| Error::io(&data_path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Vec<ParamArray>> {
    let (manifest_path, _) = checkpoint_paths(path.as_ref());
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unexpected format {:?}", manifest.format)));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.version,
            expected: FORMAT_VERSION,
        });
    }
    let data_path = manifest_path.with_file_name(&manifest.data_file);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint("data file length is not a multiple of 8".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    manifest
        .params
        .into_iter()
        .map(|e| {
            let n: usize = e.shape.iter().product();
            let data = values
                .get(e.offset..e.offset + n)
                .ok_or_else(|| Error::Checkpoint(format!("{} runs past end of data", e.name)))?
                .to_vec();
            Ok(ParamArray {
                name: e.name,
                shape: e.shape,
                data,
            })
        })
        .collect()
}
