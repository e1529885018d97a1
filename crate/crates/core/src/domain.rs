//! Domain types shared by every stage of the pipeline: grasp configurations,
//! box bounds, object views and the labeled grasp dataset.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default configuration dimension: a 7-entry pose block followed by an
/// 8-entry finger-joint block.
pub const DEFAULT_DIM: usize = 15;
/// Number of leading entries that make up the pose block.
pub const POSE_BLOCK: usize = 7;

/// A grasp preshape configuration vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GraspConfig(Vec<f64>);

impl GraspConfig {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("grasp configuration"));
        }
        Ok(GraspConfig(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn pose_block(&self) -> &[f64] {
        &self.0[..POSE_BLOCK.min(self.0.len())]
    }

    pub fn joint_block(&self) -> &[f64] {
        &self.0[POSE_BLOCK.min(self.0.len())..]
    }
}

impl TryFrom<Vec<f64>> for GraspConfig {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        GraspConfig::new(values)
    }
}

impl From<GraspConfig> for Vec<f64> {
    fn from(q: GraspConfig) -> Self {
        q.0
    }
}

impl AsRef<[f64]> for GraspConfig {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Box constraint `lower <= q <= upper` on the configuration space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                actual: upper.len(),
            });
        }
        for (index, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() {
                return Err(Error::NonFinite("bounds"));
            }
            if l >= u {
                return Err(Error::InvalidBounds {
                    index,
                    lower: l,
                    upper: u,
                });
            }
        }
        Ok(Bounds { lower, upper })
    }

    /// The default grasp box: pose entries in `[-1, 1]`, finger joints in `[0, 1.5]` rad.
    pub fn grasp_default(dim: usize) -> Self {
        let pose = POSE_BLOCK.min(dim);
        let mut lower = vec![-1.0; pose];
        let mut upper = vec![1.0; pose];
        lower.resize(dim, 0.0);
        upper.resize(dim, 1.5);
        Bounds { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: dim,
            });
        }
        Ok(())
    }

    /// True iff `q` lies inside the closed box.
    pub fn contains(&self, q: &[f64]) -> Result<bool> {
        self.check_dim(q.len())?;
        Ok(q
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u))
    }

    /// Projects `q` onto the box in place.
    pub fn project(&self, q: &mut [f64]) -> Result<()> {
        self.check_dim(q.len())?;
        for (v, (l, u)) in q.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.max(*l).min(*u);
        }
        Ok(())
    }
}

pub fn validate_config(q: &GraspConfig, bounds: &Bounds) -> Result<bool> {
    bounds.contains(q.as_slice())
}

pub fn clamp_to_bounds(q: &GraspConfig, bounds: &Bounds) -> Result<GraspConfig> {
    let mut values = q.0.clone();
    bounds.project(&mut values)?;
    Ok(GraspConfig(values))
}

/// Cubic binary occupancy grid, indexed `x * r² + y * r + z`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelGrid {
    resolution: usize,
    cells: Vec<bool>,
}

impl VoxelGrid {
    pub fn empty(resolution: usize) -> Self {
        VoxelGrid {
            resolution,
            cells: vec![false; resolution.pow(3)],
        }
    }

    pub fn from_cells(resolution: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != resolution.pow(3) {
            return Err(Error::DimensionMismatch {
                expected: resolution.pow(3),
                actual: cells.len(),
            });
        }
        Ok(VoxelGrid { resolution, cells })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.resolution + y) * self.resolution + z
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.cells[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = self.index(x, y, z);
        self.cells[i] = value;
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    /// Occupancy as 0.0/1.0 values in index order.
    pub fn to_f64(&self) -> Vec<f64> {
        self.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect()
    }

    /// Run-length encoding: comma-separated run lengths that alternate between
    /// empty and occupied cells, always starting with an (possibly zero) empty run.
    pub fn to_rle(&self) -> String {
        let mut runs = Vec::new();
        let mut current = false;
        let mut count = 0usize;
        for &c in &self.cells {
            if c == current {
                count += 1;
            } else {
                runs.push(count.to_string());
                current = c;
                count = 1;
            }
        }
        runs.push(count.to_string());
        runs.join(",")
    }

    pub fn from_rle(resolution: usize, rle: &str) -> Result<Self> {
        let mut cells = Vec::with_capacity(resolution.pow(3));
        let mut value = false;
        for run in rle.split(',') {
            let n: usize = run
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad run length {run:?}")))?;
            cells.extend(std::iter::repeat_n(value, n));
            value = !value;
        }
        VoxelGrid::from_cells(resolution, cells)
    }

    /// Max-pool downsampling by an integer factor.
    pub fn downsample(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.resolution.is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "cannot downsample resolution {} by {factor}",
                self.resolution
            )));
        }
        let r = self.resolution / factor;
        let mut out = VoxelGrid::empty(r);
        for x in 0..self.resolution {
            for y in 0..self.resolution {
                for z in 0..self.resolution {
                    if self.get(x, y, z) {
                        out.set(x / factor, y / factor, z / factor, true);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// The visual representation of an object: occupancy grid plus extents.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectView {
    pub object_id: u32,
    pub size: [f64; 3],
    pub voxels: VoxelGrid,
}

impl ObjectView {
    pub fn new(object_id: u32, size: [f64; 3], voxels: VoxelGrid) -> Result<Self> {
        if size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "object size entries must be positive, got {size:?}"
            )));
        }
        Ok(ObjectView {
            object_id,
            size,
            voxels,
        })
    }
}

/// Where a grasp sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Heuristic,
    ArmSuccess,
    ArmUncertainty,
    ArmExplore,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Source::Heuristic => "heuristic",
            Source::ArmSuccess => "arm_success",
            Source::ArmUncertainty => "arm_uncertainty",
            Source::ArmExplore => "arm_explore",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspSample {
    pub object_id: u32,
    pub round: u32,
    pub source: Source,
    pub label: u8,
    pub config: GraspConfig,
}

impl GraspSample {
    pub fn new(object_id: u32, config: GraspConfig, label: bool, source: Source, round: u32) -> Self {
        GraspSample {
            object_id,
            round,
            source,
            label: u8::from(label),
            config,
        }
    }

    pub fn success(&self) -> bool {
        self.label == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub dim: usize,
    pub resolution: usize,
    pub seed: u64,
}

/// Append-only, acquisition-ordered list of labeled grasps.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    meta: DatasetMeta,
    samples: Vec<GraspSample>,
}

impl Dataset {
    pub fn new(meta: DatasetMeta) -> Self {
        Dataset {
            meta,
            samples: Vec::new(),
        }
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn samples(&self) -> &[GraspSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: GraspSample) -> Result<()> {
        if sample.config.dim() != self.meta.dim {
            return Err(Error::DimensionMismatch {
                expected: self.meta.dim,
                actual: sample.config.dim(),
            });
        }
        if sample.label > 1 {
            return Err(Error::InvalidArgument(format!("label {} not in {{0,1}}", sample.label)));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn extend_from(&mut self, other: &Dataset) -> Result<()> {
        for s in &other.samples {
            self.push(s.clone())?;
        }
        Ok(())
    }

    pub fn successes(&self) -> usize {
        self.samples.iter().filter(|s| s.success()).count()
    }

    /// A copy holding only the first `n` samples.
    pub fn prefix(&self, n: usize) -> Dataset {
        Dataset {
            meta: self.meta,
            samples: self.samples[..n.min(self.samples.len())].to_vec(),
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, GraspSample> {
        self.samples.iter()
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a GraspSample;
    type IntoIter = std::slice::Iter<'a, GraspSample>;

    fn into_iter(self) -> Self::IntoIter {
        self.samples.iter()
    }
}
