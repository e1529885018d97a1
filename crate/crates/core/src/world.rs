//! Synthetic grasp world: procedural objects, their voxel views, an analytic
//! success oracle and a low-diversity heuristic grasp planner.
//!
//! Every object carries 2–4 axis-aligned success boxes in configuration space,
//! one per approach side. Box centers depend on the object's extents, so a
//! model that reads the object view can generalize to unseen objects.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::domain::{Bounds, Dataset, DatasetMeta, GraspConfig, GraspSample, ObjectView, Source, VoxelGrid, POSE_BLOCK};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Box,
    Cylinder,
    Ellipsoid,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Box, ShapeKind::Cylinder, ShapeKind::Ellipsoid];

    /// Point-in-shape test for an object centered at the origin.
    pub fn contains(self, extents: [f64; 3], p: [f64; 3]) -> bool {
        let h = [extents[0] / 2.0, extents[1] / 2.0, extents[2] / 2.0];
        match self {
            ShapeKind::Box => (0..3).all(|i| p[i].abs() <= h[i]),
            ShapeKind::Cylinder => (p[0] / h[0]).powi(2) + (p[1] / h[1]).powi(2) <= 1.0 && p[2].abs() <= h[2],
            ShapeKind::Ellipsoid => (0..3).map(|i| (p[i] / h[i]).powi(2)).sum::<f64>() <= 1.0,
        }
    }

    pub fn volume(self, extents: [f64; 3]) -> f64 {
        let v = extents[0] * extents[1] * extents[2];
        match self {
            ShapeKind::Box => v,
            ShapeKind::Cylinder => std::f64::consts::PI / 4.0 * v,
            ShapeKind::Ellipsoid => std::f64::consts::PI / 6.0 * v,
        }
    }
}

/// Approach direction of a grasp; the analog of side vs overhead grasps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApproachSide {
    SideX,
    SideY,
    Top,
    Oblique,
}

impl ApproachSide {
    pub const ALL: [ApproachSide; 4] = [
        ApproachSide::SideX,
        ApproachSide::SideY,
        ApproachSide::Top,
        ApproachSide::Oblique,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ApproachSide::SideX => "side_x",
            ApproachSide::SideY => "side_y",
            ApproachSide::Top => "top",
            ApproachSide::Oblique => "oblique",
        }
    }

    fn base_pose(self) -> [f64; POSE_BLOCK] {
        match self {
            ApproachSide::SideX => [0.45, 0.0, 0.05, 0.0, 0.5, 0.0, 0.0],
            ApproachSide::SideY => [0.0, 0.45, 0.05, 0.5, 0.0, 0.0, 0.3],
            ApproachSide::Top => [0.0, 0.0, 0.5, 0.0, 0.0, 0.5, -0.3],
            ApproachSide::Oblique => [-0.35, -0.3, 0.3, -0.4, -0.3, -0.35, 0.0],
        }
    }

    /// Unit direction (in the pose block's first three entries) along which
    /// the palm stands off from the object surface.
    fn standoff_axis(self) -> [f64; 3] {
        match self {
            ApproachSide::SideX => [1.0, 0.0, 0.0],
            ApproachSide::SideY => [0.0, 1.0, 0.0],
            ApproachSide::Top => [0.0, 0.0, 1.0],
            ApproachSide::Oblique => [-0.6, -0.6, 0.53],
        }
    }

    fn base_joints(self) -> [f64; 8] {
        match self {
            ApproachSide::SideX => [0.5, 0.7, 0.5, 0.7, 0.5, 0.7, 0.3, 0.5],
            ApproachSide::SideY => [0.6, 0.5, 0.6, 0.5, 0.6, 0.5, 0.6, 0.4],
            ApproachSide::Top => [0.8, 0.6, 0.8, 0.6, 0.8, 0.6, 0.7, 0.7],
            ApproachSide::Oblique => [0.4, 0.9, 0.4, 0.9, 0.4, 0.9, 0.5, 0.8],
        }
    }

    /// Object width the fingers close across for this approach.
    fn grip_width(self, extents: [f64; 3]) -> f64 {
        match self {
            ApproachSide::SideX => extents[1],
            ApproachSide::SideY => extents[0],
            ApproachSide::Top => extents[1].min(extents[0]),
            ApproachSide::Oblique => 0.5 * (extents[0] + extents[1]),
        }
    }

    fn available(self, kind: ShapeKind, extents: [f64; 3]) -> bool {
        match self {
            ApproachSide::SideX => extents[1] <= 0.16,
            ApproachSide::SideY => extents[0] <= 0.16 && kind != ShapeKind::Cylinder,
            ApproachSide::Top => extents[2] <= 0.2 && extents[1] <= 0.18,
            ApproachSide::Oblique => true,
        }
    }
}

/// An axis-aligned success box in configuration space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRegion {
    pub side: ApproachSide,
    pub center: Vec<f64>,
    pub tolerance: Vec<f64>,
}

impl SuccessRegion {
    pub fn contains(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(self.center.iter().zip(&self.tolerance))
            .all(|(v, (c, t))| (v - c).abs() <= *t)
    }

    pub fn volume(&self) -> f64 {
        self.tolerance.iter().map(|t| 2.0 * t).product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticObject {
    pub id: u32,
    pub kind: ShapeKind,
    /// Full extents in meters; the two horizontal ones are sorted so x ≥ y.
    pub extents: [f64; 3],
    pub seed: u64,
    pub regions: Vec<SuccessRegion>,
}

impl SyntheticObject {
    /// Index of the first success region containing `q`.
    pub fn region_of(&self, q: &[f64]) -> Option<usize> {
        self.regions.iter().position(|r| r.contains(q))
    }
}

/// Label-noise model of the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    /// Probability that a label is flipped, in `[0, 0.05]`.
    pub noise: f64,
}

impl OracleSpec {
    pub fn new(noise: f64) -> Result<Self> {
        if !(0.0..=0.05).contains(&noise) {
            return Err(Error::InvalidArgument(format!("oracle noise {noise} outside [0, 0.05]")));
        }
        Ok(OracleSpec { noise })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub dim: usize,
    pub resolution: usize,
    /// Side of the cubic voxel volume centered on the object (meters).
    pub grid_extent: f64,
    pub noise: f64,
    /// Success rate the heuristic planner's spread is calibrated to.
    pub heuristic_success: f64,
    /// Approach sides the heuristic planner restricts itself to when available.
    pub heuristic_sides: Vec<ApproachSide>,
    /// Configuration entries the heuristic planner is imprecise about; their
    /// spread is calibrated to `heuristic_success`.
    pub heuristic_noisy_dims: Vec<usize>,
    /// Spread of every other entry, in units of the region tolerance.
    pub heuristic_quiet_scale: f64,
    /// Half-widths of success boxes along pose and joint entries.
    pub pose_tolerance: f64,
    pub joint_tolerance: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            dim: crate::domain::DEFAULT_DIM,
            resolution: 32,
            grid_extent: 0.3,
            noise: 0.02,
            heuristic_success: 0.255,
            heuristic_sides: vec![ApproachSide::SideX, ApproachSide::Top],
            heuristic_noisy_dims: vec![0, 1, 2],
            heuristic_quiet_scale: 0.05,
            pose_tolerance: 0.2,
            joint_tolerance: 0.17,
        }
    }
}

impl WorldConfig {
    pub fn bounds(&self) -> Bounds {
        Bounds::grasp_default(self.dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim <= crate::domain::POSE_BLOCK {
            return Err(Error::InvalidArgument(format!(
                "configuration dimension {} leaves no joint entries",
                self.dim
            )));
        }
        if self.resolution == 0 || self.grid_extent.is_nan() || self.grid_extent <= 0.0 {
            return Err(Error::InvalidArgument("voxel grid must have positive resolution and extent".into()));
        }
        if !(self.pose_tolerance > 0.0 && self.joint_tolerance > 0.0) {
            return Err(Error::InvalidArgument("success box tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// Occupancy of `kind` with `extents` on a `resolution³` grid spanning a cube
/// of side `grid_extent`, sampled at voxel centers.
pub fn voxelize(kind: ShapeKind, extents: [f64; 3], resolution: usize, grid_extent: f64) -> VoxelGrid {
    let cell = grid_extent / resolution as f64;
    let coord = |i: usize| -grid_extent / 2.0 + (i as f64 + 0.5) * cell;
    let mut grid = VoxelGrid::empty(resolution);
    for x in 0..resolution {
        for y in 0..resolution {
            for z in 0..resolution {
                if kind.contains(extents, [coord(x), coord(y), coord(z)]) {
                    grid.set(x, y, z, true);
                }
            }
        }
    }
    grid
}

fn build_regions<R: Rng>(
    kind: ShapeKind,
    extents: [f64; 3],
    cfg: &WorldConfig,
    bounds: &Bounds,
    rng: &mut R,
) -> Vec<SuccessRegion> {
    let mut sides: Vec<ApproachSide> = ApproachSide::ALL
        .into_iter()
        .filter(|s| s.available(kind, extents))
        .collect();
    if sides.len() < 2 {
        sides.push(ApproachSide::Top);
        sides.sort();
        sides.dedup();
    }
    let jitter = Uniform::new_inclusive(0.9, 1.1);
    let d = cfg.dim;
    sides
        .into_iter()
        .map(|side| {
            let mut center = vec![0.0; d];
            let mut tolerance = vec![0.0; d];
            let pose = side.base_pose();
            let axis = side.standoff_axis();
            let half = [extents[0] / 2.0, extents[1] / 2.0, extents[2] / 2.0];
            let reach: f64 = (0..3).map(|i| axis[i].abs() * half[i]).sum();
            let width = side.grip_width(extents);
            for i in 0..d {
                let (c, t) = if i < POSE_BLOCK {
                    let shift = if i < 3 { 1.5 * reach * axis[i] } else { 0.0 };
                    (pose[i] + shift, cfg.pose_tolerance)
                } else {
                    let base = side.base_joints()[(i - POSE_BLOCK) % 8];
                    (base + 2.5 * (0.12 - width), cfg.joint_tolerance)
                };
                let t = t * jitter.sample(rng);
                let margin = 1e-3;
                let lo = bounds.lower()[i] + t + margin;
                let hi = bounds.upper()[i] - t - margin;
                center[i] = c.clamp(lo, hi);
                tolerance[i] = t;
            }
            SuccessRegion { side, center, tolerance }
        })
        .collect()
}

/// Deterministically generates one object and its view from `seed`.
pub fn generate_object(id: u32, seed: u64, cfg: &WorldConfig) -> (SyntheticObject, ObjectView) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = ShapeKind::ALL[rng.gen_range(0..3)];
    let horiz = Uniform::new_inclusive(0.04, 0.22);
    let (mut a, mut b) = (horiz.sample(&mut rng), horiz.sample(&mut rng));
    if kind == ShapeKind::Cylinder {
        b = a;
    }
    if a < b {
        std::mem::swap(&mut a, &mut b);
    }
    let h = rng.gen_range(0.04..=0.25);
    let extents = [a, b, h];
    let regions = build_regions(kind, extents, cfg, &cfg.bounds(), &mut rng);
    let voxels = voxelize(kind, extents, cfg.resolution, cfg.grid_extent);
    let view = ObjectView::new(id, extents, voxels).expect("extents are positive");
    let object = SyntheticObject {
        id,
        kind,
        extents,
        seed,
        regions,
    };
    (object, view)
}

/// Labels `q` on object `o`: success inside any region, flipped with
/// probability `noise`. Always consumes exactly one uniform draw.
pub fn oracle_label<R: Rng + ?Sized>(
    o: &SyntheticObject,
    q: &GraspConfig,
    bounds: &Bounds,
    oracle: &OracleSpec,
    rng: &mut R,
) -> Result<bool> {
    if !bounds.contains(q.as_slice())? {
        return Err(Error::OutOfBounds);
    }
    let inside = o.region_of(q.as_slice()).is_some();
    let flip = rng.gen::<f64>() < oracle.noise;
    Ok(inside ^ flip)
}

fn erf_inv_polished(y: f64) -> f64 {
    use statrs::function::erf::{erf, erf_inv};
    let mut x = erf_inv(y);
    for _ in 0..2 {
        // Newton step; erf'(x) = 2/sqrt(pi) exp(-x^2)
        x -= (erf(x) - y) / (std::f64::consts::FRAC_2_SQRT_PI * (-x * x).exp());
    }
    x
}

/// Probability that a centered Gaussian with sd `scale · t` stays within `±t`.
pub fn within_tolerance(scale: f64) -> f64 {
    if scale <= 0.0 {
        return 1.0;
    }
    statrs::function::erf::erf(1.0 / (scale * std::f64::consts::SQRT_2))
}

/// Spread (in units of each region's tolerance) of the `noisy` entries at
/// which a Gaussian planner centered on a region hits `target` overall
/// success, given `quiet` further entries at spread `quiet_scale`.
pub fn calibrate_heuristic_scale(target: f64, noise: f64, noisy: usize, quiet: usize, quiet_scale: f64) -> Result<f64> {
    let unreachable = || {
        Error::InvalidArgument(format!(
            "heuristic success target {target} unreachable with noise {noise}"
        ))
    };
    if noisy == 0 {
        return Err(Error::InvalidArgument("the heuristic planner needs at least one noisy entry".into()));
    }
    let quiet_hit = within_tolerance(quiet_scale).powi(quiet as i32);
    let inside = (target - noise) / ((1.0 - 2.0 * noise) * quiet_hit);
    if !(0.0 < inside && inside < 1.0) {
        return Err(unreachable());
    }
    let per_dim = inside.powf(1.0 / noisy as f64);
    Ok(1.0 / (std::f64::consts::SQRT_2 * erf_inv_polished(per_dim)))
}

/// Geometric stand-in planner: Gaussian perturbations of a region center,
/// restricted to a preferred subset of approach sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicPlanner {
    /// Standard deviation per entry as a multiple of the region tolerance.
    pub scales: Vec<f64>,
    pub sides: Vec<ApproachSide>,
}

impl HeuristicPlanner {
    pub fn calibrated(cfg: &WorldConfig) -> Result<Self> {
        let noisy = &cfg.heuristic_noisy_dims;
        if noisy.iter().any(|&i| i >= cfg.dim) {
            return Err(Error::InvalidArgument("heuristic noisy entry outside the configuration".into()));
        }
        let k = (0..cfg.dim).filter(|i| noisy.contains(i)).count();
        let s = calibrate_heuristic_scale(cfg.heuristic_success, cfg.noise, k, cfg.dim - k, cfg.heuristic_quiet_scale)?;
        Ok(HeuristicPlanner {
            scales: (0..cfg.dim)
                .map(|i| if noisy.contains(&i) { s } else { cfg.heuristic_quiet_scale })
                .collect(),
            sides: cfg.heuristic_sides.clone(),
        })
    }

    /// Expected label-1 rate, including label noise.
    pub fn expected_success(&self, noise: f64) -> f64 {
        let inside: f64 = self.scales.iter().map(|&s| within_tolerance(s)).product();
        (1.0 - 2.0 * noise) * inside + noise
    }

    pub fn plan<R: Rng + ?Sized>(&self, o: &SyntheticObject, bounds: &Bounds, rng: &mut R) -> Result<GraspConfig> {
        let preferred: Vec<&SuccessRegion> = o.regions.iter().filter(|r| self.sides.contains(&r.side)).collect();
        let region = if preferred.is_empty() {
            o.regions
                .first()
                .ok_or_else(|| Error::InvalidArgument(format!("object {} has no success region", o.id)))?
        } else {
            preferred[rng.gen_range(0..preferred.len())]
        };
        let mut q: Vec<f64> = region
            .center
            .iter()
            .zip(&region.tolerance)
            .zip(&self.scales)
            .map(|((&c, &t), &scale)| {
                let sd = scale * t;
                if sd > 0.0 {
                    c + Normal::new(0.0, sd).expect("positive sd").sample(rng)
                } else {
                    c
                }
            })
            .collect();
        bounds.project(&mut q)?;
        GraspConfig::new(q)
    }
}

/// The object pool plus everything needed to label grasps on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub oracle: OracleSpec,
    pub planner: HeuristicPlanner,
    pub objects: Vec<SyntheticObject>,
    #[serde(skip)]
    pub views: Vec<ObjectView>,
}

impl World {
    /// Generates `n` objects with ids `first_id..first_id + n`, seeds drawn from `seed`.
    pub fn generate(cfg: WorldConfig, n: usize, first_id: u32, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let oracle = OracleSpec::new(cfg.noise)?;
        let planner = HeuristicPlanner::calibrated(&cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (objects, views) = (0..n)
            .map(|i| generate_object(first_id + i as u32, rng.gen(), &cfg))
            .unzip();
        Ok(World {
            config: cfg,
            oracle,
            planner,
            objects,
            views,
        })
    }

    /// Rebuilds the voxel views after deserialization.
    pub fn rebuild_views(&mut self) {
        self.views = self
            .objects
            .iter()
            .map(|o| {
                let grid = voxelize(o.kind, o.extents, self.config.resolution, self.config.grid_extent);
                ObjectView::new(o.id, o.extents, grid).expect("extents are positive")
            })
            .collect();
    }

    pub fn bounds(&self) -> Bounds {
        self.config.bounds()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn object(&self, id: u32) -> Result<&SyntheticObject> {
        self.objects.iter().find(|o| o.id == id).ok_or(Error::UnknownObject(id))
    }

    pub fn view(&self, id: u32) -> Result<&ObjectView> {
        self.views.iter().find(|v| v.object_id == id).ok_or(Error::UnknownObject(id))
    }

    pub fn label<R: Rng + ?Sized>(&self, id: u32, q: &GraspConfig, rng: &mut R) -> Result<bool> {
        oracle_label(self.object(id)?, q, &self.bounds(), &self.oracle, rng)
    }

    pub fn heuristic_plan<R: Rng + ?Sized>(&self, id: u32, rng: &mut R) -> Result<GraspConfig> {
        self.planner.plan(self.object(id)?, &self.bounds(), rng)
    }

    pub fn dataset_meta(&self, seed: u64) -> DatasetMeta {
        DatasetMeta {
            dim: self.config.dim,
            resolution: self.config.resolution,
            seed,
        }
    }

    /// Chooses a pool object uniformly at random.
    pub fn random_object<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u32> {
        self.objects
            .choose(rng)
            .map(|o| o.id)
            .ok_or_else(|| Error::InvalidArgument("empty object pool".into()))
    }
}

/// `n` heuristic grasps, objects taken round-robin from the pool.
pub fn bootstrap_geodata<R: Rng + ?Sized>(n: usize, world: &World, seed: u64, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("bootstrap size must be positive".into()));
    }
    if world.is_empty() {
        return Err(Error::InvalidArgument("empty object pool".into()));
    }
    let mut data = Dataset::new(world.dataset_meta(seed));
    for i in 0..n {
        let o = &world.objects[i % world.len()];
        let q = world.planner.plan(o, &world.bounds(), rng)?;
        let label = oracle_label(o, &q, &world.bounds(), &world.oracle, rng)?;
        data.push(GraspSample::new(o.id, q, label, Source::Heuristic, 0))?;
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> WorldConfig {
        WorldConfig {
            resolution: 16,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn same_seed_same_object() {
        let cfg = small_cfg();
        assert_eq!(generate_object(3, 42, &cfg), generate_object(3, 42, &cfg));
        assert_ne!(generate_object(3, 42, &cfg).0, generate_object(3, 43, &cfg).0);
    }

    #[test]
    fn box_voxel_count_matches_point_test() {
        let g = voxelize(ShapeKind::Box, [0.1, 0.1, 0.1], 32, 0.2);
        // brute force over voxel centers
        let cell = 0.2 / 32.0;
        let mut count = 0;
        for x in 0..32 {
            for y in 0..32 {
                for z in 0..32 {
                    let c = |i: usize| -0.1 + (i as f64 + 0.5) * cell;
                    if c(x).abs() <= 0.05 && c(y).abs() <= 0.05 && c(z).abs() <= 0.05 {
                        count += 1;
                    }
                }
            }
        }
        assert_eq!(g.occupied(), count);
        assert!((g.occupied() as i64 - 4096).abs() <= 32 * 32);
    }

    #[test]
    fn ellipsoid_voxel_volume_within_five_percent() {
        let e = [0.2, 0.15, 0.1];
        let g = voxelize(ShapeKind::Ellipsoid, e, 32, 0.3);
        let cell = (0.3f64 / 32.0).powi(3);
        let analytic = ShapeKind::Ellipsoid.volume(e);
        let voxel = g.occupied() as f64 * cell;
        assert!((voxel - analytic).abs() / analytic < 0.05, "{voxel} vs {analytic}");
    }

    #[test]
    fn halving_resolution_keeps_occupancy_fraction() {
        for kind in ShapeKind::ALL {
            let e = [0.18, 0.12, 0.2];
            let fine = voxelize(kind, e, 32, 0.3).occupied() as f64 / 32f64.powi(3);
            let coarse = voxelize(kind, e, 16, 0.3).occupied() as f64 / 16f64.powi(3);
            assert!((fine - coarse).abs() / fine < 0.1, "{kind:?}: {fine} vs {coarse}");
        }
    }

    #[test]
    fn objects_have_two_to_four_regions_inside_bounds() {
        let cfg = small_cfg();
        let b = cfg.bounds();
        for seed in 0..200 {
            let (o, v) = generate_object(seed as u32, seed, &cfg);
            assert!((2..=4).contains(&o.regions.len()), "{} regions", o.regions.len());
            assert_eq!(v.size, o.extents);
            assert!(o.extents[0] >= o.extents[1]);
            for r in &o.regions {
                for i in 0..cfg.dim {
                    assert!(r.tolerance[i] > 0.0);
                    assert!(r.center[i] - r.tolerance[i] > b.lower()[i]);
                    assert!(r.center[i] + r.tolerance[i] < b.upper()[i]);
                }
            }
            let mut sides: Vec<_> = o.regions.iter().map(|r| r.side).collect();
            sides.dedup();
            assert_eq!(sides.len(), o.regions.len());
        }
    }

    #[test]
    fn oracle_center_and_edge() {
        let cfg = small_cfg();
        let (o, _) = generate_object(0, 1, &cfg);
        let b = cfg.bounds();
        let clean = OracleSpec::new(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let center = GraspConfig::new(o.regions[0].center.clone()).unwrap();
        assert!(oracle_label(&o, &center, &b, &clean, &mut rng).unwrap());
        let mut off = o.regions[0].center.clone();
        off[3] += o.regions[0].tolerance[3] * 1.001;
        let off = GraspConfig::new(off).unwrap();
        if o.region_of(off.as_slice()).is_none() {
            assert!(!oracle_label(&o, &off, &b, &clean, &mut rng).unwrap());
        }
        let outside = GraspConfig::new(vec![5.0; cfg.dim]).unwrap();
        assert!(matches!(
            oracle_label(&o, &outside, &b, &clean, &mut rng),
            Err(Error::OutOfBounds)
        ));
    }

    #[test]
    fn oracle_rejects_bad_noise() {
        assert!(OracleSpec::new(0.2).is_err());
        assert!(OracleSpec::new(-0.01).is_err());
    }

    #[test]
    fn uniform_draws_hit_one_percent_region() {
        // D = 2 on [0,1]^2, a single square region covering 1% of the box.
        let b = Bounds::new(vec![0.0; 2], vec![1.0; 2]).unwrap();
        let o = SyntheticObject {
            id: 0,
            kind: ShapeKind::Box,
            extents: [0.1; 3],
            seed: 0,
            regions: vec![SuccessRegion {
                side: ApproachSide::Top,
                center: vec![0.3, 0.6],
                tolerance: vec![0.05, 0.05],
            }],
        };
        let clean = OracleSpec::new(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| {
                let q = GraspConfig::new(vec![rng.gen(), rng.gen()]).unwrap();
                oracle_label(&o, &q, &b, &clean, &mut rng).unwrap()
            })
            .count();
        let rate = hits as f64 / n as f64;
        // binomial sd at p = 0.01, n = 1e5 is ~3.1e-4
        assert!((rate - 0.01).abs() < 1.5e-3, "rate {rate}");
    }

    #[test]
    fn zero_spread_planner_always_succeeds() {
        let cfg = small_cfg();
        let (o, _) = generate_object(0, 5, &cfg);
        let b = cfg.bounds();
        let planner = HeuristicPlanner {
            scales: vec![0.0; cfg.dim],
            sides: cfg.heuristic_sides.clone(),
        };
        let clean = OracleSpec::new(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let q = planner.plan(&o, &b, &mut rng).unwrap();
            assert!(oracle_label(&o, &q, &b, &clean, &mut rng).unwrap());
        }
    }

    #[test]
    fn calibration_inverts_success_formula() {
        use statrs::function::erf::erf;
        let s = calibrate_heuristic_scale(0.255, 0.02, 3, 12, 0.05).unwrap();
        let noisy = erf(1.0 / (s * std::f64::consts::SQRT_2));
        let quiet = erf(1.0 / (0.05 * std::f64::consts::SQRT_2));
        let total = (1.0 - 0.04) * noisy.powi(3) * quiet.powi(12) + 0.02;
        assert!((total - 0.255).abs() < 1e-12);
        assert!(calibrate_heuristic_scale(0.01, 0.02, 3, 12, 0.05).is_err());
        assert!(calibrate_heuristic_scale(0.255, 0.02, 0, 15, 0.05).is_err());
        let planner = HeuristicPlanner::calibrated(&WorldConfig::default()).unwrap();
        assert!((planner.expected_success(0.02) - 0.255).abs() < 1e-12);
        assert_eq!(planner.scales[3], 0.05);
    }

    #[test]
    fn bootstrap_round_robin_and_errors() {
        let w = World::generate(small_cfg(), 10, 0, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(bootstrap_geodata(0, &w, 0, &mut rng).is_err());
        let d = bootstrap_geodata(100, &w, 0, &mut rng).unwrap();
        for o in &w.objects {
            assert_eq!(d.iter().filter(|s| s.object_id == o.id).count(), 10);
        }
        assert!(d.iter().all(|s| s.source == Source::Heuristic));
        let empty = World::generate(small_cfg(), 0, 0, 3).unwrap();
        assert!(bootstrap_geodata(5, &empty, 0, &mut rng).is_err());
    }
}
