//! Procedural block-tower scenes.
//!
//! Blocks are axis-aligned cuboids placed bottom-up: each new block is dropped
//! onto an exposed top face (or the ground) at a random horizontal offset that
//! keeps a strictly positive footprint overlap with its support, and is
//! rejected if it would intersect an earlier block. The block's long axis is
//! encoded by permuting its half extents; generated orientations are identity.
//!
//! World axes: `x` runs along the image width, `y` is depth (away from the
//! default camera), `z` is up. The ground plane is `z = 0`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::collide::{self, OrientedBox};
use crate::math::{Quat, Vec3};
use crate::stability::StabilityLabel;

/// Canonical block half extents: a 0.2 m x 0.2 m x 0.6 m cuboid.
pub const CANONICAL_HALF_EXTENTS: [f64; 3] = [0.1, 0.1, 0.3];
/// Half side of the square ground patch used when sampling placements.
pub const GROUND_HALF_SIDE: f64 = 0.6;
/// Block placement attempts before giving up on a scene.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;
/// Geometric tolerance used by [`validate_scene`].
pub const GEOMETRY_TOLERANCE: f64 = 1e-6;
/// Block counts of the four tower-height groups.
pub const BLOCK_COUNTS: [u32; 4] = [4, 6, 10, 14];
/// Default exponent of the per-scene offset precision, see [`SamplerParams`].
pub const DEFAULT_OFFSET_POWER: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DepthMode {
    TwoD,
    ThreeD,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum SizeMode {
    Uni,
    NonUni,
}

/// One of the 16 scene groups, e.g. `10B-2D-Uni`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroupTag {
    pub num_blocks: u32,
    pub depth: DepthMode,
    pub size: SizeMode,
}

impl GroupTag {
    pub fn new(num_blocks: u32, depth: DepthMode, size: SizeMode) -> Result<Self, SceneError> {
        if !BLOCK_COUNTS.contains(&num_blocks) {
            return Err(SceneError::InvalidBlockCount(num_blocks));
        }
        Ok(GroupTag {
            num_blocks,
            depth,
            size,
        })
    }

    /// All 16 groups, ordered by block count, then size mode, then depth
    /// (the row/column order of the accuracy tables).
    pub fn all() -> Vec<GroupTag> {
        let mut out = Vec::with_capacity(16);
        for &n in &BLOCK_COUNTS {
            for size in [SizeMode::Uni, SizeMode::NonUni] {
                for depth in [DepthMode::TwoD, DepthMode::ThreeD] {
                    out.push(GroupTag {
                        num_blocks: n,
                        depth,
                        size,
                    });
                }
            }
        }
        out
    }

    /// Position of this group in [`GroupTag::all`].
    pub fn index(&self) -> usize {
        let row = BLOCK_COUNTS
            .iter()
            .position(|&n| n == self.num_blocks)
            .unwrap_or(0);
        row * 4 + self.column()
    }

    /// Column in the accuracy tables: Uni-2D, Uni-3D, NonUni-2D, NonUni-3D.
    pub fn column(&self) -> usize {
        let s = match self.size {
            SizeMode::Uni => 0,
            SizeMode::NonUni => 2,
        };
        let d = match self.depth {
            DepthMode::TwoD => 0,
            DepthMode::ThreeD => 1,
        };
        s + d
    }

    pub fn is_simple(&self) -> bool {
        self.num_blocks <= 6
    }
}

impl fmt::Display for GroupTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = match self.depth {
            DepthMode::TwoD => "2D",
            DepthMode::ThreeD => "3D",
        };
        let s = match self.size {
            SizeMode::Uni => "Uni",
            SizeMode::NonUni => "NonUni",
        };
        write!(f, "{}B-{}-{}", self.num_blocks, d, s)
    }
}

impl FromStr for GroupTag {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SceneError::InvalidGroupTag(String::from(s));
        let mut parts = s.split('-');
        let blocks = parts.next().ok_or_else(bad)?;
        let depth = parts.next().ok_or_else(bad)?;
        let size = parts.next().ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        let n: u32 = blocks
            .strip_suffix('B')
            .and_then(|n| n.parse().ok())
            .ok_or_else(bad)?;
        let depth = match depth {
            "2D" => DepthMode::TwoD,
            "3D" => DepthMode::ThreeD,
            _ => return Err(bad()),
        };
        let size = match size {
            "Uni" => SizeMode::Uni,
            "NonUni" => SizeMode::NonUni,
            _ => return Err(bad()),
        };
        GroupTag::new(n, depth, size).map_err(|_| bad())
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for GroupTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for GroupTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <String as serde::Deserialize>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Half extents of a cuboid along its local axes, in meters.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlockDims {
    pub half_extents: Vec3,
}

impl BlockDims {
    pub fn canonical() -> Self {
        BlockDims {
            half_extents: Vec3::from_array(CANONICAL_HALF_EXTENTS),
        }
    }

    pub fn new(hx: f64, hy: f64, hz: f64) -> Self {
        BlockDims {
            half_extents: Vec3::new(hx, hy, hz),
        }
    }

    pub fn volume(&self) -> f64 {
        let h = self.half_extents;
        8.0 * h.x * h.y * h.z
    }
}

/// Truncated-normal size jitter: scale factors drawn from `N(1, sigma^2)`
/// restricted to `[1 - delta, 1 + delta]`.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SizeJitterParams {
    pub sigma: f64,
    pub delta: f64,
}

impl Default for SizeJitterParams {
    fn default() -> Self {
        SizeJitterParams {
            sigma: 0.1,
            delta: 0.2,
        }
    }
}

/// Knobs of the placement sampler.
///
/// Each scene draws a precision `s = u^offset_power` with `u ~ U(0, 1)` and
/// shrinks every block-on-block offset by `s`, so that a power of 0 gives the
/// plain uniform-overlap sampler. Larger powers favour neatly stacked towers,
/// which keeps tall groups from being almost always unstable.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamplerParams {
    pub jitter: SizeJitterParams,
    pub offset_power: f64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        SamplerParams {
            jitter: SizeJitterParams::default(),
            offset_power: DEFAULT_OFFSET_POWER,
        }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<(), SceneError> {
        self.jitter.validate()?;
        if !(self.offset_power >= 0.0 && self.offset_power.is_finite()) {
            return Err(SceneError::InvalidOffsetPower(self.offset_power));
        }
        Ok(())
    }
}

impl SizeJitterParams {
    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.sigma > 0.0 && self.delta > 0.0 && self.delta < 1.0) {
            return Err(SceneError::InvalidJitter {
                sigma: self.sigma,
                delta: self.delta,
            });
        }
        Ok(())
    }

    /// One truncated-normal scale factor, by rejection.
    pub fn sample_factor<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // sigma > 0 is checked by `validate`; Normal::new only fails on non-finite sigma.
        let normal = Normal::new(1.0, self.sigma).expect("finite sigma");
        loop {
            let f: f64 = normal.sample(rng);
            if (f - 1.0).abs() <= self.delta {
                return f;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SceneParams {
    pub group: GroupTag,
    pub seed: u64,
}

impl SceneParams {
    pub fn new(group: GroupTag, seed: u64) -> Self {
        SceneParams { group, seed }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Block {
    pub dims: BlockDims,
    pub position: Vec3,
    pub orientation: Quat,
}

impl Block {
    pub fn axis_aligned(dims: BlockDims, position: Vec3) -> Self {
        Block {
            dims,
            position,
            orientation: Quat::IDENTITY,
        }
    }

    pub fn oriented_box(&self) -> OrientedBox {
        OrientedBox::new(self.position, self.orientation, self.dims.half_extents)
    }

    /// World-space axis-aligned bounds `(min, max)`.
    pub fn aabb(&self) -> (Vec3, Vec3) {
        self.oriented_box().aabb()
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scene {
    pub id: String,
    pub params: SceneParams,
    pub blocks: Vec<Block>,
}

impl Scene {
    pub fn group(&self) -> GroupTag {
        self.params.group
    }

    /// World-space bounds of all blocks, or `None` for an empty scene.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let mut it = self.blocks.iter().map(Block::aabb);
        let first = it.next()?;
        Some(it.fold(first, |(lo, hi), (a, b)| (lo.min(a), hi.max(b))))
    }

    /// Mirror across the `x = 0` plane (image-horizontal flip).
    pub fn mirrored_x(&self) -> Scene {
        let mut out = self.clone();
        for b in &mut out.blocks {
            b.position.x = -b.position.x;
            // Reflection conjugates the rotation: (w, x, y, z) -> (w, x, -y, -z).
            let q = b.orientation;
            b.orientation = Quat::new(q.w, q.x, -q.y, -q.z);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("block {block}: no valid placement after {attempts} attempts")]
    PlacementExhausted { block: usize, attempts: usize },
    #[error("balance unreachable after {tried} candidates ({stable} stable, {unstable} unstable accepted)")]
    BalanceUnreachable {
        tried: usize,
        stable: usize,
        unstable: usize,
    },
    #[error("group size must be at least 2, got {0}")]
    CountTooSmall(usize),
    #[error("block count {0} is not one of 4, 6, 10, 14")]
    InvalidBlockCount(u32),
    #[error("invalid group tag {0:?}")]
    InvalidGroupTag(String),
    #[error("invalid size jitter (sigma={sigma}, delta={delta})")]
    InvalidJitter { sigma: f64, delta: f64 },
    #[error("offset power must be finite and non-negative, got {0}")]
    InvalidOffsetPower(f64),
}

/// Constraint violations reported by [`validate_scene`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    InvalidDims(usize),
    NonUnitOrientation(usize),
    BelowGround(usize),
    Interpenetration(usize, usize),
    UnsupportedBlock(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InvalidDims(i) => write!(f, "block {i}: non-positive extent"),
            Violation::NonUnitOrientation(i) => write!(f, "block {i}: orientation not unit"),
            Violation::BelowGround(i) => write!(f, "block {i}: below ground plane"),
            Violation::Interpenetration(i, j) => write!(f, "blocks {i} and {j} interpenetrate"),
            Violation::UnsupportedBlock(i) => write!(f, "block {i}: no supporting face"),
        }
    }
}

/// Draw block dimensions in canonical axis order (short, short, long).
///
/// `Uni` always yields the canonical block. `NonUni` scales two of the three
/// extents (a uniformly chosen pair) by truncated-normal factors.
pub fn sample_block_dims<R: Rng + ?Sized>(
    size_mode: SizeMode,
    jitter: &SizeJitterParams,
    rng: &mut R,
) -> BlockDims {
    match size_mode {
        SizeMode::Uni => BlockDims::canonical(),
        SizeMode::NonUni => {
            let keep = rng.random_range(0..3usize);
            jittered_dims(jitter, keep, rng)
        }
    }
}

/// Canonical dims with every axis except `keep` scaled.
fn jittered_dims<R: Rng + ?Sized>(
    jitter: &SizeJitterParams,
    keep: usize,
    rng: &mut R,
) -> BlockDims {
    let mut h = CANONICAL_HALF_EXTENTS;
    for (axis, e) in h.iter_mut().enumerate() {
        if axis != keep {
            *e *= jitter.sample_factor(rng);
        }
    }
    BlockDims::new(h[0], h[1], h[2])
}

/// Axis-aligned rectangle in the horizontal plane.
#[derive(Clone, Copy, Debug)]
struct Rect {
    min: [f64; 2],
    max: [f64; 2],
}

impl Rect {
    fn overlap_area(&self, o: &Rect) -> f64 {
        let w = (self.max[0].min(o.max[0]) - self.min[0].max(o.min[0])).max(0.0);
        let h = (self.max[1].min(o.max[1]) - self.min[1].max(o.min[1])).max(0.0);
        w * h
    }

    fn area(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1])
    }
}

fn footprint(min: Vec3, max: Vec3) -> Rect {
    Rect {
        min: [min.x, min.y],
        max: [max.x, max.y],
    }
}

/// A face new blocks can rest on.
#[derive(Clone, Copy, Debug)]
struct SupportFace {
    center: [f64; 2],
    half: [f64; 2],
    top: f64,
}

fn exposed_faces(placed: &[(Vec3, Vec3)]) -> Vec<SupportFace> {
    let mut faces = Vec::with_capacity(placed.len() + 1);
    faces.push(SupportFace {
        center: [0.0, 0.0],
        half: [GROUND_HALF_SIDE, GROUND_HALF_SIDE],
        top: 0.0,
    });
    for (i, &(lo, hi)) in placed.iter().enumerate() {
        let top = footprint(lo, hi);
        let covered: f64 = placed
            .iter()
            .enumerate()
            .filter(|&(j, &(l, _))| j != i && (l.z - hi.z).abs() <= GEOMETRY_TOLERANCE)
            .map(|(_, &(l, h))| top.overlap_area(&footprint(l, h)))
            .sum();
        if top.area() - covered > 1e-9 {
            faces.push(SupportFace {
                center: [(lo.x + hi.x) * 0.5, (lo.y + hi.y) * 0.5],
                half: [(hi.x - lo.x) * 0.5, (hi.y - lo.y) * 0.5],
                top: hi.z,
            });
        }
    }
    faces
}

/// Uniform sample from the open interval `(lo, hi)`.
fn open_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    loop {
        let u: f64 = rng.random();
        let x = lo + u * (hi - lo);
        if x > lo && x < hi {
            return x;
        }
    }
}

fn boxes_overlap(a: &(Vec3, Vec3), b: &(Vec3, Vec3)) -> bool {
    let eps = 1e-9;
    (0..3).all(|k| a.0[k] < b.1[k] - eps && b.0[k] < a.1[k] - eps)
}

/// World half extents of a block with dims `d` (canonical order) for each
/// long-axis choice: upright, lying along width, lying along depth.
fn oriented_half_extents(d: &BlockDims, orientation: usize) -> Vec3 {
    let h = d.half_extents;
    match orientation {
        0 => Vec3::new(h.x, h.y, h.z),
        1 => Vec3::new(h.z, h.x, h.y),
        _ => Vec3::new(h.x, h.z, h.y),
    }
}

/// Build one tower for `params`. Deterministic in `params.seed`.
pub fn generate_scene(params: &SceneParams, sampler: &SamplerParams) -> Result<Scene, SceneError> {
    sampler.validate()?;
    let jitter = &sampler.jitter;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let precision = if sampler.offset_power == 0.0 {
        1.0
    } else {
        libm::pow(rng.random::<f64>(), sampler.offset_power)
    };
    let group = params.group;
    let two_d = group.depth == DepthMode::TwoD;
    let mut placed: Vec<(Vec3, Vec3)> = Vec::with_capacity(group.num_blocks as usize);
    let mut blocks = Vec::with_capacity(group.num_blocks as usize);

    for index in 0..group.num_blocks as usize {
        let dims = match (two_d, group.size) {
            (_, SizeMode::Uni) => BlockDims::canonical(),
            // Depth keeps a canonical short extent so every layer has the same thickness.
            (true, SizeMode::NonUni) => jittered_dims(jitter, 0, &mut rng),
            (false, SizeMode::NonUni) => sample_block_dims(SizeMode::NonUni, jitter, &mut rng),
        };
        let mut done = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let orientation = if two_d {
                rng.random_range(0..2usize)
            } else {
                rng.random_range(0..3usize)
            };
            // In 2D the kept (canonical) axis is local x, which must map to world depth.
            let half = if two_d {
                let h = dims.half_extents;
                if orientation == 0 {
                    Vec3::new(h.y, h.x, h.z)
                } else {
                    Vec3::new(h.z, h.x, h.y)
                }
            } else {
                oriented_half_extents(&dims, orientation)
            };
            let faces = exposed_faces(&placed);
            let face = faces[rng.random_range(0..faces.len())];
            let shrink = if face.top > 0.0 { precision } else { 1.0 };
            let reach_x = face.half[0] + half.x;
            let x = face.center[0] + shrink * open_uniform(&mut rng, -reach_x, reach_x);
            let y = if two_d {
                0.0
            } else {
                let reach_y = face.half[1] + half.y;
                face.center[1] + shrink * open_uniform(&mut rng, -reach_y, reach_y)
            };
            let center = Vec3::new(x, y, face.top + half.z);
            let bounds = (center - half, center + half);
            if placed.iter().any(|p| boxes_overlap(p, &bounds)) {
                continue;
            }
            placed.push(bounds);
            blocks.push(Block::axis_aligned(
                BlockDims { half_extents: half },
                center,
            ));
            done = true;
            break;
        }
        if !done {
            return Err(SceneError::PlacementExhausted {
                block: index,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }

    Ok(Scene {
        id: format!("{}-{:016x}", group, params.seed),
        params: *params,
        blocks,
    })
}

/// Check the scene invariants; an empty list means the scene is valid.
pub fn validate_scene(scene: &Scene) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = scene.blocks.len();
    let mut boxes = Vec::with_capacity(n);
    for (i, b) in scene.blocks.iter().enumerate() {
        let h = b.dims.half_extents;
        if !(h.x > 0.0 && h.y > 0.0 && h.z > 0.0) || !h.is_finite() {
            out.push(Violation::InvalidDims(i));
        }
        if (b.orientation.norm() - 1.0).abs() > 1e-9 {
            out.push(Violation::NonUnitOrientation(i));
        }
        boxes.push(b.oriented_box());
    }
    for (i, bx) in boxes.iter().enumerate() {
        if bx.aabb().0.z < -GEOMETRY_TOLERANCE {
            out.push(Violation::BelowGround(i));
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            if collide::separation(&boxes[i], &boxes[j]) < -GEOMETRY_TOLERANCE {
                out.push(Violation::Interpenetration(i, j));
            }
        }
    }
    let bounds: Vec<(Vec3, Vec3)> = boxes.iter().map(OrientedBox::aabb).collect();
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        if lo.z <= GEOMETRY_TOLERANCE {
            continue;
        }
        let fp = footprint(lo, hi);
        let supported = bounds.iter().enumerate().any(|(j, &(l, h))| {
            j != i
                && (h.z - lo.z).abs() <= GEOMETRY_TOLERANCE
                && fp.overlap_area(&footprint(l, h)) > 1e-12
        });
        if !supported {
            out.push(Violation::UnsupportedBlock(i));
        }
    }
    out
}

/// Whether [`generate_group`] rejection-samples toward balanced labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BalancePolicy {
    None,
    /// Each class must hold at least 45% of the accepted scenes.
    FiftyFifty,
}

/// Minimum share of each class under [`BalancePolicy::FiftyFifty`].
pub const MINORITY_FLOOR: f64 = 0.45;
/// Candidate budget per requested scene under balancing.
pub const BALANCE_BUDGET_FACTOR: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScene {
    pub scene: Scene,
    pub label: StabilityLabel,
}

#[derive(Debug, thiserror::Error)]
pub enum GroupError<E> {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("labeling scene {scene_id}: {source}")]
    Labeler { scene_id: String, source: E },
}

/// SplitMix64 finalizer; used to derive independent sub-seeds.
pub fn mix_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Which labels [`generate_group_with_quota`] would still accept.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Quota {
    pub stable_open: bool,
    pub unstable_open: bool,
}

impl Quota {
    pub fn accepts(&self, label: StabilityLabel) -> bool {
        match label {
            StabilityLabel::Stable => self.stable_open,
            StabilityLabel::Unstable => self.unstable_open,
        }
    }
}

/// Generate `count` labeled scenes of one group.
///
/// Candidate `k` uses seed `mix_seed(base_seed, group index, k)`; candidates
/// whose placement is exhausted are skipped. Accepted scenes are named
/// `<group>-0000`, `<group>-0001`, ... in acceptance order.
pub fn generate_group<E, F>(
    group: GroupTag,
    base_seed: u64,
    count: usize,
    balance: BalancePolicy,
    sampler: &SamplerParams,
    mut labeler: F,
) -> Result<Vec<LabeledScene>, GroupError<E>>
where
    F: FnMut(&Scene) -> Result<StabilityLabel, E>,
{
    generate_group_with_quota(group, base_seed, count, balance, sampler, |s, _| {
        labeler(s).map(Some)
    })
}

/// Like [`generate_group`], but the labeler sees which classes are still
/// open and may return `None` to drop a candidate without labeling it.
pub fn generate_group_with_quota<E, F>(
    group: GroupTag,
    base_seed: u64,
    count: usize,
    balance: BalancePolicy,
    sampler: &SamplerParams,
    mut labeler: F,
) -> Result<Vec<LabeledScene>, GroupError<E>>
where
    F: FnMut(&Scene, Quota) -> Result<Option<StabilityLabel>, E>,
{
    if count < 2 {
        return Err(SceneError::CountTooSmall(count).into());
    }
    let floor = libm::ceil(MINORITY_FLOOR * count as f64) as usize;
    let cap = match balance {
        BalancePolicy::None => count,
        BalancePolicy::FiftyFifty => count - floor,
    };
    let budget = BALANCE_BUDGET_FACTOR * count;
    let mut out: Vec<LabeledScene> = Vec::with_capacity(count);
    let (mut stable, mut unstable) = (0usize, 0usize);
    let mut tried = 0usize;
    while out.len() < count {
        if tried >= budget {
            return Err(SceneError::BalanceUnreachable {
                tried,
                stable,
                unstable,
            }
            .into());
        }
        let seed = mix_seed(base_seed, group.index() as u64, tried as u64);
        tried += 1;
        let mut scene = match generate_scene(&SceneParams::new(group, seed), sampler) {
            Ok(s) => s,
            Err(SceneError::PlacementExhausted { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let quota = Quota {
            stable_open: stable < cap,
            unstable_open: unstable < cap,
        };
        let label = labeler(&scene, quota).map_err(|source| GroupError::Labeler {
            scene_id: scene.id.clone(),
            source,
        })?;
        let Some(label) = label else {
            continue;
        };
        let slot = match label {
            StabilityLabel::Stable => &mut stable,
            StabilityLabel::Unstable => &mut unstable,
        };
        if *slot >= cap {
            continue;
        }
        *slot += 1;
        scene.id = format!("{}-{:04}", group, out.len());
        out.push(LabeledScene { scene, label });
    }
    Ok(out)
}
