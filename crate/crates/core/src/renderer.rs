//! Depth-correct cylinder rendering of skeletons.
//!
//! Bones become capsules around their axis segment. All capsules of a frame
//! (every subject at once) are voxelized into one occupancy grid on a
//! world-anchored lattice and each pixel ray walks that grid front to back,
//! so the nearest geometry always owns the pixel regardless of which subject
//! it belongs to.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::skeleton::{
    Bone, ChainKind, KeypointKind, Keypoints2D, PoseFrame, PoseSequence, SkeletonTopology, Vec2,
    Vec3,
};

/// Default total cell budget of a voxel grid.
pub const DEFAULT_CELL_BUDGET: u64 = 1 << 27;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderSegment {
    pub endpoint_a: Vec3,
    pub endpoint_b: Vec3,
    pub radius: f64,
    pub color: [f64; 3],
}

/// Distance from `p` to the segment `a`–`b`.
pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

fn hsv_to_rgb(hue_deg: f64, saturation: f64, value: f64) -> [f64; 3] {
    let h = hue_deg.rem_euclid(360.0) / 60.0;
    let c = value * saturation;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = value - c;
    [r + m, g + m, b + m]
}

/// Hue of each bone group before per-subject rotation.
pub fn base_hue(group: ChainKind) -> f64 {
    match group {
        ChainKind::Spine => 0.0,
        ChainKind::LeftArm => 72.0,
        ChainKind::RightArm => 144.0,
        ChainKind::LeftLeg => 216.0,
        ChainKind::RightLeg => 288.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorScheme {
    pub hue_shift_deg: f64,
    pub group_hue_deg: BTreeMap<ChainKind, f64>,
}

impl ColorScheme {
    pub fn rotated(hue_shift_deg: f64) -> Self {
        ColorScheme {
            hue_shift_deg,
            group_hue_deg: ChainKind::ALL
                .iter()
                .map(|g| (*g, (base_hue(*g) + hue_shift_deg).rem_euclid(360.0)))
                .collect(),
        }
    }

    pub fn color(&self, group: ChainKind) -> [f64; 3] {
        let hue = self
            .group_hue_deg
            .get(&group)
            .copied()
            .unwrap_or_else(|| base_hue(group));
        hsv_to_rgb(hue, 0.85, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderStyle {
    /// Bone radius in millimeters.
    pub bone_radius: f64,
    pub per_subject_palette: BTreeMap<String, ColorScheme>,
    pub overlay_point_radius: f64,
    pub overlay_line_width: f64,
    /// Output size (width, height) in pixels before downsampling.
    pub resolution: (u32, u32),
    pub downsample_ratio: u32,
    /// Voxel edge in millimeters; `None` means a quarter of the bone radius.
    pub cell_size: Option<f64>,
    pub cell_budget: u64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            bone_radius: 25.0,
            per_subject_palette: BTreeMap::new(),
            overlay_point_radius: 3.0,
            overlay_line_width: 2.0,
            resolution: (512, 512),
            downsample_ratio: 1,
            cell_size: None,
            cell_budget: DEFAULT_CELL_BUDGET,
        }
    }
}

impl RenderStyle {
    /// Assigns palettes by sorted subject id; subject k of K is rotated by 360k/K degrees.
    pub fn with_subjects<'a>(mut self, ids: impl IntoIterator<Item = &'a str>) -> Self {
        let ids: BTreeSet<&str> = ids.into_iter().collect();
        let count = ids.len().max(1) as f64;
        self.per_subject_palette = ids
            .into_iter()
            .enumerate()
            .map(|(k, id)| {
                (
                    id.to_string(),
                    ColorScheme::rotated(360.0 * k as f64 / count),
                )
            })
            .collect();
        self
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size.unwrap_or(self.bone_radius / 4.0)
    }

    pub fn scheme(&self, subject_id: &str) -> ColorScheme {
        self.per_subject_palette
            .get(subject_id)
            .cloned()
            .unwrap_or_else(|| ColorScheme::rotated(0.0))
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.resolution;
        if !(self.bone_radius > 0.0 && self.bone_radius.is_finite()) {
            return Err(Error::Config(format!(
                "bone radius must be positive, got {}",
                self.bone_radius
            )));
        }
        if w == 0 || h == 0 {
            return Err(Error::Config("resolution must be nonzero".into()));
        }
        if !matches!(self.downsample_ratio, 1 | 2) {
            return Err(Error::Config(format!(
                "downsample ratio must be 1 or 2, got {}",
                self.downsample_ratio
            )));
        }
        if w % self.downsample_ratio != 0 || h % self.downsample_ratio != 0 {
            return Err(Error::Dimension(format!(
                "{w}x{h} is not divisible by ratio {}",
                self.downsample_ratio
            )));
        }
        if !(self.cell_size() > 0.0) || self.cell_budget == 0 {
            return Err(Error::Config(
                "cell size and budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One capsule per bone with both endpoints valid, colored by bone group.
pub fn skeleton_to_cylinders(
    frame: &PoseFrame,
    topology: &SkeletonTopology,
    style: &RenderStyle,
    subject_id: &str,
) -> Vec<CylinderSegment> {
    let scheme = style.scheme(subject_id);
    topology
        .bones
        .iter()
        .filter_map(|&bone: &Bone| {
            let a = frame.joint(bone.parent)?;
            let b = frame.joint(bone.child)?;
            if a == b {
                return None;
            }
            Some(CylinderSegment {
                endpoint_a: a,
                endpoint_b: b,
                radius: style.bone_radius,
                color: scheme.color(topology.bone_group(bone)),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridConfig {
    pub cell_size: f64,
    pub cell_budget: u64,
}

impl GridConfig {
    pub fn from_style(style: &RenderStyle) -> Self {
        GridConfig {
            cell_size: style.cell_size(),
            cell_budget: style.cell_budget,
        }
    }
}

const BRICK: usize = 8;
const BRICK_CELLS: usize = BRICK * BRICK * BRICK;
const NO_BRICK: u32 = u32::MAX;

/// Sparse occupancy grid on the lattice of cubes `[k·c, (k+1)·c)`.
///
/// Each occupied cell records the id of the capsule whose axis is nearest to
/// the cell center; ties go to the lower id.
#[derive(Clone, Debug)]
pub struct VoxelGrid {
    pub origin: Vec3,
    pub cell_size: f64,
    pub dims: [usize; 3],
    lattice_min: [i64; 3],
    brick_dims: [usize; 3],
    brick_index: Vec<u32>,
    bricks: Vec<[u16; BRICK_CELLS]>,
    colors: Vec<[u8; 3]>,
}

pub fn color_to_bytes(color: [f64; 3]) -> [u8; 3] {
    color.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)
}

impl VoxelGrid {
    fn empty(cell_size: f64) -> Self {
        VoxelGrid {
            origin: Vec3::zeros(),
            cell_size,
            dims: [0; 3],
            lattice_min: [0; 3],
            brick_dims: [0; 3],
            brick_index: Vec::new(),
            bricks: Vec::new(),
            colors: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.dims.contains(&0)
    }

    pub fn total_cells(&self) -> u64 {
        self.dims.iter().map(|&d| d as u64).product()
    }

    pub fn lattice_min(&self) -> [i64; 3] {
        self.lattice_min
    }

    /// Center of the cell at grid index `(i, j, k)`.
    pub fn cell_center(&self, index: [usize; 3]) -> Vec3 {
        Vec3::from_fn(|a, _| {
            ((self.lattice_min[a] + index[a] as i64) as f64 + 0.5) * self.cell_size
        })
    }

    fn slot(&self, index: [usize; 3]) -> (usize, usize) {
        let b = [index[0] / BRICK, index[1] / BRICK, index[2] / BRICK];
        let brick = (b[2] * self.brick_dims[1] + b[1]) * self.brick_dims[0] + b[0];
        let local = ((index[2] % BRICK) * BRICK + index[1] % BRICK) * BRICK + index[0] % BRICK;
        (brick, local)
    }

    /// Id of the capsule owning the cell, if occupied.
    pub fn occupant(&self, index: [usize; 3]) -> Option<usize> {
        if (0..3).any(|a| index[a] >= self.dims[a]) {
            return None;
        }
        let (brick, local) = self.slot(index);
        let slot = self.brick_index[brick];
        if slot == NO_BRICK {
            return None;
        }
        match self.bricks[slot as usize][local] {
            0 => None,
            id => Some(id as usize - 1),
        }
    }

    pub fn color_of(&self, id: usize) -> [u8; 3] {
        self.colors[id]
    }

    fn occupant_lattice(&self, cell: [i64; 3]) -> Option<usize> {
        let mut index = [0usize; 3];
        for a in 0..3 {
            let i = cell[a] - self.lattice_min[a];
            if i < 0 {
                return None;
            }
            index[a] = i as usize;
        }
        self.occupant(index)
    }

    pub fn occupied_count(&self) -> usize {
        self.bricks
            .iter()
            .map(|b| b.iter().filter(|&&v| v != 0).count())
            .sum()
    }
}

fn lattice_bounds(cylinders: &[CylinderSegment], cell: f64) -> ([i64; 3], [i64; 3]) {
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for c in cylinders {
        for a in 0..3 {
            let min = c.endpoint_a[a].min(c.endpoint_b[a]) - c.radius;
            let max = c.endpoint_a[a].max(c.endpoint_b[a]) + c.radius;
            lo[a] = lo[a].min((min / cell).floor() as i64);
            hi[a] = hi[a].max((max / cell).floor() as i64);
        }
    }
    (lo, hi)
}

fn cell_count(lo: [i64; 3], hi: [i64; 3]) -> u64 {
    (0..3).map(|a| (hi[a] - lo[a] + 1) as u64).product()
}

/// Marks every cell whose center lies within a capsule radius of its axis.
///
/// The cell size is coarsened by ×1.25 steps until the grid fits the budget.
pub fn voxelize(cylinders: &[CylinderSegment], config: &GridConfig) -> Result<VoxelGrid> {
    if !(config.cell_size > 0.0 && config.cell_size.is_finite()) {
        return Err(Error::Config(format!(
            "invalid cell size {}",
            config.cell_size
        )));
    }
    if cylinders.is_empty() {
        return Ok(VoxelGrid::empty(config.cell_size));
    }
    if cylinders.len() >= u16::MAX as usize {
        return Err(Error::Config(format!(
            "{} cylinders exceed the per-grid limit",
            cylinders.len()
        )));
    }
    for c in cylinders {
        let finite = c
            .endpoint_a
            .iter()
            .chain(c.endpoint_b.iter())
            .all(|v| v.is_finite());
        if !finite || !(c.radius > 0.0 && c.radius.is_finite()) {
            return Err(Error::Config(
                "cylinder with non-finite endpoints or radius".into(),
            ));
        }
    }

    let mut cell = config.cell_size;
    let (mut lo, mut hi) = lattice_bounds(cylinders, cell);
    while cell_count(lo, hi) > config.cell_budget {
        cell *= 1.25;
        (lo, hi) = lattice_bounds(cylinders, cell);
    }
    let dims = [0, 1, 2].map(|a| (hi[a] - lo[a] + 1) as usize);
    let brick_dims = dims.map(|d| d.div_ceil(BRICK));
    let mut grid = VoxelGrid {
        origin: Vec3::new(
            lo[0] as f64 * cell,
            lo[1] as f64 * cell,
            lo[2] as f64 * cell,
        ),
        cell_size: cell,
        dims,
        lattice_min: lo,
        brick_dims,
        brick_index: vec![NO_BRICK; brick_dims.iter().product()],
        bricks: Vec::new(),
        colors: cylinders.iter().map(|c| color_to_bytes(c.color)).collect(),
    };
    let mut distances: Vec<[f64; BRICK_CELLS]> = Vec::new();

    for (id, cyl) in cylinders.iter().enumerate() {
        let (clo, chi) = lattice_bounds(std::slice::from_ref(cyl), cell);
        let r = cyl.radius;
        for z in clo[2]..=chi[2] {
            for y in clo[1]..=chi[1] {
                for x in clo[0]..=chi[0] {
                    let center = Vec3::new(
                        (x as f64 + 0.5) * cell,
                        (y as f64 + 0.5) * cell,
                        (z as f64 + 0.5) * cell,
                    );
                    let d = point_segment_distance(&center, &cyl.endpoint_a, &cyl.endpoint_b);
                    if d > r {
                        continue;
                    }
                    let index = [
                        (x - lo[0]) as usize,
                        (y - lo[1]) as usize,
                        (z - lo[2]) as usize,
                    ];
                    let (brick, local) = grid.slot(index);
                    let slot = match grid.brick_index[brick] {
                        NO_BRICK => {
                            grid.brick_index[brick] = grid.bricks.len() as u32;
                            grid.bricks.push([0; BRICK_CELLS]);
                            distances.push([f64::INFINITY; BRICK_CELLS]);
                            grid.bricks.len() - 1
                        }
                        s => s as usize,
                    };
                    if d < distances[slot][local] {
                        distances[slot][local] = d;
                        grid.bricks[slot][local] = (id + 1) as u16;
                    }
                }
            }
        }
    }
    Ok(grid)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RasterFrame {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB, 3 bytes per pixel.
    pub rgb: Vec<u8>,
    /// Camera-space z of the visible surface; infinity where empty.
    pub depth: Vec<f32>,
}

impl RasterFrame {
    pub fn blank(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        RasterFrame {
            width,
            height,
            rgb: vec![0; 3 * n],
            depth: vec![f32::INFINITY; n],
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn depth_at(&self, x: u32, y: u32) -> f32 {
        self.depth[y as usize * self.width as usize + x as usize]
    }

    pub fn flip_horizontal(&self) -> RasterFrame {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut out = RasterFrame::blank(self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                let (src, dst) = (y * w + x, y * w + (w - 1 - x));
                out.rgb[3 * dst..3 * dst + 3].copy_from_slice(&self.rgb[3 * src..3 * src + 3]);
                out.depth[dst] = self.depth[src];
            }
        }
        out
    }
}

/// Slab test against the grid box; returns the parametric entry and exit.
fn clip_ray(grid: &VoxelGrid, dir: &Vec3) -> Option<(f64, f64)> {
    let mut t0: f64 = 0.0;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let lo = grid.lattice_min[a] as f64 * grid.cell_size;
        let hi = (grid.lattice_min[a] + grid.dims[a] as i64) as f64 * grid.cell_size;
        if dir[a] == 0.0 {
            if !(lo <= 0.0 && 0.0 < hi) {
                return None;
            }
            continue;
        }
        let (ta, tb) = (lo / dir[a], hi / dir[a]);
        t0 = t0.max(ta.min(tb));
        t1 = t1.min(ta.max(tb));
    }
    (t0 < t1).then_some((t0, t1))
}

/// Walks the lattice cells pierced by the ray from the camera center along
/// `dir`; returns the first occupant and the ray parameter where it starts.
fn march(grid: &VoxelGrid, dir: &Vec3) -> Option<(usize, f64)> {
    let (t_enter, t_exit) = clip_ray(grid, dir)?;
    let c = grid.cell_size;
    let mut cell = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let x = t_enter * dir[a] / c;
        let lo = grid.lattice_min[a];
        let hi = lo + grid.dims[a] as i64 - 1;
        // a point on a cell boundary belongs to the cell the ray is entering
        cell[a] = if dir[a] > 0.0 {
            x.floor() as i64
        } else if dir[a] < 0.0 {
            x.ceil() as i64 - 1
        } else {
            x.floor() as i64
        }
        .clamp(lo, hi);
        if dir[a] > 0.0 {
            step[a] = 1;
            t_max[a] = (cell[a] + 1) as f64 * c / dir[a];
            t_delta[a] = c / dir[a];
        } else if dir[a] < 0.0 {
            step[a] = -1;
            t_max[a] = cell[a] as f64 * c / dir[a];
            t_delta[a] = -c / dir[a];
        }
    }
    let mut t = t_enter;
    loop {
        if let Some(id) = grid.occupant_lattice(cell) {
            return Some((id, t));
        }
        let axis = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        t = t_max[axis];
        if t > t_exit {
            return None;
        }
        cell[axis] += step[axis];
        let lo = grid.lattice_min[axis];
        if cell[axis] < lo || cell[axis] >= lo + grid.dims[axis] as i64 {
            return None;
        }
        t_max[axis] += t_delta[axis];
    }
}

/// Casts one ray per pixel center through the grid; the first occupied cell
/// sets color and depth.
pub fn raymarch(grid: &VoxelGrid, cam: &CameraModel, style: &RenderStyle) -> Result<RasterFrame> {
    let (width, height) = style.resolution;
    let mut frame = RasterFrame::blank(width, height);
    if grid.is_empty() {
        return Ok(frame);
    }
    if !cam.is_valid() {
        return Err(Error::Config(
            "camera matrix is not finite and nonsingular".into(),
        ));
    }
    let inverse: Matrix3<f64> = cam.inverse_matrix()?;
    let w = width as usize;
    frame
        .rgb
        .par_chunks_mut(3 * w)
        .zip(frame.depth.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (rgb_row, depth_row))| {
            for x in 0..w {
                let dir = cam.ray_direction(&inverse, Vec2::new(x as f64 + 0.5, y as f64 + 0.5));
                if let Some((id, t)) = march(grid, &dir) {
                    rgb_row[3 * x..3 * x + 3].copy_from_slice(&grid.color_of(id));
                    depth_row[x] = (t * dir.z) as f32;
                }
            }
        });
    Ok(frame)
}

/// Voxelizes and ray-marches one set of cylinders.
pub fn render_cylinders(
    cylinders: &[CylinderSegment],
    cam: &CameraModel,
    style: &RenderStyle,
) -> Result<RasterFrame> {
    let grid = voxelize(cylinders, &GridConfig::from_style(style))?;
    raymarch(&grid, cam, style)
}

/// Renders all subjects frame by frame into shared grids, so occlusion
/// between subjects follows depth. Subjects are ordered by id, which makes
/// the output independent of the input order.
pub fn render_sequence(
    subjects: &[PoseSequence],
    cam: &CameraModel,
    topology: &SkeletonTopology,
    style: &RenderStyle,
) -> Result<Vec<RasterFrame>> {
    style.validate()?;
    let Some(first) = subjects.first() else {
        return Ok(Vec::new());
    };
    let frames = first.len();
    for s in subjects {
        s.check_against(topology)?;
        if s.len() != frames {
            return Err(Error::Dimension(format!(
                "subject {} has {} frames, subject {} has {frames}",
                s.subject_id,
                s.len(),
                first.subject_id
            )));
        }
    }
    let mut ordered: Vec<&PoseSequence> = subjects.iter().collect();
    ordered.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    if ordered
        .windows(2)
        .any(|w| w[0].subject_id == w[1].subject_id)
    {
        return Err(Error::Config("subject ids must be unique".into()));
    }
    (0..frames)
        .into_par_iter()
        .map(|t| {
            let cylinders: Vec<CylinderSegment> = ordered
                .iter()
                .flat_map(|s| skeleton_to_cylinders(&s.frames[t], topology, style, &s.subject_id))
                .collect();
            render_cylinders(&cylinders, cam, style)
        })
        .collect()
}

/// Standard 21-point hand connections.
pub const HAND_EDGES: [(usize, usize); 20] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 4),
    (0, 5),
    (5, 6),
    (6, 7),
    (7, 8),
    (0, 9),
    (9, 10),
    (10, 11),
    (11, 12),
    (0, 13),
    (13, 14),
    (14, 15),
    (15, 16),
    (0, 17),
    (17, 18),
    (18, 19),
    (19, 20),
];

const HAND_POINT_COLOR: [u8; 3] = [0, 0, 255];
const FACE_POINT_COLOR: [u8; 3] = [255, 255, 255];

fn point_to_segment_2d(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// Paints pixels whose centers lie within `reach` of the segment `a`–`b`
/// (a disk when `a == b`), clipped to the frame.
fn paint_within(frame: &mut RasterFrame, a: Vec2, b: Vec2, reach: f64, color: [u8; 3]) {
    let (w, h) = (frame.width as f64, frame.height as f64);
    let x0 = (a.x.min(b.x) - reach - 0.5).floor().max(0.0);
    let x1 = (a.x.max(b.x) + reach - 0.5).ceil().min(w - 1.0);
    let y0 = (a.y.min(b.y) - reach - 0.5).floor().max(0.0);
    let y1 = (a.y.max(b.y) + reach - 0.5).ceil().min(h - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return;
    }
    for y in y0 as u32..=y1 as u32 {
        for x in x0 as u32..=x1 as u32 {
            let center = Vec2::new(x as f64 + 0.5, y as f64 + 0.5);
            if point_to_segment_2d(center, a, b) <= reach {
                let i = y as usize * frame.width as usize + x as usize;
                frame.rgb[3 * i..3 * i + 3].copy_from_slice(&color);
                frame.depth[i] = 0.0;
            }
        }
    }
}

fn edge_color(index: usize, count: usize) -> [u8; 3] {
    color_to_bytes(hsv_to_rgb(360.0 * index as f64 / count as f64, 1.0, 1.0))
}

/// Draws hand and face keypoints on top of the raster.
///
/// Overlay pixels carry no scene depth; they are stored at depth 0 so they
/// stay in front. Body keypoints are not drawn (the body is rendered in 3D).
pub fn draw_overlays(
    frame: &RasterFrame,
    overlays: &[Keypoints2D],
    style: &RenderStyle,
) -> RasterFrame {
    let mut out = frame.clone();
    let half_width = style.overlay_line_width / 2.0;
    for group in overlays {
        match group.kind {
            KeypointKind::LeftHand | KeypointKind::RightHand => {
                for (e, &(i, j)) in HAND_EDGES.iter().enumerate() {
                    if let (Some(a), Some(b)) = (group.point(i), group.point(j)) {
                        paint_within(&mut out, a, b, half_width, edge_color(e, HAND_EDGES.len()));
                    }
                }
                for (_, p) in group.iter_valid() {
                    paint_within(&mut out, p, p, style.overlay_point_radius, HAND_POINT_COLOR);
                }
            }
            KeypointKind::Face => {
                for (_, p) in group.iter_valid() {
                    paint_within(&mut out, p, p, style.overlay_point_radius, FACE_POINT_COLOR);
                }
            }
            KeypointKind::Body => {}
        }
    }
    out
}

/// Block-averages color (rounded half up) and takes the block minimum depth.
pub fn downsample(frame: &RasterFrame, ratio: u32) -> Result<RasterFrame> {
    match ratio {
        1 => Ok(frame.clone()),
        2 => {
            if !frame.width.is_multiple_of(2) || !frame.height.is_multiple_of(2) {
                return Err(Error::Dimension(format!(
                    "{}x{} is not divisible by 2",
                    frame.width, frame.height
                )));
            }
            let (w, h) = (frame.width / 2, frame.height / 2);
            let mut out = RasterFrame::blank(w, h);
            let src_w = frame.width as usize;
            for y in 0..h as usize {
                for x in 0..w as usize {
                    let block = [
                        2 * y * src_w + 2 * x,
                        2 * y * src_w + 2 * x + 1,
                        (2 * y + 1) * src_w + 2 * x,
                        (2 * y + 1) * src_w + 2 * x + 1,
                    ];
                    let dst = y * w as usize + x;
                    for ch in 0..3 {
                        let sum: u32 = block.iter().map(|&i| frame.rgb[3 * i + ch] as u32).sum();
                        out.rgb[3 * dst + ch] = ((sum + 2) / 4) as u8;
                    }
                    out.depth[dst] = block
                        .iter()
                        .map(|&i| frame.depth[i])
                        .fold(f32::INFINITY, f32::min);
                }
            }
            Ok(out)
        }
        r => Err(Error::Config(format!(
            "downsample ratio must be 1 or 2, got {r}"
        ))),
    }
}

/// 8-bit RGB PNG bytes.
pub fn encode_png_rgb(frame: &RasterFrame) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut bytes, frame.width, frame.height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(&frame.rgb)?;
    }
    Ok(bytes)
}

/// 16-bit grayscale PNG of depth in millimeters; 0 marks no depth.
pub fn encode_png_depth(frame: &RasterFrame) -> Result<Vec<u8>> {
    let mut data = Vec::with_capacity(frame.depth.len() * 2);
    for &d in &frame.depth {
        let v: u16 = if d.is_finite() && d > 0.0 {
            d.round().clamp(1.0, u16::MAX as f32) as u16
        } else {
            0
        };
        data.extend_from_slice(&v.to_be_bytes());
    }
    let mut bytes = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut bytes, frame.width, frame.height);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Sixteen);
        let mut writer = encoder.write_header()?;
        writer.write_image_data(&data)?;
    }
    Ok(bytes)
}
