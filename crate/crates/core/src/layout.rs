//! Full-context token plan: reference, video and pose tokens with 3D
//! positions, shifted pose columns, pooled rotary angles and the
//! conditioning mask.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PLAN_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_ROPE_BASE: f64 = 10000.0;
pub const DEFAULT_HEAD_DIM: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Reference,
    Video,
    Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub token_start: usize,
    pub token_count: usize,
    /// Half-open frame index range.
    pub t_range: [usize; 2],
    /// Token grid (frames, rows, columns).
    pub grid: [usize; 3],
    /// Smallest and largest row position.
    pub h_range: [f64; 2],
    /// Smallest and largest column position.
    pub w_range: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutDims {
    /// Reference grid (H, W).
    pub reference: [usize; 2],
    /// Video grid (T, H, W).
    pub video: [usize; 3],
    /// Pose grid (T, H/ratio, W/ratio); absent for plans without pose tokens.
    pub pose: Option<[usize; 3]>,
    pub shift_w: usize,
    pub ratio: usize,
}

impl LayoutDims {
    /// Video and reference share `(h, w)`, pose is pooled by `ratio` and shifted by 2W.
    pub fn standard(frames: usize, h: usize, w: usize, ratio: usize) -> Self {
        LayoutDims {
            reference: [h, w],
            video: [frames, h, w],
            pose: (ratio > 0 && h.is_multiple_of(ratio) && w.is_multiple_of(ratio))
                .then(|| [frames, h / ratio, w / ratio]),
            shift_w: 2 * w,
            ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenPlan {
    pub dims: LayoutDims,
    pub segments: Vec<Segment>,
    /// Per-token `[t, h, w]`.
    pub positions: Vec<[f64; 3]>,
    /// 1 for reference and pose tokens, 0 for video tokens.
    pub mask: Vec<bool>,
}

impl TokenPlan {
    pub fn total_tokens(&self) -> usize {
        self.positions.len()
    }

    pub fn segment(&self, kind: SegmentKind) -> Option<&Segment> {
        self.segments.iter().find(|s| s.kind == kind)
    }

    pub fn tokens_of(&self, kind: SegmentKind) -> &[[f64; 3]] {
        match self.segment(kind) {
            Some(s) => &self.positions[s.token_start..s.token_start + s.token_count],
            None => &[],
        }
    }
}

/// Mean of each run of `ratio` consecutive integer positions in `[0, len)`.
pub fn pooled_positions(len: usize, ratio: usize) -> Result<Vec<f64>> {
    if ratio == 0 || !len.is_multiple_of(ratio) {
        return Err(Error::Dimension(format!(
            "ratio {ratio} does not divide {len}"
        )));
    }
    let offset = (ratio - 1) as f64 / 2.0;
    Ok((0..len / ratio)
        .map(|i| (i * ratio) as f64 + offset)
        .collect())
}

fn push_segment(
    plan: &mut TokenPlan,
    kind: SegmentKind,
    t_values: std::ops::Range<usize>,
    hs: &[f64],
    ws: &[f64],
    mask: bool,
) {
    let start = plan.positions.len();
    for t in t_values.clone() {
        for &h in hs {
            for &w in ws {
                plan.positions.push([t as f64, h, w]);
                plan.mask.push(mask);
            }
        }
    }
    let span = |v: &[f64]| match (v.first(), v.last()) {
        (Some(a), Some(b)) => [*a, *b],
        _ => [0.0, 0.0],
    };
    plan.segments.push(Segment {
        kind,
        token_start: start,
        token_count: plan.positions.len() - start,
        t_range: [t_values.start, t_values.end],
        grid: [t_values.len(), hs.len(), ws.len()],
        h_range: span(hs),
        w_range: span(ws),
    });
}

/// Lays out reference (t = 0), video (t = 1..=T) and pose tokens (t = 1..=T,
/// pooled rows, columns shifted past the reference width by `shift_w`).
pub fn build_plan(dims: &LayoutDims) -> Result<TokenPlan> {
    let [ref_h, ref_w] = dims.reference;
    let [frames, h, w] = dims.video;
    if ref_h == 0 || ref_w == 0 || frames == 0 || h == 0 || w == 0 {
        return Err(Error::Dimension(
            "layout dimensions must be positive".into(),
        ));
    }
    if [h, w] != [ref_h, ref_w] {
        return Err(Error::Dimension(format!(
            "video grid {h}x{w} differs from reference grid {ref_h}x{ref_w}"
        )));
    }
    if dims.shift_w == 0 {
        return Err(Error::Config("shift_w must be positive".into()));
    }

    let mut plan = TokenPlan {
        dims: *dims,
        segments: Vec::new(),
        positions: Vec::new(),
        mask: Vec::new(),
    };
    let rows: Vec<f64> = (0..h).map(|i| i as f64).collect();
    let cols: Vec<f64> = (0..w).map(|i| i as f64).collect();
    push_segment(&mut plan, SegmentKind::Reference, 0..1, &rows, &cols, true);
    push_segment(
        &mut plan,
        SegmentKind::Video,
        1..frames + 1,
        &rows,
        &cols,
        false,
    );

    if let Some([pose_t, pose_h, pose_w]) = dims.pose {
        let pooled_h = pooled_positions(h, dims.ratio)?;
        let pooled_w = pooled_positions(w, dims.ratio)?;
        if pose_t != frames || pose_h != pooled_h.len() || pose_w != pooled_w.len() {
            return Err(Error::Dimension(format!(
                "pose grid {pose_t}x{pose_h}x{pose_w} does not match video {frames}x{h}x{w} at ratio {}",
                dims.ratio
            )));
        }
        let shift = (ref_w + dims.shift_w) as f64;
        let pose_cols: Vec<f64> = pooled_w.iter().map(|c| shift + c).collect();
        push_segment(
            &mut plan,
            SegmentKind::Pose,
            1..frames + 1,
            &pooled_h,
            &pose_cols,
            true,
        );
    }
    Ok(plan)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotaryParams {
    pub head_dim: usize,
    pub base: f64,
    /// Frequency pairs given to the (t, h, w) axes; sums to `head_dim / 2`.
    pub axis_split: [usize; 3],
}

impl RotaryParams {
    /// Splits `head_dim / 2` pairs as evenly as possible, remainder to t.
    pub fn for_head_dim(head_dim: usize) -> Self {
        let pairs = head_dim / 2;
        let hw = pairs / 3;
        RotaryParams {
            head_dim,
            base: DEFAULT_ROPE_BASE,
            axis_split: [pairs - 2 * hw, hw, hw],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || !self.head_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "head_dim must be positive and even, got {}",
                self.head_dim
            )));
        }
        if self.axis_split.iter().sum::<usize>() != self.head_dim / 2 {
            return Err(Error::Config(format!(
                "axis split {:?} does not sum to {}",
                self.axis_split,
                self.head_dim / 2
            )));
        }
        if !(self.base > 1.0 && self.base.is_finite()) {
            return Err(Error::Config(format!(
                "rotary base must exceed 1, got {}",
                self.base
            )));
        }
        Ok(())
    }

    /// Inverse frequencies of each axis: `base^(-2f / axis_dim)` with `axis_dim = 2 · pairs`.
    pub fn frequencies(&self) -> [Vec<f64>; 3] {
        self.axis_split.map(|pairs| {
            let axis_dim = (2 * pairs) as f64;
            (0..pairs)
                .map(|f| self.base.powf(-((2 * f) as f64) / axis_dim))
                .collect()
        })
    }
}

impl Default for RotaryParams {
    fn default() -> Self {
        RotaryParams::for_head_dim(DEFAULT_HEAD_DIM)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RotaryTable {
    pub params: RotaryParams,
    /// Row-major `[token][t freqs.., h freqs.., w freqs..]`.
    pub angles: Vec<f64>,
}

impl RotaryTable {
    pub fn row(&self, token: usize) -> &[f64] {
        let n = self.params.head_dim / 2;
        &self.angles[token * n..(token + 1) * n]
    }
}

/// Rotation angles for the given positions.
pub fn rotary_angles(positions: &[[f64; 3]], params: &RotaryParams) -> Result<RotaryTable> {
    params.validate()?;
    let freqs = params.frequencies();
    let mut angles = Vec::with_capacity(positions.len() * params.head_dim / 2);
    for pos in positions {
        for axis in 0..3 {
            angles.extend(freqs[axis].iter().map(|f| pos[axis] * f));
        }
    }
    Ok(RotaryTable {
        params: params.clone(),
        angles,
    })
}

pub fn rotary_table(plan: &TokenPlan, params: &RotaryParams) -> Result<RotaryTable> {
    rotary_angles(&plan.positions, params)
}

/// Packs bits most significant first.
pub fn pack_mask(mask: &[bool]) -> Vec<u8> {
    let mut bytes = vec![0u8; mask.len().div_ceil(8)];
    for (i, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
        bytes[i / 8] |= 0x80 >> (i % 8);
    }
    bytes
}

pub fn unpack_mask(bytes: &[u8], len: usize) -> Result<Vec<bool>> {
    if bytes.len() != len.div_ceil(8) {
        return Err(Error::Schema(format!(
            "mask has {} bytes, expected {}",
            bytes.len(),
            len.div_ceil(8)
        )));
    }
    Ok((0..len)
        .map(|i| bytes[i / 8] & (0x80 >> (i % 8)) != 0)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MaskFile {
    len: usize,
    ones: usize,
    bits_base64: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PlanFile {
    schema_version: u32,
    dims: LayoutDims,
    total_tokens: usize,
    segments: Vec<Segment>,
    positions: Vec<f64>,
    mask: MaskFile,
    rotary: RotaryParams,
}

/// Serializes the plan with its rotary parameters.
pub fn plan_to_json(plan: &TokenPlan, rotary: &RotaryParams) -> Result<String> {
    rotary.validate()?;
    let file = PlanFile {
        schema_version: PLAN_SCHEMA_VERSION,
        dims: plan.dims,
        total_tokens: plan.total_tokens(),
        segments: plan.segments.clone(),
        positions: plan.positions.iter().flatten().copied().collect(),
        mask: MaskFile {
            len: plan.mask.len(),
            ones: plan.mask.iter().filter(|&&b| b).count(),
            bits_base64: BASE64.encode(pack_mask(&plan.mask)),
        },
        rotary: rotary.clone(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn plan_from_json(text: &str) -> Result<(TokenPlan, RotaryParams)> {
    let file: PlanFile = serde_json::from_str(text)?;
    if file.schema_version != PLAN_SCHEMA_VERSION {
        return Err(Error::Schema(format!(
            "unsupported plan schema version {}",
            file.schema_version
        )));
    }
    if file.positions.len() != 3 * file.total_tokens || file.mask.len != file.total_tokens {
        return Err(Error::Schema(format!(
            "plan declares {} tokens but has {} coordinates and {} mask bits",
            file.total_tokens,
            file.positions.len(),
            file.mask.len
        )));
    }
    let bytes = BASE64
        .decode(&file.mask.bits_base64)
        .map_err(|e| Error::Schema(format!("mask is not valid base64: {e}")))?;
    let mask = unpack_mask(&bytes, file.mask.len)?;
    if mask.iter().filter(|&&b| b).count() != file.mask.ones {
        return Err(Error::Schema(
            "mask bit count disagrees with its header".into(),
        ));
    }
    let covered: usize = file.segments.iter().map(|s| s.token_count).sum();
    if covered != file.total_tokens {
        return Err(Error::Schema(format!(
            "segments cover {covered} tokens, plan has {}",
            file.total_tokens
        )));
    }
    file.rotary.validate()?;
    let plan = TokenPlan {
        dims: file.dims,
        segments: file.segments,
        positions: file
            .positions
            .chunks(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect(),
        mask,
    };
    Ok((plan, file.rotary))
}
