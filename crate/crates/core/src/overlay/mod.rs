//! Text overlays: rasterization, per-frame occlusion regions with leftward
//! drift, and integer alpha blending.
//!
//! A BSC placed at `(u, v)` occupies, in frame `t`, the glyph mask translated to
//! `(u - t, v)`. Inside the region a pixel becomes
//! `(p * alpha + x * (255 - alpha)) / 255` (floor); outside it is untouched.

mod font;

use std::path::PathBuf;

use thiserror::Error;

use crate::tensor_io::VideoClip;

pub use font::{rasterize, FontAtlas, Glyph, GlyphMask, DEFAULT_FONT_NAME};

pub const ALPHA_MIN: u8 = 127;
pub const ALPHA_MAX: u8 = 255;
pub const DEFAULT_COLOR: u8 = 255;

#[derive(Debug, Error)]
pub enum OverlayError {
    #[error("text is empty")]
    EmptyText,
    #[error("font height must be at least 1")]
    ZeroHeight,
    #[error("character {0:?} is not in the font atlas")]
    UnsupportedChar(char),
    #[error("atlas parse error at line {line}: {message}")]
    AtlasParse { line: usize, message: String },
    #[error("atlas does not cover printable ASCII (missing {0:?})")]
    MissingAscii(char),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{placements} placements but {glyphs} glyph masks")]
    LengthMismatch { placements: usize, glyphs: usize },
    #[error("no BSCs given")]
    NoBscs,
    #[error("BSC {index}: {placement:?} outside u in [{u_min}, {u_max}], v in [0, {v_max}], alpha in [127, 255]")]
    PlacementOutOfRange {
        index: usize,
        placement: BscPlacement,
        u_min: i64,
        u_max: i64,
        v_max: i64,
    },
    #[error("BSC {index}: glyph height {glyph_height} exceeds frame height {frame_height}")]
    GlyphTooTall {
        index: usize,
        glyph_height: usize,
        frame_height: usize,
    },
    #[error("regions are for {regions:?} but clip is {clip:?}")]
    DimensionMismatch { regions: [usize; 3], clip: [usize; 3] },
    #[error("expected {expected} color bytes, got {found}")]
    ColorChannels { expected: usize, found: usize },
    #[error("expected {expected} alphas, got {found}")]
    AlphaCount { expected: usize, found: usize },
}

/// Position of a BSC in frame 0 plus its transparency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BscPlacement {
    pub u: i64,
    pub v: i64,
    pub alpha: u8,
}

impl BscPlacement {
    pub fn new(u: i64, v: i64, alpha: u8) -> Self {
        Self { u, v, alpha }
    }

    /// Checks `u in [-w, W]`, `v in [0, H - h]`, `alpha in [127, 255]`.
    pub fn is_valid(&self, glyph_width: usize, glyph_height: usize, frame_w: usize, frame_h: usize) -> bool {
        let v_max = frame_h as i64 - glyph_height as i64;
        self.u >= -(glyph_width as i64)
            && self.u <= frame_w as i64
            && self.v >= 0
            && self.v <= v_max
            && self.alpha >= ALPHA_MIN
    }
}

/// Axis-aligned, unclipped box in pixel coordinates (`left`/`top` inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelBox {
    pub left: i64,
    pub top: i64,
    pub width: i64,
    pub height: i64,
}

impl PixelBox {
    pub fn new(left: i64, top: i64, width: i64, height: i64) -> Self {
        Self {
            left,
            top,
            width,
            height,
        }
    }
    pub fn right(&self) -> i64 {
        self.left + self.width
    }
    pub fn bottom(&self) -> i64 {
        self.top + self.height
    }
    pub fn area(&self) -> i64 {
        self.width.max(0) * self.height.max(0)
    }
    pub fn translate(&self, dx: i64, dy: i64) -> Self {
        Self::new(self.left + dx, self.top + dy, self.width, self.height)
    }
    /// Whether the boxes share at least one pixel.
    pub fn intersects(&self, other: &PixelBox) -> bool {
        self.area() > 0
            && other.area() > 0
            && self.left < other.right()
            && other.left < self.right()
            && self.top < other.bottom()
            && other.top < self.bottom()
    }
}

const NO_OWNER: u16 = u16::MAX;

/// Per-frame occlusion masks plus the frame-0 box of every BSC.
///
/// Each covered pixel records the index of the BSC that owns it; where BSCs
/// overlap the lowest index wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionSet {
    frames: usize,
    height: usize,
    width: usize,
    owners: Vec<u16>,
    boxes: Vec<PixelBox>,
}

impl RegionSet {
    /// `[T, H, W]`
    pub fn dims(&self) -> [usize; 3] {
        [self.frames, self.height, self.width]
    }

    pub fn boxes(&self) -> &[PixelBox] {
        &self.boxes
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    #[inline]
    pub fn owner(&self, t: usize, row: usize, col: usize) -> Option<usize> {
        match self.owners[(t * self.height + row) * self.width + col] {
            NO_OWNER => None,
            i => Some(i as usize),
        }
    }

    #[inline]
    pub fn is_covered(&self, t: usize, row: usize, col: usize) -> bool {
        self.owner(t, row, col).is_some()
    }

    /// Boolean occlusion mask of frame `t`, row-major `H x W`.
    pub fn frame_mask(&self, t: usize) -> Vec<bool> {
        let n = self.height * self.width;
        self.owners[t * n..(t + 1) * n]
            .iter()
            .map(|&o| o != NO_OWNER)
            .collect()
    }

    pub fn frame_covered(&self, t: usize) -> usize {
        let n = self.height * self.width;
        self.owners[t * n..(t + 1) * n]
            .iter()
            .filter(|&&o| o != NO_OWNER)
            .count()
    }

    /// Total occluded pixels summed over all frames.
    pub fn covered(&self) -> usize {
        self.owners.iter().filter(|&&o| o != NO_OWNER).count()
    }

    pub(crate) fn owners(&self) -> &[u16] {
        &self.owners
    }
}

/// Occlusion regions of `placements` over a `T x H x W` clip.
pub fn regions_for(
    placements: &[BscPlacement],
    glyphs: &[GlyphMask],
    frames: usize,
    height: usize,
    width: usize,
) -> Result<RegionSet, OverlayError> {
    if placements.len() != glyphs.len() {
        return Err(OverlayError::LengthMismatch {
            placements: placements.len(),
            glyphs: glyphs.len(),
        });
    }
    if placements.is_empty() {
        return Err(OverlayError::NoBscs);
    }
    assert!(placements.len() < NO_OWNER as usize, "too many BSCs");

    let mut owners = vec![NO_OWNER; frames * height * width];
    let mut boxes = Vec::with_capacity(placements.len());
    for (index, (p, g)) in placements.iter().zip(glyphs).enumerate() {
        if g.height() > height {
            return Err(OverlayError::GlyphTooTall {
                index,
                glyph_height: g.height(),
                frame_height: height,
            });
        }
        if !p.is_valid(g.width(), g.height(), width, height) {
            return Err(OverlayError::PlacementOutOfRange {
                index,
                placement: *p,
                u_min: -(g.width() as i64),
                u_max: width as i64,
                v_max: (height - g.height()) as i64,
            });
        }
        boxes.push(PixelBox::new(p.u, p.v, g.width() as i64, g.height() as i64));

        let gw = g.width() as i64;
        for t in 0..frames {
            let left = p.u - t as i64;
            // visible glyph columns [c0, c1)
            let c0 = (-left).clamp(0, gw);
            let c1 = (width as i64 - left).clamp(0, gw);
            if c0 >= c1 {
                continue;
            }
            for r in 0..g.height() {
                let row = p.v as usize + r;
                let base = (t * height + row) * width;
                for c in c0..c1 {
                    if g.get(r, c as usize) {
                        let slot = &mut owners[base + (left + c) as usize];
                        if *slot == NO_OWNER {
                            *slot = index as u16;
                        }
                    }
                }
            }
        }
    }
    Ok(RegionSet {
        frames,
        height,
        width,
        owners,
        boxes,
    })
}

/// `floor((p * alpha + x * (255 - alpha)) / 255)`
#[inline]
pub fn blend_value(x: u8, p: u8, alpha: u8) -> u8 {
    let a = alpha as u32;
    ((p as u32 * a + x as u32 * (255 - a)) / 255) as u8
}

/// Alpha-blend the BSC color into every occluded pixel; returns a new clip.
pub fn blend(
    clip: &VideoClip,
    regions: &RegionSet,
    color: &[u8],
    alphas: &[u8],
) -> Result<VideoClip, OverlayError> {
    let [t, h, w, c] = clip.dims();
    if regions.dims() != [t, h, w] {
        return Err(OverlayError::DimensionMismatch {
            regions: regions.dims(),
            clip: [t, h, w],
        });
    }
    if color.len() != c {
        return Err(OverlayError::ColorChannels {
            expected: c,
            found: color.len(),
        });
    }
    if alphas.len() != regions.len() {
        return Err(OverlayError::AlphaCount {
            expected: regions.len(),
            found: alphas.len(),
        });
    }
    let mut out = clip.clone();
    let px = out.pixels_mut();
    for (i, &owner) in regions.owners().iter().enumerate() {
        if owner == NO_OWNER {
            continue;
        }
        let alpha = alphas[owner as usize];
        let base = i * c;
        for (ch, &p) in color.iter().enumerate() {
            px[base + ch] = blend_value(px[base + ch], p, alpha);
        }
    }
    Ok(out)
}
