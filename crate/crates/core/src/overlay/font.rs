//! Bitmap font atlases and nearest-neighbour text rasterization.

use std::collections::BTreeMap;
use std::path::Path;

use super::OverlayError;

const DEFAULT_ATLAS: &str = include_str!("dejavu_serif_like.fatl");
pub const DEFAULT_FONT_NAME: &str = "DejaVuSerif-like";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Glyph {
    advance: usize,
    width: usize,
    /// `glyph_height x width`, row-major.
    bitmap: Vec<bool>,
}

impl Glyph {
    pub fn advance(&self) -> usize {
        self.advance
    }
    pub fn bitmap_width(&self) -> usize {
        self.width
    }
    pub fn bitmap(&self) -> &[bool] {
        &self.bitmap
    }
}

/// A fixed-height bitmap font covering at least printable ASCII.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FontAtlas {
    name: String,
    glyph_height: usize,
    glyphs: BTreeMap<char, Glyph>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> OverlayError {
    OverlayError::AtlasParse {
        line,
        message: msg.into(),
    }
}

impl FontAtlas {
    /// The compiled-in 8x16 serif atlas.
    pub fn embedded() -> Self {
        Self::parse(DEFAULT_FONT_NAME, DEFAULT_ATLAS).expect("embedded atlas is well-formed")
    }

    /// Loads a FATL file; the atlas is named after the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, OverlayError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| OverlayError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "atlas".to_string());
        Self::parse(name, &text)
    }

    /// Resolve a font id: the embedded atlas name, or a path to a FATL file.
    pub fn by_name(name: &str) -> Result<Self, OverlayError> {
        if name == DEFAULT_FONT_NAME {
            Ok(Self::embedded())
        } else {
            Self::load(name)
        }
    }

    /// Parse the FATL text format:
    ///
    /// ```text
    /// FATL 1 <glyph_height> <charset_size>
    /// <codepoint> <advance> <bitmap_width>
    /// <glyph_height rows of '0'/'1'>
    /// ...
    /// ```
    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self, OverlayError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let (ln, header) = lines.next().ok_or_else(|| parse_err(1, "empty atlas"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "FATL" {
            return Err(parse_err(ln, "expected header `FATL 1 <height> <count>`"));
        }
        if fields[1] != "1" {
            return Err(parse_err(ln, format!("unsupported atlas version {}", fields[1])));
        }
        let glyph_height: usize = fields[2]
            .parse()
            .map_err(|_| parse_err(ln, "bad glyph height"))?;
        let count: usize = fields[3]
            .parse()
            .map_err(|_| parse_err(ln, "bad charset size"))?;
        if glyph_height == 0 {
            return Err(parse_err(ln, "glyph height must be positive"));
        }

        let mut glyphs = BTreeMap::new();
        for _ in 0..count {
            let (ln, meta) = lines
                .next()
                .ok_or_else(|| parse_err(0, "unexpected end of atlas"))?;
            let nums: Vec<usize> = meta
                .split_whitespace()
                .map(|f| f.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| parse_err(ln, "bad glyph metrics"))?;
            let [cp, advance, width] = nums[..] else {
                return Err(parse_err(ln, "expected `<codepoint> <advance> <width>`"));
            };
            let ch = char::from_u32(cp as u32)
                .ok_or_else(|| parse_err(ln, format!("invalid codepoint {cp}")))?;
            if advance < width || advance == 0 {
                return Err(parse_err(ln, "advance must be >= bitmap width and >= 1"));
            }
            let mut bitmap = Vec::with_capacity(glyph_height * width);
            for _ in 0..glyph_height {
                let (ln, row) = lines
                    .next()
                    .ok_or_else(|| parse_err(0, "unexpected end of glyph bitmap"))?;
                if row.len() != width {
                    return Err(parse_err(ln, format!("row has {} cells, expected {width}", row.len())));
                }
                for b in row.bytes() {
                    match b {
                        b'0' => bitmap.push(false),
                        b'1' => bitmap.push(true),
                        _ => return Err(parse_err(ln, "bitmap rows may only contain 0/1")),
                    }
                }
            }
            if glyphs.insert(ch, Glyph { advance, width, bitmap }).is_some() {
                return Err(parse_err(ln, format!("duplicate glyph {ch:?}")));
            }
        }
        if let Some(missing) = (' '..='~').find(|c| !glyphs.contains_key(c)) {
            return Err(OverlayError::MissingAscii(missing));
        }
        Ok(Self {
            name: name.into(),
            glyph_height,
            glyphs,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn glyph_height(&self) -> usize {
        self.glyph_height
    }

    pub fn glyph(&self, ch: char) -> Option<&Glyph> {
        self.glyphs.get(&ch)
    }

    pub fn charset(&self) -> impl Iterator<Item = char> + '_ {
        self.glyphs.keys().copied()
    }

    /// Advance of `ch` after scaling the atlas to height `h` (at least one pixel).
    pub fn scaled_advance(&self, ch: char, h: usize) -> Option<usize> {
        self.glyph(ch)
            .map(|g| scale_len(g.advance, h, self.glyph_height).max(1))
    }
}

/// `round(len * h / base)` with halves rounded up.
fn scale_len(len: usize, h: usize, base: usize) -> usize {
    (2 * len * h + base) / (2 * base)
}

/// Binary coverage of one rendered text string (`true` = ink).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlyphMask {
    width: usize,
    height: usize,
    coverage: Vec<bool>,
}

impl GlyphMask {
    pub fn new(width: usize, height: usize, coverage: Vec<bool>) -> Self {
        assert_eq!(coverage.len(), width * height, "coverage must be height x width");
        Self {
            width,
            height,
            coverage,
        }
    }

    /// A fully inked `width x height` rectangle.
    pub fn solid(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![true; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn coverage(&self) -> &[bool] {
        &self.coverage
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.coverage[row * self.width + col]
    }

    pub fn ink_count(&self) -> usize {
        self.coverage.iter().filter(|&&b| b).count()
    }
}

/// Lay out `text` left to right at font height `h`.
pub fn rasterize(text: &str, atlas: &FontAtlas, h: usize) -> Result<GlyphMask, OverlayError> {
    if text.is_empty() {
        return Err(OverlayError::EmptyText);
    }
    if h == 0 {
        return Err(OverlayError::ZeroHeight);
    }
    let base = atlas.glyph_height;
    let mut cells = Vec::with_capacity(text.len());
    for ch in text.chars() {
        let glyph = atlas.glyph(ch).ok_or(OverlayError::UnsupportedChar(ch))?;
        let advance = scale_len(glyph.advance, h, base).max(1);
        let width = scale_len(glyph.width, h, base).min(advance);
        cells.push((glyph, advance, width));
    }
    let total: usize = cells.iter().map(|c| c.1).sum();
    let mut coverage = vec![false; total * h];
    let mut x0 = 0;
    for (glyph, advance, width) in cells {
        for r in 0..h {
            let src_r = ((2 * r + 1) * base) / (2 * h);
            for c in 0..width {
                let src_c = ((2 * c + 1) * glyph.width) / (2 * width);
                if glyph.bitmap[src_r * glyph.width + src_c] {
                    coverage[r * total + x0 + c] = true;
                }
            }
        }
        x0 += advance;
    }
    Ok(GlyphMask::new(total, h, coverage))
}
