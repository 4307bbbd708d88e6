//! Dense video tensors, the VTEN container and per-frame PPM/PGM export.
//!
//! A VTEN file is `"VTEN" | version:u8 = 1 | T,H,W,C: u32 LE | T*H*W*C bytes`.
//! Pixels are stored row-major as `[t][row][col][channel]`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const VTEN_MAGIC: &[u8; 4] = b"VTEN";
pub const VTEN_VERSION: u8 = 1;
pub const VTEN_HEADER_LEN: usize = 21;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("bad magic {0:?}, expected \"VTEN\"")]
    BadMagic([u8; 4]),
    #[error("unsupported VTEN version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("trailing data: expected {expected} bytes, found {found}")]
    TrailingData { expected: usize, found: usize },
    #[error("zero-sized dimension in {0:?}")]
    ZeroDimension([usize; 4]),
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    BadChannels(usize),
    #[error("pixel buffer has {found} bytes, dims require {expected}")]
    BufferLength { expected: usize, found: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A `T x H x W x C` clip of unsigned bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct VideoClip {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for VideoClip {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VideoClip")
            .field("dims", &self.dims())
            .finish_non_exhaustive()
    }
}

impl VideoClip {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, TensorError> {
        let dims = [frames, height, width, channels];
        if dims.contains(&0) {
            return Err(TensorError::ZeroDimension(dims));
        }
        if channels != 1 && channels != 3 {
            return Err(TensorError::BadChannels(channels));
        }
        let expected = frames * height * width * channels;
        if pixels.len() != expected {
            return Err(TensorError::BufferLength {
                expected,
                found: pixels.len(),
            });
        }
        Ok(Self {
            frames,
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        value: u8,
    ) -> Result<Self, TensorError> {
        Self::new(
            frames,
            height,
            width,
            channels,
            vec![value; frames * height * width * channels],
        )
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `[T, H, W, C]`
    pub fn dims(&self) -> [usize; 4] {
        [self.frames, self.height, self.width, self.channels]
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    #[inline]
    pub fn offset(&self, t: usize, row: usize, col: usize, c: usize) -> usize {
        ((t * self.height + row) * self.width + col) * self.channels + c
    }

    #[inline]
    pub fn pixel(&self, t: usize, row: usize, col: usize, c: usize) -> u8 {
        self.pixels[self.offset(t, row, col, c)]
    }

    pub fn set_pixel(&mut self, t: usize, row: usize, col: usize, c: usize, value: u8) {
        let off = self.offset(t, row, col, c);
        self.pixels[off] = value;
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.frame_len();
        &self.pixels[t * n..(t + 1) * n]
    }

    /// Serialize into the VTEN container.
    pub fn to_vten_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(VTEN_HEADER_LEN + self.pixels.len());
        out.extend_from_slice(VTEN_MAGIC);
        out.push(VTEN_VERSION);
        for d in self.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_vten_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        if bytes.len() < VTEN_HEADER_LEN {
            // A short file that does not even begin with the magic is reported as such.
            if bytes.len() >= 4 && &bytes[..4] != VTEN_MAGIC {
                return Err(TensorError::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(TensorError::Truncated {
                expected: VTEN_HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if &magic != VTEN_MAGIC {
            return Err(TensorError::BadMagic(magic));
        }
        if bytes[4] != VTEN_VERSION {
            return Err(TensorError::UnsupportedVersion(bytes[4]));
        }
        let mut dims = [0usize; 4];
        for (i, d) in dims.iter_mut().enumerate() {
            let at = 5 + 4 * i;
            *d = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        }
        if dims.contains(&0) {
            return Err(TensorError::ZeroDimension(dims));
        }
        if dims[3] != 1 && dims[3] != 3 {
            return Err(TensorError::BadChannels(dims[3]));
        }
        let payload = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .unwrap_or(usize::MAX);
        let expected = VTEN_HEADER_LEN.saturating_add(payload);
        if bytes.len() < expected {
            return Err(TensorError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(TensorError::TrailingData {
                expected,
                found: bytes.len(),
            });
        }
        Self::new(
            dims[0],
            dims[1],
            dims[2],
            dims[3],
            bytes[VTEN_HEADER_LEN..].to_vec(),
        )
    }
}

pub fn load_video(path: impl AsRef<Path>) -> Result<VideoClip, TensorError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    VideoClip::from_vten_bytes(&bytes)
}

pub fn save_video(clip: &VideoClip, path: impl AsRef<Path>) -> Result<(), TensorError> {
    let path = path.as_ref();
    fs::write(path, clip.to_vten_bytes()).map_err(|source| TensorError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write one binary PPM (`C = 3`) or PGM (`C = 1`) per frame as `frame_%04d.{ppm,pgm}`.
pub fn export_frames(clip: &VideoClip, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, TensorError> {
    let dir = dir.as_ref();
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TensorError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let (magic, ext) = if clip.channels() == 3 {
        ("P6", "ppm")
    } else {
        ("P5", "pgm")
    };
    let mut paths = Vec::with_capacity(clip.frames());
    for t in 0..clip.frames() {
        let path = dir.join(format!("frame_{t:04}.{ext}"));
        let mut file = fs::File::create(&path).map_err(io_err(&path))?;
        write!(file, "{magic}\n{} {}\n255\n", clip.width(), clip.height()).map_err(io_err(&path))?;
        file.write_all(clip.frame(t)).map_err(io_err(&path))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Ground-truth class `index` out of `num_classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Label {
    index: usize,
    num_classes: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("label {index} out of range for {num_classes} classes")]
    OutOfRange { index: usize, num_classes: usize },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
}

impl Label {
    pub fn new(index: usize, num_classes: usize) -> Result<Self, LabelError> {
        if num_classes < 2 {
            return Err(LabelError::TooFewClasses(num_classes));
        }
        if index >= num_classes {
            return Err(LabelError::OutOfRange { index, num_classes });
        }
        Ok(Self { index, num_classes })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PredictionError {
    #[error("prediction vector is empty")]
    Empty,
    #[error("probability {value} at index {index} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    NotNormalized(f64),
}

/// A classifier output: `K` probabilities summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionVector {
    probs: Vec<f64>,
}

impl PredictionVector {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(probs: Vec<f64>) -> Result<Self, PredictionError> {
        if probs.is_empty() {
            return Err(PredictionError::Empty);
        }
        for (index, &value) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(PredictionError::OutOfRange { index, value });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(PredictionError::NotNormalized(sum));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Index of the largest probability; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn header(magic: &[u8; 4], dims: [u32; 4]) -> Vec<u8> {
        let mut b = magic.to_vec();
        b.push(1);
        for d in dims {
            b.extend_from_slice(&d.to_le_bytes());
        }
        b
    }

    #[test]
    fn minimal_clip_parses() {
        let mut bytes = header(b"VTEN", [1, 1, 1, 1]);
        bytes.push(42);
        let clip = VideoClip::from_vten_bytes(&bytes).unwrap();
        assert_eq!(clip.dims(), [1, 1, 1, 1]);
        assert_eq!(clip.pixels(), &[42]);
        assert_eq!(clip.to_vten_bytes(), bytes);
    }

    #[test]
    fn parse_errors_are_distinct() {
        let mut bad_magic = header(b"XXXX", [1, 1, 1, 1]);
        bad_magic.push(0);
        assert!(matches!(
            VideoClip::from_vten_bytes(&bad_magic),
            Err(TensorError::BadMagic(m)) if &m == b"XXXX"
        ));

        let truncated = header(b"VTEN", [2, 2, 2, 3]);
        assert!(matches!(
            VideoClip::from_vten_bytes(&truncated),
            Err(TensorError::Truncated { expected: 45, found: 21 })
        ));
        assert!(matches!(
            VideoClip::from_vten_bytes(b"VTEN\x01\x00"),
            Err(TensorError::Truncated { .. })
        ));

        let zero = header(b"VTEN", [0, 2, 2, 3]);
        assert!(matches!(
            VideoClip::from_vten_bytes(&zero),
            Err(TensorError::ZeroDimension(_))
        ));

        let mut chans = header(b"VTEN", [1, 1, 1, 2]);
        chans.extend_from_slice(&[0, 0]);
        assert!(matches!(
            VideoClip::from_vten_bytes(&chans),
            Err(TensorError::BadChannels(2))
        ));

        let mut version = header(b"VTEN", [1, 1, 1, 1]);
        version[4] = 9;
        version.push(0);
        assert!(matches!(
            VideoClip::from_vten_bytes(&version),
            Err(TensorError::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn zeros_file_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.vten");
        let clip = VideoClip::filled(2, 2, 2, 3, 0).unwrap();
        save_video(&clip, &path).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 21 + 24);
    }

    #[test]
    fn random_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.vten");
        let (t, h, w, c) = (3, 5, 7, 3);
        let pixels: Vec<u8> = (0..t * h * w * c).map(|_| rng.gen()).collect();
        let clip = VideoClip::new(t, h, w, c, pixels).unwrap();
        save_video(&clip, &path).unwrap();
        let back = load_video(&path).unwrap();
        assert_eq!(back, clip);
        assert_eq!(fs::read(&path).unwrap(), back.to_vten_bytes());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let clip = VideoClip::filled(1, 1, 1, 1, 0).unwrap();
        let err = save_video(&clip, "/nonexistent-dir/sub/x.vten").unwrap_err();
        assert!(matches!(err, TensorError::Io { .. }));
    }

    #[test]
    fn sentinel_addressing() {
        let (t, h, w, c) = (4, 3, 5, 3);
        let mut clip = VideoClip::filled(t, h, w, c, 0).unwrap();
        clip.set_pixel(2, 1, 3, 2, 0xAB);
        let off = ((2 * h + 1) * w + 3) * c + 2;
        assert_eq!(clip.pixels()[off], 0xAB);
        assert_eq!(clip.pixels().iter().filter(|&&b| b != 0).count(), 1);
        assert_eq!(clip.pixel(2, 1, 3, 2), 0xAB);
    }

    #[test]
    fn label_and_prediction_invariants() {
        assert!(Label::new(3, 4).is_ok());
        assert_eq!(
            Label::new(4, 4),
            Err(LabelError::OutOfRange { index: 4, num_classes: 4 })
        );
        assert_eq!(Label::new(0, 1), Err(LabelError::TooFewClasses(1)));
        assert!(PredictionVector::new(vec![0.5, 0.5]).is_ok());
        assert!(PredictionVector::new(vec![0.5, 0.6]).is_err());
        assert!(PredictionVector::new(vec![-0.1, 1.1]).is_err());
        let p = PredictionVector::new(vec![0.25, 0.5, 0.25]).unwrap();
        assert_eq!(p.argmax(), 1);
    }
}
