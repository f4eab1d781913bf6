//! Multiband rasters and window statistics.
//!
//! A feature vector describes the square window of Chebyshev radius `r`
//! around a pixel by four statistics per channel, in channel-major order:
//! mean, population standard deviation, minimum, maximum. Windows crossing the
//! image border sample mirrored pixels (`-1 -> 0`, `n -> n-1`).

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

pub const STATS_PER_CHANNEL: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub name: String,
    /// Row-major `height x width` values.
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    bands: Vec<Band>,
}

impl Raster {
    pub fn new(width: usize, height: usize, bands: Vec<Band>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster("width and height must be positive".into()));
        }
        for b in &bands {
            if b.data.len() != width * height {
                return Err(Error::InvalidRaster(format!(
                    "band {:?} has {} values, expected {}",
                    b.name,
                    b.data.len(),
                    width * height
                )));
            }
            if b.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidRaster(format!("band {:?} has non-finite values", b.name)));
            }
        }
        Ok(Self {
            width,
            height,
            bands,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn band_index(&self, name: &str) -> Result<usize> {
        self.bands
            .iter()
            .position(|b| b.name == name)
            .ok_or_else(|| Error::MissingBand(name.to_string()))
    }

    pub fn value(&self, band: usize, row: usize, col: usize) -> f32 {
        self.bands[band].data[row * self.width + col]
    }
}

/// Normalized difference vegetation index, `0` when both inputs vanish.
pub fn ndvi(red: f64, nir: f64) -> f64 {
    let sum = nir + red;
    if sum == 0.0 {
        0.0
    } else {
        (nir - red) / sum
    }
}

fn reflect_index(i: isize, n: usize) -> Option<usize> {
    let n = n as isize;
    let j = if i < 0 {
        -1 - i
    } else if i >= n {
        2 * n - 1 - i
    } else {
        i
    };
    (0..n).contains(&j).then_some(j as usize)
}

/// Value at `(row, col)` with mirror reflection across the border.
pub fn reflect_sample(raster: &Raster, band: usize, row: isize, col: isize) -> Result<f32> {
    match (
        reflect_index(row, raster.height),
        reflect_index(col, raster.width),
    ) {
        (Some(r), Some(c)) => Ok(raster.value(band, r, c)),
        _ => Err(Error::ReflectionOutOfRange {
            row,
            col,
            height: raster.height,
            width: raster.width,
        }),
    }
}

/// One feature channel: a stored band or NDVI derived from two bands.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum ChannelSpec {
    Band(String),
    Ndvi { red: String, nir: String },
}

impl fmt::Display for ChannelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelSpec::Band(name) => f.write_str(name),
            ChannelSpec::Ndvi { red, nir } => write!(f, "ndvi({red},{nir})"),
        }
    }
}

impl FromStr for ChannelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidParameter(format!("bad channel spec {s:?}"));
        if s.is_empty() || s.chars().any(char::is_whitespace) {
            return Err(bad());
        }
        if let Some(args) = s.strip_prefix("ndvi(").and_then(|r| r.strip_suffix(')')) {
            let (red, nir) = args.split_once(',').ok_or_else(bad)?;
            if red.is_empty() || nir.is_empty() || nir.contains(',') {
                return Err(bad());
            }
            return Ok(ChannelSpec::Ndvi {
                red: red.into(),
                nir: nir.into(),
            });
        }
        if s.contains(['(', ')', ',']) {
            return Err(bad());
        }
        Ok(ChannelSpec::Band(s.into()))
    }
}

/// All bands of the raster in order, plus NDVI when bands named `red` and
/// `nir` are both present.
pub fn default_channels(raster: &Raster, red: &str, nir: &str) -> Vec<ChannelSpec> {
    let mut channels: Vec<ChannelSpec> = raster
        .bands()
        .iter()
        .map(|b| ChannelSpec::Band(b.name.clone()))
        .collect();
    if raster.band_index(red).is_ok() && raster.band_index(nir).is_ok() {
        channels.push(ChannelSpec::Ndvi {
            red: red.into(),
            nir: nir.into(),
        });
    }
    channels
}

/// Centre pixel and Chebyshev radius of a square window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SquareSpec {
    pub row: usize,
    pub col: usize,
    pub radius: usize,
}

#[derive(Clone, Copy, Debug)]
enum Resolved {
    Band(usize),
    Ndvi { red: usize, nir: usize },
}

/// Channel list resolved against one raster's band layout.
#[derive(Clone, Debug)]
pub struct FeatureExtractor {
    resolved: Vec<Resolved>,
}

impl FeatureExtractor {
    pub fn new(raster: &Raster, channels: &[ChannelSpec]) -> Result<Self> {
        let resolved = channels
            .iter()
            .map(|c| {
                Ok(match c {
                    ChannelSpec::Band(name) => Resolved::Band(raster.band_index(name)?),
                    ChannelSpec::Ndvi { red, nir } => Resolved::Ndvi {
                        red: raster.band_index(red)?,
                        nir: raster.band_index(nir)?,
                    },
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { resolved })
    }

    pub fn output_dim(&self) -> usize {
        STATS_PER_CHANNEL * self.resolved.len()
    }

    /// Feature vector of the window described by `spec`.
    pub fn extract(&self, raster: &Raster, spec: SquareSpec) -> Result<Vec<f64>> {
        let r = spec.radius as isize;
        let (row, col) = (spec.row as isize, spec.col as isize);
        let mut samples = Vec::with_capacity((2 * spec.radius + 1).pow(2));
        let mut out = Vec::with_capacity(self.output_dim());
        for channel in &self.resolved {
            samples.clear();
            for dr in -r..=r {
                for dc in -r..=r {
                    let (y, x) = (row + dr, col + dc);
                    let v = match *channel {
                        Resolved::Band(b) => f64::from(reflect_sample(raster, b, y, x)?),
                        Resolved::Ndvi { red, nir } => ndvi(
                            f64::from(reflect_sample(raster, red, y, x)?),
                            f64::from(reflect_sample(raster, nir, y, x)?),
                        ),
                    };
                    samples.push(v);
                }
            }
            out.extend_from_slice(&window_stats(&samples));
        }
        Ok(out)
    }
}

/// `[mean, population std, min, max]` of a nonempty sample.
pub fn window_stats(samples: &[f64]) -> [f64; 4] {
    let n = samples.len() as f64;
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return [min, 0.0, min, max];
    }
    let mean = (samples.iter().sum::<f64>() / n).clamp(min, max);
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    [mean, var.sqrt(), min, max]
}

/// Feature vector of one window; see [`FeatureExtractor`] for repeated use.
pub fn square_features(raster: &Raster, channels: &[ChannelSpec], spec: SquareSpec) -> Result<Vec<f64>> {
    FeatureExtractor::new(raster, channels)?.extract(raster, spec)
}

/// A set of pixels of a `width x height` image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(width, height);
        for row in 0..height {
            for col in 0..width {
                m.bits[row * width + col] = f(row, col);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.height && col < self.width && self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Member pixels as `(row, col)` in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| (i / self.width, i % self.width))
    }

    /// Pixels whose whole Chebyshev ball of the given radius lies in the
    /// mask. Pixels outside the image count as outside the mask.
    pub fn eroded(&self, radius: usize) -> Self {
        let r = radius as isize;
        Self::from_fn(self.width, self.height, |row, col| {
            (-r..=r).all(|dr| {
                (-r..=r).all(|dc| {
                    let (y, x) = (row as isize + dr, col as isize + dc);
                    y >= 0 && x >= 0 && self.contains(y as usize, x as usize)
                })
            })
        })
    }
}

/// Window centred on a uniformly chosen pixel of the mask.
pub fn random_square<R: Rng>(mask: &PixelMask, radius: usize, rng: &mut R) -> Option<SquareSpec> {
    let n = mask.count();
    if n == 0 {
        return None;
    }
    let (row, col) = mask.pixels().nth(rng.random_range(0..n))?;
    Some(SquareSpec { row, col, radius })
}
