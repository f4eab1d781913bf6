//! Seeded synthetic data: Gaussian point clusters and two-texture rasters.
//!
//! All randomness comes from [`rng`], a ChaCha8 stream seeded from a single
//! `u64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::{random_square, Band, PixelMask, Raster};
use crate::graph::{ClusterId, LabeledDataset};
use crate::training::TrainingArea;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Splits `total` into `parts` sizes differing by at most one, larger first.
pub fn even_counts(total: usize, parts: usize) -> Vec<usize> {
    (0..parts)
        .map(|i| total / parts + usize::from(i < total % parts))
        .collect()
}

/// Gaussian blobs around `centers`, clipped to the unit box.
pub fn synth_clusters(seed: u64, centers: &[Vec<f64>], counts: &[usize], spread: f64) -> Result<LabeledDataset> {
    if centers.len() != counts.len() || centers.is_empty() {
        return Err(Error::InvalidParameter("one count per center is required".into()));
    }
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidParameter(format!("spread must be nonnegative, got {spread}")));
    }
    if centers.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::InvalidParameter("centers must lie in the unit box".into()));
    }
    let noise = Normal::new(0.0, spread).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = rng(seed);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for (c, (center, &count)) in centers.iter().zip(counts).enumerate() {
        for j in 0..count {
            let p: Vec<f64> = center
                .iter()
                .map(|x| (x + noise.sample(&mut rng)).clamp(0.0, 1.0))
                .collect();
            points.push(p);
            labels.push(ClusterId(c));
            ids.push(format!("c{}-{:03}", c + 1, j + 1));
        }
    }
    LabeledDataset::new(points, labels, ids)
}

/// Centers of the four-cluster demonstration set.
pub const DEMO_CENTERS: [[f64; 2]; 4] = [[0.25, 0.3], [0.7, 0.25], [0.3, 0.75], [0.75, 0.7]];
pub const DEMO_SPREAD: f64 = 0.06;

/// 125 points in four overlapping-free blobs inside the unit square.
pub fn demo_four_clusters(seed: u64) -> LabeledDataset {
    let centers: Vec<Vec<f64>> = DEMO_CENTERS.iter().map(|c| c.to_vec()).collect();
    synth_clusters(seed, &centers, &even_counts(125, 4), DEMO_SPREAD).expect("demo parameters are valid")
}

/// Per-band mean reflectance with uniform noise of half-width `noise`.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    pub means: Vec<f32>,
    pub noise: f32,
}

pub const DEMO_BANDS: [&str; 3] = ["B02", "B04", "B08"];

pub fn demo_textures() -> [Texture; 2] {
    [
        Texture {
            means: vec![0.06, 0.05, 0.40],
            noise: 0.02,
        },
        Texture {
            means: vec![0.12, 0.16, 0.24],
            noise: 0.05,
        },
    ]
}

/// Raster whose left half carries `textures[0]` and right half `textures[1]`.
/// Also returns the two half-image masks.
pub fn halves_raster(
    seed: u64,
    width: usize,
    height: usize,
    band_names: &[&str],
    textures: &[Texture; 2],
) -> Result<(Raster, [PixelMask; 2])> {
    if textures.iter().any(|t| t.means.len() != band_names.len()) {
        return Err(Error::InvalidParameter("one texture mean per band is required".into()));
    }
    let split = width / 2;
    let mut rng = rng(seed);
    let mut data = vec![vec![0f32; width * height]; band_names.len()];
    for row in 0..height {
        for col in 0..width {
            let t = &textures[usize::from(col >= split)];
            for (b, band) in data.iter_mut().enumerate() {
                let u: f32 = rng.random_range(-1.0..=1.0);
                band[row * width + col] = (t.means[b] + t.noise * u).max(0.0);
            }
        }
    }
    let bands = band_names
        .iter()
        .zip(data)
        .map(|(name, data)| Band {
            name: name.to_string(),
            data,
        })
        .collect();
    let masks = [
        PixelMask::from_fn(width, height, |_, c| c < split),
        PixelMask::from_fn(width, height, |_, c| c >= split),
    ];
    Ok((Raster::new(width, height, bands)?, masks))
}

/// Tiles each labeled region into `block x block` areas and places one
/// randomly centred square of random radius in each.
pub fn block_areas(seed: u64, regions: &[PixelMask], block: usize, radii: &[usize]) -> Result<Vec<TrainingArea>> {
    if block == 0 || radii.is_empty() {
        return Err(Error::InvalidParameter("block size and radii must be nonempty".into()));
    }
    let mut rng = rng(seed);
    let mut areas = Vec::new();
    for (label, region) in regions.iter().enumerate() {
        let (w, h) = (region.width(), region.height());
        for by in (0..h).step_by(block) {
            for bx in (0..w).step_by(block) {
                let mask = PixelMask::from_fn(w, h, |r, c| {
                    (by..by + block).contains(&r) && (bx..bx + block).contains(&c) && region.contains(r, c)
                });
                let radius = radii[rng.random_range(0..radii.len())];
                let Some(square) = random_square(&mask, radius, &mut rng) else {
                    continue;
                };
                areas.push(TrainingArea {
                    id: format!("a{}-{:03}", label + 1, areas.len() + 1),
                    label: ClusterId(label),
                    mask,
                    square,
                });
            }
        }
    }
    Ok(areas)
}
