//! File formats.
//!
//! Rasters are a text header plus a raw data file next to it:
//!
//! ```text
//! nnraster 1
//! width 64
//! height 64
//! bands 3
//! band B02
//! band B04
//! band B08
//! ```
//!
//! The data file is the header path with `.raw` appended and holds the bands
//! one after another, each row-major, as little-endian `f32`.
//!
//! Datasets are CSV with header `id,label,f1,...,fD` and 1-based labels.
//! Training areas are CSV `id,label,mask_value,row,col,radius` next to a
//! single-band raster in which each area's pixels hold its `mask_value`.
//! Maps render to 16-bit binary PGM with an `nnraster` sidecar holding the
//! exact `f32` values.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::{Band, PixelMask, Raster, SquareSpec};
use crate::graph::{ClusterId, LabeledDataset};
use crate::relmap::{MapKind, RelevancyMap};
use crate::training::{TrainingArea, TrialRecord};

const RASTER_MAGIC: &str = "nnraster 1";

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn raster_data_path(header: &Path) -> PathBuf {
    let mut s = header.as_os_str().to_owned();
    s.push(".raw");
    PathBuf::from(s)
}

pub fn save_raster(raster: &Raster, header: &Path) -> Result<()> {
    let mut text = format!(
        "{RASTER_MAGIC}\nwidth {}\nheight {}\nbands {}\n",
        raster.width(),
        raster.height(),
        raster.bands().len()
    );
    for b in raster.bands() {
        if b.name.is_empty() || b.name.contains(char::is_whitespace) {
            return Err(format_err(header, format!("band name {:?} is not a single word", b.name)));
        }
        text.push_str(&format!("band {}\n", b.name));
    }
    fs::write(header, text)?;
    let mut out = BufWriter::new(File::create(raster_data_path(header))?);
    for b in raster.bands() {
        for v in &b.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_raster(header: &Path) -> Result<Raster> {
    let text = fs::read_to_string(header)?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some(RASTER_MAGIC) {
        return Err(format_err(header, format!("missing `{RASTER_MAGIC}` header")));
    }
    let mut field = |key: &str| -> Result<usize> {
        lines
            .next()
            .and_then(|l| l.strip_prefix(key))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| format_err(header, format!("expected `{key} <n>`")))
    };
    let width = field("width")?;
    let height = field("height")?;
    let n_bands = field("bands")?;
    let mut names = Vec::with_capacity(n_bands);
    for _ in 0..n_bands {
        let name = lines
            .next()
            .and_then(|l| l.strip_prefix("band "))
            .map(|n| n.trim().to_string())
            .ok_or_else(|| format_err(header, "expected `band <name>`"))?;
        names.push(name);
    }
    let data_path = raster_data_path(header);
    let bytes = fs::read(&data_path)?;
    let expected = width * height * n_bands * 4;
    if bytes.len() != expected {
        return Err(format_err(
            &data_path,
            format!("expected {expected} data bytes, found {}", bytes.len()),
        ));
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let bands = names
        .into_iter()
        .map(|name| Band {
            name,
            data: values.by_ref().take(width * height).collect(),
        })
        .collect();
    Raster::new(width, height, bands)
}

pub fn save_dataset(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((1..=dataset.dim()).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for i in 0..dataset.len() {
        let mut row = vec![dataset.id(i).to_string(), dataset.label(i).one_based().to_string()];
        // `Display` for f64 is the shortest string that parses back exactly
        row.extend(dataset.point(i).iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label" {
        return Err(format_err(path, "header must be `id,label,f1,...`"));
    }
    let dim = header.len() - 2;
    let mut coords = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let row = line + 2;
        if record.len() != dim + 2 {
            return Err(format_err(path, format!("row {row} has {} fields, expected {}", record.len(), dim + 2)));
        }
        let label: usize = record[1]
            .trim()
            .parse()
            .ok()
            .filter(|&l| l >= 1)
            .ok_or_else(|| format_err(path, format!("row {row}: label {:?} is not a positive integer", &record[1])))?;
        for f in record.iter().skip(2) {
            let x: f64 = f
                .trim()
                .parse()
                .map_err(|_| format_err(path, format!("row {row}: {f:?} is not a number")))?;
            coords.push(x);
        }
        ids.push(record[0].to_string());
        labels.push(ClusterId(label - 1));
    }
    if ids.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ds = LabeledDataset::from_flat(dim, coords, labels, ids)?;
    if ds.n_clusters() < 2 {
        return Err(Error::InvalidDataset("at least two clusters are required".into()));
    }
    Ok(ds)
}

/// Writes the area table and its mask raster (`<csv>.mask.nnr`).
pub fn save_areas(areas: &[TrainingArea], path: &Path) -> Result<()> {
    let first = areas.first().ok_or(Error::EmptyDataset)?;
    let (width, height) = (first.mask.width(), first.mask.height());
    let mut mask = vec![0f32; width * height];
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "label", "mask_value", "row", "col", "radius"])?;
    for (i, a) in areas.iter().enumerate() {
        if a.mask.width() != width || a.mask.height() != height {
            return Err(Error::MapMismatch);
        }
        let value = i + 1;
        for (r, c) in a.mask.pixels() {
            if mask[r * width + c] != 0.0 {
                return Err(format_err(path, format!("area {} overlaps another area", a.id)));
            }
            mask[r * width + c] = value as f32;
        }
        w.write_record([
            a.id.clone(),
            a.label.one_based().to_string(),
            value.to_string(),
            a.square.row.to_string(),
            a.square.col.to_string(),
            a.square.radius.to_string(),
        ])?;
    }
    w.flush()?;
    let raster = Raster::new(
        width,
        height,
        vec![Band {
            name: "area".into(),
            data: mask,
        }],
    )?;
    save_raster(&raster, &areas_mask_path(path))
}

pub fn areas_mask_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".mask.nnr");
    PathBuf::from(s)
}

pub fn load_areas(path: &Path) -> Result<Vec<TrainingArea>> {
    let mask = load_raster(&areas_mask_path(path))?;
    let (width, height) = (mask.width(), mask.height());
    let values = &mask.bands()[0].data;
    let mut r = csv::Reader::from_path(path)?;
    let mut areas = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let row = line + 2;
        if record.len() != 6 {
            return Err(format_err(path, format!("row {row} needs 6 fields")));
        }
        let num = |i: usize| -> Result<usize> {
            record[i]
                .trim()
                .parse()
                .map_err(|_| format_err(path, format!("row {row}: {:?} is not a nonnegative integer", &record[i])))
        };
        let value = num(2)? as f32;
        let square = SquareSpec {
            row: num(3)?,
            col: num(4)?,
            radius: num(5)?,
        };
        let area_mask = PixelMask::from_fn(width, height, |r, c| values[r * width + c] == value);
        if square.row >= height || square.col >= width || !area_mask.contains(square.row, square.col) {
            return Err(format_err(path, format!("row {row}: square centre lies outside the area")));
        }
        areas.push(TrainingArea {
            id: record[0].to_string(),
            label: ClusterId::from_one_based(num(1)?)
                .ok_or_else(|| format_err(path, format!("row {row}: labels start at 1")))?,
            mask: area_mask,
            square,
        });
    }
    if areas.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(areas)
}

/// 16-bit PGM sample for a relevancy in `[0, 1]`, rounding half up.
pub fn pgm_level(value: f32) -> u16 {
    let v = f64::from(value).clamp(0.0, 1.0);
    (v * 65535.0 + 0.5).floor() as u16
}

pub fn write_pgm(map: &RelevancyMap, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "P5\n{} {}\n65535\n", map.width, map.height)?;
    for v in &map.values {
        out.write_all(&pgm_level(*v).to_be_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Sidecar header path for a rendered map: the PGM path with extension `nnr`.
pub fn sidecar_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("nnr")
}

fn map_band_name(map: &RelevancyMap) -> String {
    format!("c{}-{}", map.cluster, map.kind)
}

/// Writes the PGM rendering and the exact float sidecar.
pub fn save_map(map: &RelevancyMap, pgm: &Path) -> Result<()> {
    write_pgm(map, pgm)?;
    let raster = Raster::new(
        map.width,
        map.height,
        vec![Band {
            name: map_band_name(map),
            data: map.values.clone(),
        }],
    )?;
    save_raster(&raster, &sidecar_path(pgm))
}

/// Reads a map back from its float sidecar header.
pub fn load_map(sidecar: &Path) -> Result<RelevancyMap> {
    let raster = load_raster(sidecar)?;
    let [band] = raster.bands() else {
        return Err(format_err(sidecar, "a map sidecar has exactly one band"));
    };
    let bad = || format_err(sidecar, format!("band name {:?} is not `c<cluster>-<r<radius>|final>`", band.name));
    let (cluster, kind) = band
        .name
        .strip_prefix('c')
        .and_then(|s| s.split_once('-'))
        .ok_or_else(bad)?;
    let cluster = cluster.parse().ok().and_then(ClusterId::from_one_based).ok_or_else(bad)?;
    let kind = match kind {
        "final" => MapKind::Final,
        r => MapKind::Radius(r.strip_prefix('r').and_then(|r| r.parse().ok()).ok_or_else(bad)?),
    };
    Ok(RelevancyMap {
        width: raster.width(),
        height: raster.height(),
        cluster,
        kind,
        values: band.data.clone(),
    })
}

pub fn append_progress(path: &Path, record: &TrialRecord) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{record}")?;
    Ok(())
}

/// Records from a tuning progress log. A missing file yields no records;
/// blank lines and `#` comments are skipped, and a torn final line from an
/// interrupted run is ignored.
pub fn read_progress(path: &Path) -> Result<Vec<TrialRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let lines: Vec<String> = BufReader::new(file).lines().collect::<std::io::Result<_>>()?;
    let content: Vec<&String> = lines
        .iter()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .collect();
    let mut records = Vec::with_capacity(content.len());
    for (i, line) in content.iter().enumerate() {
        match line.parse::<TrialRecord>() {
            Ok(r) => records.push(r),
            Err(_) if i + 1 == content.len() => log::warn!("ignoring incomplete last line of {}", path.display()),
            Err(e) => return Err(e),
        }
    }
    Ok(records)
}
