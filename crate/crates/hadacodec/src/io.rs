//! File formats: spectra CSV, raw channel images, binary PPM, key/value
//! configs and run manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::render::ChannelImage;
use crate::spectral::{resample, wavelengths, SpectralCurve, N_SAMPLES};
use crate::training::{LossWeights, TrainConfig};

pub const RAW_MAGIC: &[u8; 8] = b"HSCRAW01";
const RAW_HEADER_LEN: usize = 8 + 12;

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Shortest decimal that round-trips `v` rounded to 9 significant digits.
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

/// Spectra as stored on disk: a wavelength header and one row per curve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpectraTable {
    pub wavelengths: Vec<f64>,
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SpectraTable {
    pub fn from_curves(ids: Vec<String>, curves: &[SpectralCurve]) -> Self {
        SpectraTable {
            wavelengths: wavelengths().to_vec(),
            ids,
            rows: curves.iter().map(|c| c.as_slice().to_vec()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Resample every row onto the canonical grid.
    pub fn to_curves(&self, zero_outside_visible: bool) -> Result<Vec<SpectralCurve>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                resample(row, &self.wavelengths, zero_outside_visible).map_err(|e| match e {
                    Error::Domain(m) => Error::format(format!("row {}", i + 2), m),
                    other => other,
                })
            })
            .collect()
    }
}

/// Parse a spectra CSV. The header holds the wavelengths, optionally led by
/// an `id` column; an empty body yields an empty table with a warning.
pub fn parse_spectra_csv(text: &str, source: &str) -> Result<SpectraTable> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        warn!("{source}: empty spectra file");
        return Ok(SpectraTable::default());
    };
    let mut cells: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_id = cells.first().is_some_and(|c| c.eq_ignore_ascii_case("id"));
    if has_id {
        cells.remove(0);
    }
    let id_offset = usize::from(has_id);
    let wl = cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            c.parse::<f64>().map_err(|e| {
                Error::format(
                    format!("{source}:1:{}", i + 1 + id_offset),
                    format!("bad wavelength '{c}': {e}"),
                )
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    if wl.len() < 2 {
        return Err(Error::format(
            format!("{source}:1"),
            "need at least two wavelengths",
        ));
    }
    if let Some(i) = wl.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(Error::format(
            format!("{source}:1:{}", i + 2 + id_offset),
            "wavelengths must be strictly increasing",
        ));
    }
    let mut table = SpectraTable {
        wavelengths: wl,
        ..Default::default()
    };
    for (lineno, line) in lines {
        let loc = |col: usize| format!("{source}:{}:{}", lineno + 1, col);
        let mut cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let id = if has_id {
            cells.remove(0).to_string()
        } else {
            format!("row{}", table.rows.len())
        };
        if cells.len() != table.wavelengths.len() {
            return Err(Error::format(
                loc(1),
                format!(
                    "expected {} values, found {}",
                    table.wavelengths.len(),
                    cells.len()
                ),
            ));
        }
        let row = cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let v: f64 = c.parse().map_err(|e| {
                    Error::format(loc(i + 1 + id_offset), format!("bad value '{c}': {e}"))
                })?;
                if !v.is_finite() {
                    return Err(Error::format(
                        loc(i + 1 + id_offset),
                        format!("non-finite value '{c}'"),
                    ));
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        table.ids.push(id);
        table.rows.push(row);
    }
    if table.rows.is_empty() {
        warn!("{source}: spectra file has a header but no curves");
    }
    Ok(table)
}

pub fn spectra_csv(table: &SpectraTable) -> String {
    let mut s = String::from("id");
    for w in &table.wavelengths {
        let _ = write!(s, ",{}", fmt_sig9(*w));
    }
    s.push('\n');
    for (id, row) in table.ids.iter().zip(&table.rows) {
        s.push_str(id);
        for v in row {
            let _ = write!(s, ",{}", fmt_sig9(*v));
        }
        s.push('\n');
    }
    s
}

pub fn read_spectra(path: &Path) -> Result<SpectraTable> {
    parse_spectra_csv(&read_text(path)?, &path.display().to_string())
}

pub fn write_spectra(path: &Path, table: &SpectraTable) -> Result<()> {
    write_bytes(path, spectra_csv(table).as_bytes())
}

/// Latent codes: header `id,z0,..,z{k-1}`, one code per row.
pub fn codes_csv(ids: &[String], codes: &[Vec<f64>]) -> String {
    let k = codes.first().map_or(0, Vec::len);
    let mut s = String::from("id");
    for j in 0..k {
        let _ = write!(s, ",z{j}");
    }
    s.push('\n');
    for (id, z) in ids.iter().zip(codes) {
        s.push_str(id);
        for v in z {
            let _ = write!(s, ",{}", fmt_sig9(*v));
        }
        s.push('\n');
    }
    s
}

pub fn parse_codes_csv(text: &str, source: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        warn!("{source}: empty code file");
        return Ok((Vec::new(), Vec::new()));
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"id") || cols.len() < 2 {
        return Err(Error::format(
            format!("{source}:1:1"),
            "header must be 'id,z0,..'",
        ));
    }
    let k = cols.len() - 1;
    let (mut ids, mut codes) = (Vec::new(), Vec::new());
    for (lineno, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != k + 1 {
            return Err(Error::format(
                format!("{source}:{}:1", lineno + 1),
                format!("expected {} columns, found {}", k + 1, cells.len()),
            ));
        }
        let z = cells[1..]
            .iter()
            .enumerate()
            .map(|(i, c)| {
                c.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::format(
                            format!("{source}:{}:{}", lineno + 1, i + 2),
                            format!("bad value '{c}'"),
                        )
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        ids.push(cells[0].to_string());
        codes.push(z);
    }
    Ok((ids, codes))
}

/// Raw float image: `HSCRAW01`, then width, height and channel count as
/// little-endian u32, then row-major little-endian f32 samples.
pub fn encode_raw(img: &ChannelImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + img.data.len() * 4);
    out.extend_from_slice(RAW_MAGIC);
    for d in [img.width, img.height, img.channels] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &img.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_raw(bytes: &[u8]) -> Result<ChannelImage> {
    if bytes.len() < RAW_HEADER_LEN {
        return Err(Error::format(
            "offset 0",
            format!(
                "raw image header needs {RAW_HEADER_LEN} bytes, file has {}",
                bytes.len()
            ),
        ));
    }
    if &bytes[..8] != RAW_MAGIC {
        return Err(Error::format("offset 0", "raw image magic mismatch"));
    }
    let word =
        |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    let (w, h, c) = (word(0), word(1), word(2));
    let count = w
        .checked_mul(h)
        .and_then(|p| p.checked_mul(c))
        .ok_or_else(|| Error::format("offset 8", "image dimensions overflow"))?;
    let body = &bytes[RAW_HEADER_LEN..];
    if body.len() != count * 4 {
        return Err(Error::format(
            format!("offset {RAW_HEADER_LEN}"),
            format!(
                "expected {} data bytes for {w}x{h}x{c}, found {}",
                count * 4,
                body.len()
            ),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    ChannelImage::new(w, h, c, data)
}

pub fn write_raw(path: &Path, img: &ChannelImage) -> Result<()> {
    write_bytes(path, &encode_raw(img))
}

pub fn read_raw(path: &Path) -> Result<ChannelImage> {
    decode_raw(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

pub fn encode_ppm(img: &Rgb8Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for p in &img.pixels {
        out.extend_from_slice(p);
    }
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Rgb8Image> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(
                format!("offset {pos}"),
                "truncated PPM header",
            ));
        }
        fields.push((
            start,
            String::from_utf8_lossy(&bytes[start..pos]).into_owned(),
        ));
    }
    if fields[0].1 != "P6" {
        return Err(Error::format(
            "offset 0",
            format!("expected P6 magic, found '{}'", fields[0].1),
        ));
    }
    let num = |i: usize| -> Result<usize> {
        fields[i].1.parse().map_err(|_| {
            Error::format(
                format!("offset {}", fields[i].0),
                format!("bad header number '{}'", fields[i].1),
            )
        })
    };
    let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 255 {
        return Err(Error::format(
            format!("offset {}", fields[3].0),
            "only maxval 255 is supported",
        ));
    }
    pos += 1;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != w * h * 3 {
        return Err(Error::format(
            format!("offset {pos}"),
            format!("expected {} pixel bytes, found {}", w * h * 3, body.len()),
        ));
    }
    Ok(Rgb8Image {
        width: w,
        height: h,
        pixels: body.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect(),
    })
}

pub fn write_ppm(path: &Path, img: &Rgb8Image) -> Result<()> {
    write_bytes(path, &encode_ppm(img))
}

pub fn read_ppm(path: &Path) -> Result<Rgb8Image> {
    decode_ppm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Flat `key = value` text with `#` comments. Keys must be unique.
pub fn parse_kv(text: &str, source: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::format(
                format!("{source}:{}", i + 1),
                format!("expected 'key = value', found '{line}'"),
            ));
        };
        let key = k.trim().to_string();
        if map
            .insert(key.clone(), (i + 1, v.trim().to_string()))
            .is_some()
        {
            return Err(Error::format(
                format!("{source}:{}", i + 1),
                format!("duplicate key '{key}'"),
            ));
        }
    }
    Ok(map)
}

/// Training options from a key/value config. Missing keys keep their
/// defaults; unknown keys are errors.
pub fn parse_train_config(text: &str, source: &str) -> Result<(TrainConfig, LossWeights)> {
    let mut cfg = TrainConfig::default();
    let mut lw = LossWeights::default();
    for (key, (line, value)) in parse_kv(text, source)? {
        let loc = format!("{source}:{line}");
        let float = || {
            value
                .parse::<f64>()
                .map_err(|e| Error::format(&loc, format!("{key}: {e}")))
        };
        let int = || {
            value
                .parse::<usize>()
                .map_err(|e| Error::format(&loc, format!("{key}: {e}")))
        };
        match key.as_str() {
            "lr" => cfg.lr = float()?,
            "batch_size" => cfg.batch_size = int()?,
            "max_epochs" => cfg.max_epochs = int()?,
            "patience" => cfg.patience = int()?,
            "seed" => {
                cfg.seed = value
                    .parse()
                    .map_err(|e| Error::format(&loc, format!("seed: {e}")))?
            }
            "val_fraction" => cfg.val_fraction = float()?,
            "illum_scale_min" => cfg.illum_scale_min = float()?,
            "illum_scale_max" => cfg.illum_scale_max = float()?,
            "pairs_per_epoch" => {
                cfg.pairs_per_epoch = if value == "auto" { None } else { Some(int()?) }
            }
            "lambda_e2e" => lw.e2e = float()?,
            "lambda_rec" => lw.rec = float()?,
            "lambda_code" => lw.code = float()?,
            "lambda_col" => lw.col = float()?,
            "lambda_alg" => lw.alg = float()?,
            _ => return Err(Error::format(loc, format!("unknown key '{key}'"))),
        }
    }
    cfg.validate()?;
    lw.validate()?;
    Ok((cfg, lw))
}

pub fn train_config_text(cfg: &TrainConfig, lw: &LossWeights) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "lr = {}", cfg.lr);
    let _ = writeln!(s, "batch_size = {}", cfg.batch_size);
    let _ = writeln!(s, "max_epochs = {}", cfg.max_epochs);
    let _ = writeln!(s, "patience = {}", cfg.patience);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "val_fraction = {}", cfg.val_fraction);
    let _ = writeln!(s, "illum_scale_min = {}", cfg.illum_scale_min);
    let _ = writeln!(s, "illum_scale_max = {}", cfg.illum_scale_max);
    match cfg.pairs_per_epoch {
        Some(p) => {
            let _ = writeln!(s, "pairs_per_epoch = {p}");
        }
        None => s.push_str("pairs_per_epoch = auto\n"),
    }
    let _ = writeln!(s, "lambda_e2e = {}", lw.e2e);
    let _ = writeln!(s, "lambda_rec = {}", lw.rec);
    let _ = writeln!(s, "lambda_code = {}", lw.code);
    let _ = writeln!(s, "lambda_col = {}", lw.col);
    let _ = writeln!(s, "lambda_alg = {}", lw.alg);
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileRecord {
    pub fn of(path: &Path) -> Result<Self> {
        let data = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(FileRecord {
            path: path.to_path_buf(),
            sha256: sha256_hex(&data),
            bytes: data.len() as u64,
        })
    }
}

/// Audit record written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub elapsed_seconds: f64,
    #[serde(default)]
    pub details: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            elapsed_seconds: 0.0,
            details: serde_json::Value::Null,
        }
    }

    pub fn seed(mut self, name: &str, seed: u64) -> Self {
        self.seeds.insert(name.to_string(), seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileRecord::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileRecord::of(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_bytes(path, serde_json::to_string_pretty(self)?.as_bytes())
    }
}

/// Spectra table file for a list of curves with generated ids.
pub fn curves_table(prefix: &str, curves: &[SpectralCurve]) -> SpectraTable {
    SpectraTable::from_curves(
        (0..curves.len())
            .map(|i| format!("{prefix}{i:04}"))
            .collect(),
        curves,
    )
}

pub fn read_curves(path: &Path) -> Result<Vec<SpectralCurve>> {
    let table = read_spectra(path)?;
    if table.wavelengths.len() == N_SAMPLES {
        table
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                SpectralCurve::from_slice(r).map_err(|e| {
                    Error::format(format!("{}: row {}", path.display(), i + 2), e.to_string())
                })
            })
            .collect()
    } else {
        table.to_curves(false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_csv_round_trip() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let codes = vec![vec![0.5, 1.25, 0.0], vec![3.0, 0.125, 7.5]];
        let (i2, c2) = parse_codes_csv(&codes_csv(&ids, &codes), "c.csv").unwrap();
        assert_eq!((i2, c2), (ids, codes));
        let e = parse_codes_csv("id,z0\nx,abc\n", "c.csv")
            .unwrap_err()
            .to_string();
        assert!(e.contains("c.csv:2:2"), "{e}");
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(0.1234567891234), "0.123456789");
        assert_eq!(fmt_sig9(368.0), "368");
        let v = 1.0 / 3.0;
        let back: f64 = fmt_sig9(v).parse().unwrap();
        assert!((back - v).abs() / v < 5e-9);
    }

    #[test]
    fn spectra_csv_round_trip() {
        let curves: Vec<_> = (0..3)
            .map(|i| SpectralCurve::from_fn(|l| (l / 830.0).powi(i + 1)).unwrap())
            .collect();
        let table = curves_table("c", &curves);
        let text = spectra_csv(&table);
        let back = parse_spectra_csv(&text, "mem").unwrap();
        assert_eq!(back.ids, table.ids);
        for (a, b) in back.rows.iter().zip(&table.rows) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 5e-9 * y.abs());
            }
        }
        // Second pass is exact: the text is a fixed point.
        assert_eq!(spectra_csv(&back), text);
    }

    #[test]
    fn spectra_csv_errors_carry_positions() {
        let err = parse_spectra_csv("400,500\n0.1,abc\n", "f.csv")
            .unwrap_err()
            .to_string();
        assert!(err.contains("f.csv:2:2"), "{err}");
        let err = parse_spectra_csv("500,400\n", "f.csv")
            .unwrap_err()
            .to_string();
        assert!(err.contains("f.csv:1:2"), "{err}");
        let err = parse_spectra_csv("id,400,500\nx,0.1\n", "f.csv")
            .unwrap_err()
            .to_string();
        assert!(err.contains("expected 2 values"), "{err}");
    }

    #[test]
    fn empty_spectra_file() {
        assert!(parse_spectra_csv("", "e").unwrap().is_empty());
        assert!(parse_spectra_csv("400,500\n", "e").unwrap().is_empty());
    }

    #[test]
    fn raw_round_trip_is_bit_exact() {
        let data: Vec<f64> = (0..2 * 3 * 4)
            .map(|i| f64::from(i as f32 * 0.37f32))
            .collect();
        let img = ChannelImage::new(2, 3, 4, data).unwrap();
        let bytes = encode_raw(&img);
        let back = decode_raw(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(encode_raw(&back), bytes);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_raw(&bad)
            .unwrap_err()
            .to_string()
            .contains("offset 0"));
        assert!(decode_raw(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn ppm_round_trip() {
        let img = Rgb8Image {
            width: 2,
            height: 1,
            pixels: vec![[1, 2, 3], [255, 0, 128]],
        };
        let bytes = encode_ppm(&img);
        assert_eq!(decode_ppm(&bytes).unwrap(), img);
        assert!(decode_ppm(b"P5\n1 1\n255\n\0").is_err());
    }

    #[test]
    fn config_parsing() {
        let text = "# codec\nlr = 0.002\nlambda_rec = 1.5 # heavier\npairs_per_epoch = 512\n";
        let (cfg, lw) = parse_train_config(text, "t.cfg").unwrap();
        assert_eq!(cfg.lr, 0.002);
        assert_eq!(cfg.pairs_per_epoch, Some(512));
        assert_eq!(lw.rec, 1.5);
        assert_eq!(lw.e2e, LossWeights::default().e2e);
        let err = parse_train_config("bogus = 1\n", "t.cfg")
            .unwrap_err()
            .to_string();
        assert!(err.contains("t.cfg:1"), "{err}");
        let (c2, l2) = parse_train_config(&train_config_text(&cfg, &lw), "rt").unwrap();
        assert_eq!((c2, l2), (cfg, lw));
    }
}
