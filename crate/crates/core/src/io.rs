//! Matrix files, model bundles and metrics documents.
//!
//! # `bmat` layout
//!
//! | offset | size | content                                   |
//! |--------|------|-------------------------------------------|
//! | 0      | 4    | ASCII `BMAT`                              |
//! | 4      | 4    | format version, `u32` little-endian, = 1  |
//! | 8      | 8    | rows, `u64` LE                            |
//! | 16     | 8    | cols, `u64` LE                            |
//! | 24     | 8·r·c| `f64` LE values, row-major                |
//!
//! Paths ending in `.csv` are read and written as comma-separated text
//! instead; a single leading line starting with `#` is treated as a header.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::bpca::BpcaModel;
use crate::error::{Error, Result};
use crate::links::LinkFunction;

pub const BMAT_MAGIC: &[u8; 4] = b"BMAT";
pub const BMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const MEAN_FILE: &str = "m.bmat";
pub const DIRECTIONS_FILE: &str = "V.bmat";
pub const BUNDLE_VERSION: u32 = 1;

/// Load-time conjugacy check threshold; violations are logged, not fatal.
pub const LOAD_CONJUGACY_WARN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Bmat,
    Csv,
}

impl MatrixFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => MatrixFormat::Csv,
            _ => MatrixFormat::Bmat,
        }
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match MatrixFormat::from_path(path) {
        MatrixFormat::Bmat => decode_bmat(&bytes).map_err(|r| format_err(path, r)),
        MatrixFormat::Csv => {
            let text = String::from_utf8(bytes).map_err(|_| format_err(path, "not valid UTF-8"))?;
            parse_csv(&text).map_err(|r| format_err(path, r))
        }
    }
}

pub fn write_matrix(x: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match MatrixFormat::from_path(path) {
        MatrixFormat::Bmat => encode_bmat(x),
        MatrixFormat::Csv => format_csv(x).into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_bmat(x: &DMatrix<f64>) -> Vec<u8> {
    let (r, c) = x.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * r * c);
    out.extend_from_slice(BMAT_MAGIC);
    out.extend_from_slice(&BMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(r as u64).to_le_bytes());
    out.extend_from_slice(&(c as u64).to_le_bytes());
    for i in 0..r {
        for j in 0..c {
            out.extend_from_slice(&x[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn decode_bmat(bytes: &[u8]) -> std::result::Result<DMatrix<f64>, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("truncated header ({} bytes)", bytes.len()));
    }
    if &bytes[0..4] != BMAT_MAGIC {
        return Err("bad magic bytes".into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != BMAT_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .ok_or("header dimensions overflow")?;
    if expected != bytes.len() as u64 {
        return Err(format!(
            "payload length mismatch: header says {rows}x{cols}, file has {} bytes",
            bytes.len()
        ));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err("non-finite value".into());
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

pub fn parse_csv(text: &str) -> std::result::Result<DMatrix<f64>, String> {
    let mut lines = text.lines().peekable();
    if lines.peek().is_some_and(|l| l.starts_with('#')) {
        lines.next();
    }
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| format!("line {}: cannot parse `{}`", lineno + 1, field.trim()))?;
            if !v.is_finite() {
                return Err(format!("line {}: non-finite value", lineno + 1));
            }
            values.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(format!("ragged rows: expected {c} fields, line {} has {count}", lineno + 1))
            }
            _ => {}
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols.unwrap_or(0), &values))
}

/// Shortest round-trip decimal representation, comma separated.
pub fn format_csv(x: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for row in x.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Single-column csv of 0-based integer labels.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().peekable();
    if lines.peek().is_some_and(|l| l.starts_with('#')) {
        lines.next();
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| format_err(path, format!("label line {}: `{}` is not a non-negative integer", i + 1, l.trim())))
        })
        .collect()
}

// ----- model bundles ----------------------------------------------------------

pub fn save_model(model: &BpcaModel, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = format!(
        "format_version={BUNDLE_VERSION}\nlink={}\nd={}\nk={}\ngauge={}\n",
        model.link(),
        model.dim(),
        model.components(),
        model.gauge().as_str()
    );
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(path, e))?;
    write_matrix(&DMatrix::from_row_slice(1, model.dim(), model.mean().as_slice()), dir.join(MEAN_FILE))?;
    write_matrix(model.directions(), dir.join(DIRECTIONS_FILE))
}

#[derive(Debug)]
struct Manifest {
    link: String,
    d: usize,
    k: usize,
    gauge: String,
}

fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut version = None;
    let mut link = None;
    let mut d = None;
    let mut k = None;
    let mut gauge = None;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Bundle(format!("manifest line `{line}` is not key=value")))?;
        let value = value.trim();
        let int = |v: &str| v.parse::<usize>().map_err(|_| Error::Bundle(format!("manifest `{key}` is not an integer: `{v}`")));
        match key.trim() {
            "format_version" => version = Some(int(value)?),
            "link" => link = Some(value.to_string()),
            "d" => d = Some(int(value)?),
            "k" => k = Some(int(value)?),
            "gauge" => gauge = Some(value.to_string()),
            other => return Err(Error::Bundle(format!("unknown manifest key `{other}`"))),
        }
    }
    let missing = |what: &str| Error::Bundle(format!("manifest is missing `{what}`"));
    let version = version.ok_or_else(|| missing("format_version"))?;
    if version != BUNDLE_VERSION as usize {
        return Err(Error::Bundle(format!("unsupported bundle version {version}")));
    }
    Ok(Manifest {
        link: link.ok_or_else(|| missing("link"))?,
        d: d.ok_or_else(|| missing("d"))?,
        k: k.ok_or_else(|| missing("k"))?,
        gauge: gauge.ok_or_else(|| missing("gauge"))?,
    })
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<BpcaModel> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(path, e))?;
    let manifest = parse_manifest(&text)?;
    let link = LinkFunction::parse(&manifest.link, manifest.d)
        .map_err(|e| Error::Bundle(format!("manifest link: {e}")))?;

    let mean = read_matrix(dir.join(MEAN_FILE))?;
    let directions = read_matrix(dir.join(DIRECTIONS_FILE))?;
    if mean.shape() != (1, manifest.d) {
        return Err(Error::Bundle(format!(
            "m.bmat is {}x{}, manifest says d={}",
            mean.nrows(),
            mean.ncols(),
            manifest.d
        )));
    }
    if directions.shape() != (manifest.d, manifest.k) {
        return Err(Error::Bundle(format!(
            "V.bmat is {}x{}, manifest says d={} k={}",
            directions.nrows(),
            directions.ncols(),
            manifest.d,
            manifest.k
        )));
    }
    let model = BpcaModel::from_parts(link, DVector::from_row_slice(mean.as_slice()), directions)
        .map_err(|e| Error::Bundle(e.to_string()))?;
    if manifest.gauge != model.gauge().as_str() {
        return Err(Error::Bundle(format!(
            "manifest gauge `{}` does not match link {}",
            manifest.gauge,
            model.link()
        )));
    }
    let err = model.conjugacy_error();
    if !(err <= LOAD_CONJUGACY_WARN) {
        log::warn!("loaded model violates conjugacy: ‖VᵀHV − I‖_F = {err:e}");
    }
    Ok(model)
}

// ----- metrics documents ------------------------------------------------------

/// Ordered `key=value` records, one per line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metrics {
    records: Vec<(String, String)>,
}

impl Metrics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.records.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push_list(&mut self, key: &str, values: &[f64]) -> &mut Self {
        let joined: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.push(key, joined.join(","))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.records.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.records.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Self {
        let records = text
            .lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self { records }
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.render().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn bundle_paths(dir: &Path) -> [PathBuf; 3] {
    [dir.join(MANIFEST_FILE), dir.join(MEAN_FILE), dir.join(DIRECTIONS_FILE)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::links::LinkKind;
    use proptest::prelude::*;

    #[test]
    fn csv_example() {
        let m = parse_csv("1,2\n3,4").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let m = parse_csv("# a,b\n1, 2\n\n3,4\n").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert!(parse_csv("1,2\n3").unwrap_err().contains("ragged"));
        assert!(parse_csv("1,x").is_err());
        assert!(parse_csv("1,inf").is_err());
    }

    #[test]
    fn bmat_layout_is_exact() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, -2.5]);
        let bytes = encode_bmat(&m);
        let mut want = b"BMAT".to_vec();
        want.extend_from_slice(&[1, 0, 0, 0]);
        want.extend_from_slice(&[1, 0, 0, 0, 0, 0, 0, 0]);
        want.extend_from_slice(&[2, 0, 0, 0, 0, 0, 0, 0]);
        want.extend_from_slice(&1.0f64.to_le_bytes());
        want.extend_from_slice(&(-2.5f64).to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn bmat_rejects_corruption() {
        let good = encode_bmat(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode_bmat(&bad).unwrap_err().contains("magic"));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(decode_bmat(&bad).unwrap_err().contains("version"));
        assert!(decode_bmat(&good[..good.len() - 1]).unwrap_err().contains("length"));
        let mut bad = good.clone();
        let n = bad.len();
        bad[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode_bmat(&bad).unwrap_err().contains("non-finite"));
    }

    #[test]
    fn empty_bmat_parses() {
        let m = decode_bmat(&encode_bmat(&DMatrix::zeros(0, 3))).unwrap();
        assert_eq!(m.shape(), (0, 3));
    }

    #[test]
    fn manifest_round_trips_leaky_slope() {
        let text = "format_version=1\nlink=leaky-relu:0.01\nd=3\nk=1\ngauge=none\n";
        let m = parse_manifest(text).unwrap();
        assert_eq!(
            m.link.parse::<LinkKind>().unwrap(),
            LinkKind::LeakyRelu { beta: 0.01 }
        );
        assert!(parse_manifest("format_version=2\nlink=identity\nd=1\nk=1\ngauge=none").is_err());
        assert!(parse_manifest("format_version=1\nlink=identity\nd=1\ngauge=none").is_err());
        assert!(parse_manifest("format_version=1\nbogus").is_err());
    }

    #[test]
    fn metrics_render_and_parse() {
        let mut m = Metrics::new();
        m.push("epochs_run", 3).push_list("loss_history", &[3.0, 2.5, 0.125]);
        let text = m.render();
        assert_eq!(text, "epochs_run=3\nloss_history=3,2.5,0.125\n");
        assert_eq!(Metrics::parse(&text), m);
    }

    proptest! {
        #[test]
        fn bmat_round_trip_is_bitwise(rows in 0usize..6, cols in 0usize..6, seed in any::<u64>()) {
            let mut state = seed;
            let m = DMatrix::from_fn(rows, cols, |_, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let bits = (state >> 12) | 0x3ff0_0000_0000_0000;
                (f64::from_bits(bits) - 1.5) * 1e3
            });
            let bytes = encode_bmat(&m);
            let back = decode_bmat(&bytes).unwrap();
            prop_assert_eq!(back.shape(), m.shape());
            for (a, b) in back.iter().zip(m.iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(encode_bmat(&back), bytes);
        }

        #[test]
        fn csv_round_trip_is_exact(vals in proptest::collection::vec(-1e6f64..1e6, 1..24)) {
            let cols = 3.min(vals.len());
            let rows = vals.len() / cols;
            let m = DMatrix::from_row_slice(rows, cols, &vals[..rows * cols]);
            let back = parse_csv(&format_csv(&m)).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
