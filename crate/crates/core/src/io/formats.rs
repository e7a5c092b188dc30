//! Delimited text tables, coincidence histograms and phase-mask files.
//!
//! Floats are written with Rust's shortest round-trip representation, so
//! every format here survives write → read → write byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::CoincidenceHistogram;
use crate::holography::{OpticalGrid, PhaseMask};

const COLUMNS_TAG: &str = "# columns:";

/// Named numeric columns of equal length plus free-form `# key: value` metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub data: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: Vec<(&str, Vec<f64>)>) -> Result<Self> {
        let len = columns.first().map_or(0, |c| c.1.len());
        if columns.iter().any(|c| c.1.len() != len) {
            return Err(Error::InvalidParameter("table columns differ in length".into()));
        }
        let (names, data) = columns.into_iter().map(|(n, d)| (n.to_string(), d)).unzip();
        Ok(Self {
            meta: Vec::new(),
            columns: names,
            data,
        })
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.push((key.to_string(), value.to_string()));
        self
    }

    pub fn rows(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(&self.data[i])
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(s, "# {k}: {v}");
        }
        let _ = writeln!(s, "{COLUMNS_TAG} {}", self.columns.join("\t"));
        for r in 0..self.rows() {
            let row: Vec<String> = self.data.iter().map(|c| format_f64(c[r])).collect();
            s.push_str(&row.join("\t"));
            s.push('\n');
        }
        s
    }

    /// Parses text produced by [`Table::to_text`]. Columns may be separated by
    /// tabs, commas or spaces.
    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = Vec::new();
        let mut columns: Option<Vec<String>> = None;
        let mut data: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix(COLUMNS_TAG) {
                let names: Vec<String> = rest.split('\t').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
                if names.is_empty() {
                    return Err(parse_error(line_no, "empty column list"));
                }
                data = vec![Vec::new(); names.len()];
                columns = Some(names);
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once(':') {
                    meta.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            let values = fields(trimmed)
                .map(|f| f.parse::<f64>().map_err(|_| parse_error(line_no, &format!("'{f}' is not a number"))))
                .collect::<Result<Vec<_>>>()?;
            let names = columns.get_or_insert_with(|| {
                data = vec![Vec::new(); values.len()];
                (0..values.len()).map(|c| format!("c{c}")).collect()
            });
            if values.len() != names.len() {
                return Err(parse_error(
                    line_no,
                    &format!("expected {} columns, found {}", names.len(), values.len()),
                ));
            }
            for (col, v) in data.iter_mut().zip(values) {
                col.push(v);
            }
        }
        Ok(Self {
            meta,
            columns: columns.unwrap_or_default(),
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }
}

/// Reads a file, naming it in the error.
pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| with_path(e, path))
}

pub(crate) fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Shortest representation that parses back to the same bits; exponent
/// notation outside [1e-4, 1e15).
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

fn fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(['\t', ',', ' ']).filter(|f| !f.is_empty())
}

fn parse_error(line: usize, message: &str) -> Error {
    Error::Parse {
        line,
        message: message.to_string(),
    }
}

pub fn histogram_to_text(hist: &CoincidenceHistogram) -> String {
    let mut s = format!("# label: {}\n{COLUMNS_TAG} tau_ns\tcounts\n", hist.label);
    for (t, c) in hist.bin_centers.iter().zip(&hist.counts) {
        let _ = writeln!(s, "{}\t{c}", format_f64(*t));
    }
    s
}

/// Two delimited columns, bin centre in ns and integer count; `#` lines are
/// comments. A `# label:` comment names the histogram, otherwise the file
/// stem does. Bins must be uniform within 1e-6 relative.
pub fn parse_histogram(text: &str, default_label: &str) -> Result<CoincidenceHistogram> {
    let mut label = default_label.to_string();
    let mut tau = Vec::new();
    let mut counts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("label:") {
                label = v.trim().to_string();
            }
            continue;
        }
        let f: Vec<&str> = fields(trimmed).collect();
        if f.len() != 2 {
            return Err(parse_error(line_no, &format!("expected 2 columns, found {}", f.len())));
        }
        let t: f64 = f[0]
            .parse()
            .map_err(|_| parse_error(line_no, &format!("'{}' is not a delay", f[0])))?;
        if !t.is_finite() {
            return Err(parse_error(line_no, "delay is not finite"));
        }
        if f[1].starts_with('-') {
            return Err(parse_error(line_no, &format!("negative count {}", f[1])));
        }
        let c: u64 = f[1]
            .parse()
            .map_err(|_| parse_error(line_no, &format!("'{}' is not a non-negative integer count", f[1])))?;
        tau.push(t);
        counts.push(c);
    }
    if tau.len() < 2 {
        return Err(Error::InvalidParameter("a histogram needs at least two bins".into()));
    }
    CoincidenceHistogram::new(tau, counts, label)
}

pub fn load_histogram(path: &Path) -> Result<CoincidenceHistogram> {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("histogram");
    parse_histogram(&read_text(path)?, stem)
}

pub fn save_histogram(path: &Path, hist: &CoincidenceHistogram) -> Result<()> {
    fs::write(path, histogram_to_text(hist))?;
    Ok(())
}

/// Sidecar describing the raw and image files of a mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSidecar {
    pub grid: OpticalGrid,
    /// rad/μm.
    pub carrier: (f64, f64),
    pub raw_file: String,
    pub image_file: String,
    /// Always "f64-le, row-major, x fastest, radians in [-pi, pi)".
    pub raw_layout: String,
    /// Always "gray = floor(256 (phase + pi) / 2pi), clamped to 255".
    pub image_encoding: String,
    pub seed: u64,
}

const RAW_LAYOUT: &str = "f64-le, row-major, x fastest, radians in [-pi, pi)";
const IMAGE_ENCODING: &str = "gray = floor(256 (phase + pi) / 2pi), clamped to 255";

/// 8-bit binary PGM of the wrapped phase.
pub fn mask_to_pgm(mask: &PhaseMask) -> Vec<u8> {
    let g = mask.grid;
    let mut out = format!("P5\n{} {}\n255\n", g.nx, g.ny).into_bytes();
    out.extend(mask.phase.iter().map(|p| {
        let level = ((p + std::f64::consts::PI) / std::f64::consts::TAU * 256.0).floor();
        level.clamp(0.0, 255.0) as u8
    }));
    out
}

pub fn mask_to_raw(mask: &PhaseMask) -> Vec<u8> {
    mask.phase.iter().flat_map(|p| p.to_le_bytes()).collect()
}

/// Writes `<stem>.pgm`, `<stem>.f64` and `<stem>.json` into `dir`.
pub fn write_mask(dir: &Path, stem: &str, mask: &PhaseMask, seed: u64) -> Result<Vec<PathBuf>> {
    let sidecar = MaskSidecar {
        grid: mask.grid,
        carrier: mask.carrier,
        raw_file: format!("{stem}.f64"),
        image_file: format!("{stem}.pgm"),
        raw_layout: RAW_LAYOUT.into(),
        image_encoding: IMAGE_ENCODING.into(),
        seed,
    };
    let paths = [
        dir.join(&sidecar.image_file),
        dir.join(&sidecar.raw_file),
        dir.join(format!("{stem}.json")),
    ];
    fs::write(&paths[0], mask_to_pgm(mask))?;
    fs::write(&paths[1], mask_to_raw(mask))?;
    fs::write(&paths[2], serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(paths.to_vec())
}

/// Reads a mask back from its JSON sidecar and raw file.
pub fn read_mask(sidecar_path: &Path) -> Result<(PhaseMask, MaskSidecar)> {
    let sidecar: MaskSidecar = serde_json::from_str(&read_text(sidecar_path)?)?;
    let dir = sidecar_path.parent().unwrap_or(Path::new("."));
    let raw = dir.join(&sidecar.raw_file);
    let bytes = fs::read(&raw).map_err(|e| with_path(e, &raw))?;
    sidecar.grid.validate()?;
    if bytes.len() != 8 * sidecar.grid.len() {
        return Err(Error::GridMismatch);
    }
    let phase: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    if phase.iter().any(|p| !(-std::f64::consts::PI..std::f64::consts::PI).contains(p)) {
        return Err(Error::InvalidParameter("raw mask phases must lie in [-pi, pi)".into()));
    }
    let mask = PhaseMask {
        grid: sidecar.grid,
        phase,
        carrier: sidecar.carrier,
    };
    Ok((mask, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_row_histogram() {
        let h = parse_histogram("# tau counts\n-0.1\t5\n0.0\t7\n0.1\t6\n", "x").unwrap();
        assert_eq!(h.counts, vec![5, 7, 6]);
        assert_eq!(h.label, "x");
        assert!((h.bin_width - 0.1).abs() < 1e-15);
    }

    #[test]
    fn comma_and_space_delimiters() {
        let h = parse_histogram("0,1\n1, 2\n2 3\n", "x").unwrap();
        assert_eq!(h.counts, vec![1, 2, 3]);
    }

    #[test]
    fn negative_count_is_rejected_with_its_line() {
        let err = parse_histogram("0\t1\n1\t-2\n2\t3\n", "x").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        assert!(matches!(
            parse_histogram("# header\n0\t1\n1\tabc\n", "x"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_histogram("0\t1\n1\t2\t3\n", "x"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(parse_histogram("0\t1.5\n1\t2\n", "x"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn non_uniform_bins_are_rejected() {
        assert!(matches!(
            parse_histogram("0\t1\n1\t1\n2.1\t1\n", "x"),
            Err(Error::NonUniformGrid(_))
        ));
    }

    #[test]
    fn large_histogram_round_trips() {
        let n = 100_000usize;
        let tau: Vec<f64> = (0..n).map(|i| (i as f64 - 50_000.0) * 0.0025).collect();
        let counts: Vec<u64> = (0..n as u64).map(|i| (i * 7919) % 1013).collect();
        let h = CoincidenceHistogram::new(tau, counts, "big").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.tsv");
        save_histogram(&path, &h).unwrap();
        let back = load_histogram(&path).unwrap();
        assert_eq!(back, h);
        assert!(back.bin_centers.iter().zip(&h.bin_centers).all(|(a, b)| a.to_bits() == b.to_bits()));
        let again = dir.path().join("again.tsv");
        save_histogram(&again, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn mask_files_round_trip() {
        let grid = OpticalGrid::with_field_of_view(16, 8.0, 0.97117, 30.0).unwrap();
        let phase: Vec<f64> = (0..grid.len()).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let mask = PhaseMask::new(grid, phase, (0.01, -0.02)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let first = write_mask(dir.path(), "m", &mask, 5).unwrap();
        let (back, sidecar) = read_mask(&first[2]).unwrap();
        assert_eq!(back, mask);
        assert_eq!(sidecar.seed, 5);
        let other = tempfile::tempdir().unwrap();
        let second = write_mask(other.path(), "m", &back, 5).unwrap();
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
        }
        let pgm = mask_to_pgm(&mask);
        assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
        assert_eq!(pgm.len(), 13 + 256);
    }

    proptest! {
        #[test]
        fn floats_round_trip(v in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            prop_assert_eq!(format_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }

        #[test]
        fn tables_round_trip(values in proptest::collection::vec(-1e300f64..1e300, 1..50)) {
            let t = Table::new(vec![("a", values.clone()), ("b", values.iter().map(|v| v * 1e-7).collect())])
                .unwrap()
                .with_meta("seed", 3);
            let text = t.to_text();
            let back = Table::parse(&text).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(back.to_text(), text);
        }
    }
}
