//! Trace files: a `# key=value` header followed by a CSV body.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub const TRACE_VERSION_KEY: &str = "trace_version";
pub const TRACE_VERSION: u32 = 1;
pub const COLUMNS: [&str; 10] = [
    "iter",
    "gap_x",
    "gap_y",
    "gap_z",
    "phi_surrogate",
    "step_norm_x",
    "step_norm_y",
    "lower_residual",
    "adjoint_residual",
    "wall_ms",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub gap_x: f64,
    pub gap_y: f64,
    pub gap_z: f64,
    pub phi_surrogate: f64,
    pub step_norm_x: f64,
    pub step_norm_y: f64,
    pub lower_residual: f64,
    pub adjoint_residual: f64,
    /// Cumulative solver time, gap evaluation excluded.
    pub wall_ms: f64,
}

/// Shortest round-tripping text for `v`, in exponent form when plain
/// decimals would be long.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e7).contains(&a) || !a.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

impl TraceRow {
    pub fn to_csv(&self) -> String {
        let cells = [
            self.gap_x,
            self.gap_y,
            self.gap_z,
            self.phi_surrogate,
            self.step_norm_x,
            self.step_norm_y,
            self.lower_residual,
            self.adjoint_residual,
        ];
        let cells: Vec<String> = cells.into_iter().map(fmt_f64).collect();
        format!("{},{},{:.3}", self.iter, cells.join(","), self.wall_ms)
    }

    fn parse(line: &str) -> Result<Self, String> {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != COLUMNS.len() {
            return Err(format!("expected {} columns, found {}", COLUMNS.len(), cells.len()));
        }
        let iter = cells[0].parse::<usize>().map_err(|_| format!("bad iter `{}`", cells[0]))?;
        let mut v = [0.0; 9];
        for (j, cell) in cells[1..].iter().enumerate() {
            v[j] = cell.parse::<f64>().map_err(|_| format!("bad {} `{cell}`", COLUMNS[j + 1]))?;
        }
        Ok(TraceRow {
            iter,
            gap_x: v[0],
            gap_y: v[1],
            gap_z: v[2],
            phi_surrogate: v[3],
            step_norm_x: v[4],
            step_norm_y: v[5],
            lower_residual: v[6],
            adjoint_residual: v[7],
            wall_ms: v[8],
        })
    }
}

pub fn format_header(pairs: &[(String, String)]) -> String {
    let mut s = String::new();
    writeln!(s, "# {TRACE_VERSION_KEY}={TRACE_VERSION}").unwrap();
    for (k, v) in pairs {
        writeln!(s, "# {k}={v}").unwrap();
    }
    writeln!(s, "{}", COLUMNS.join(",")).unwrap();
    s
}

/// Streams a trace to disk, flushing every row so a failed run still
/// leaves its prefix behind.
pub struct TraceWriter {
    path: PathBuf,
    file: std::io::BufWriter<std::fs::File>,
}

impl TraceWriter {
    pub fn create(path: &Path, header: &[(String, String)]) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        }
        let file = std::fs::File::create(path).map_err(CliError::io(path))?;
        let mut w = TraceWriter {
            path: path.to_path_buf(),
            file: std::io::BufWriter::new(file),
        };
        w.file.write_all(format_header(header).as_bytes()).map_err(CliError::io(path))?;
        Ok(w)
    }

    pub fn push(&mut self, row: &TraceRow) -> Result<()> {
        writeln!(self.file, "{}", row.to_csv()).map_err(CliError::io(&self.path))?;
        self.file.flush().map_err(CliError::io(&self.path))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: Vec<(String, String)>,
    pub rows: Vec<TraceRow>,
}

impl TraceFile {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Cumulative mean of `gap_z` over the rows.
    pub fn running_average(&self) -> Vec<f64> {
        running_average(self.rows.iter().map(|r| r.gap_z))
    }

    /// Short legend label built from the header.
    pub fn label(&self) -> String {
        let variant = self.get("variant").unwrap_or("?");
        let problem = self.get("problem").unwrap_or("?");
        match self.get("nu") {
            Some(nu) if self.get("schedule") == Some("experiment") => format!("{variant} {problem} nu={nu}"),
            _ => format!("{variant} {problem}"),
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| CliError::Trace {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut header = Vec::new();
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut columns_line = None;
        for (no, line) in lines.by_ref() {
            match line.strip_prefix('#') {
                Some(rest) => {
                    let (k, v) = rest
                        .trim()
                        .split_once('=')
                        .ok_or_else(|| err(no, format!("malformed header line `{line}`")))?;
                    header.push((k.trim().to_string(), v.trim().to_string()));
                }
                None => {
                    columns_line = Some((no, line));
                    break;
                }
            }
        }
        match header.first() {
            Some((k, v)) if k == TRACE_VERSION_KEY => {
                if v != &TRACE_VERSION.to_string() {
                    return Err(err(1, format!("unsupported trace version {v}")));
                }
            }
            _ => return Err(err(1, format!("missing `# {TRACE_VERSION_KEY}=` header"))),
        }
        let (no, cols) = columns_line.ok_or_else(|| err(header.len() + 1, "missing column header".into()))?;
        if cols.trim() != COLUMNS.join(",") {
            return Err(err(no, format!("expected columns `{}`", COLUMNS.join(","))));
        }
        let mut rows: Vec<TraceRow> = Vec::new();
        for (no, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row = TraceRow::parse(line).map_err(|m| err(no, m))?;
            if let Some(prev) = rows.last() {
                if row.iter <= prev.iter {
                    return Err(err(no, format!("iter {} does not increase after {}", row.iter, prev.iter)));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(err(no + 1, "trace body is empty".into()));
        }
        Ok(TraceFile { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&text, path)
    }
}

pub fn running_average(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut sum = 0.0;
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            sum += v;
            sum / (i + 1) as f64
        })
        .collect()
}

/// The trace body with the `wall_ms` column removed, for reproducibility
/// comparisons.
pub fn body_without_timing(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| match l.rsplit_once(',') {
            Some((head, _)) => head,
            None => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(iter: usize, gap: f64) -> TraceRow {
        TraceRow {
            iter,
            gap_x: gap,
            gap_y: 0.0,
            gap_z: gap,
            phi_surrogate: 1.5,
            step_norm_x: 0.1,
            step_norm_y: 0.2,
            lower_residual: 1e-10,
            adjoint_residual: 2e-10,
            wall_ms: 0.25,
        }
    }

    fn text(rows: &[TraceRow]) -> String {
        let mut s = format_header(&[("variant".into(), "opf".into())]);
        for r in rows {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }

    #[test]
    fn float_text_round_trips() {
        for v in [0.0, 1e-9, 0.1 + 0.2, -3.5e-300, 1e20, 12345.678, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(fmt_f64(1e-9), "1e-9");
        assert_eq!(fmt_f64(0.25), "0.25");
    }

    #[test]
    fn round_trip() {
        let rows = vec![row(0, 1.0), row(100, 0.5), row(199, 0.125)];
        let t = TraceFile::parse(&text(&rows), Path::new("t")).unwrap();
        assert_eq!(t.rows, rows);
        assert_eq!(t.get("variant"), Some("opf"));
        assert_eq!(t.running_average(), vec![1.0, 0.75, 1.625 / 3.0]);
    }

    #[test]
    fn errors_cite_lines() {
        let mut s = text(&[row(0, 1.0)]);
        s.push_str("5,1,2\n");
        let err = TraceFile::parse(&s, Path::new("t")).unwrap_err().to_string();
        assert!(err.starts_with("t:5:"), "{err}");

        let s = text(&[row(10, 1.0), row(5, 1.0)]);
        let err = TraceFile::parse(&s, Path::new("t")).unwrap_err().to_string();
        assert!(err.contains("t:5:") && err.contains("does not increase"), "{err}");

        let err = TraceFile::parse(&text(&[]), Path::new("t")).unwrap_err().to_string();
        assert!(err.contains("empty"), "{err}");
        assert!(TraceFile::parse("iter,gap\n", Path::new("t")).is_err());
    }

    #[test]
    fn timing_column_is_dropped() {
        let a = text(&[row(0, 1.0)]);
        let mut r = row(0, 1.0);
        r.wall_ms = 99.0;
        let b = text(&[r]);
        assert_ne!(a, b);
        assert_eq!(body_without_timing(&a), body_without_timing(&b));
    }
}
