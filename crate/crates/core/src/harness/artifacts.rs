//! On-disk artifacts: JSON-lines metrics, point tables, SVG figures, run
//! manifests and directory locks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::sha256_hex;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".velab.lock";

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp~");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Appends one JSON object per line; every line carries the run's config hash.
pub struct JsonlWriter {
    path: PathBuf,
    out: BufWriter<File>,
    config_hash: String,
}

impl JsonlWriter {
    /// Opens `path`, keeping only lines whose `iter` is at most `keep_through`.
    pub fn open(path: &Path, config_hash: &str, keep_through: Option<u64>) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let kept = match (keep_through, fs::read_to_string(path)) {
            (Some(limit), Ok(text)) => text
                .lines()
                .filter(|l| {
                    serde_json::from_str::<serde_json::Value>(l)
                        .ok()
                        .and_then(|v| v.get("iter").and_then(|i| i.as_u64()))
                        .is_some_and(|i| i <= limit)
                })
                .map(|l| format!("{l}\n"))
                .collect::<String>(),
            _ => String::new(),
        };
        let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        out.write_all(kept.as_bytes())
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out,
            config_hash: config_hash.to_string(),
        })
    }

    pub fn write<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let mut v = serde_json::to_value(record)?;
        if let serde_json::Value::Object(map) = &mut v {
            map.insert("config_hash".into(), self.config_hash.clone().into());
        }
        writeln!(self.out, "{v}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// `x y` per line in round-trip precision.
pub fn points_to_text(points: &[[f64; 2]]) -> String {
    let mut s = String::with_capacity(points.len() * 48);
    for p in points {
        let _ = writeln!(s, "{:e} {:e}", p[0], p[1]);
    }
    s
}

pub fn points_from_text(text: &str, path: &Path) -> Result<Vec<[f64; 2]>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            let mut it = l.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => Ok([x, y]),
                _ => Err(Error::Format {
                    kind: "points",
                    path: path.to_path_buf(),
                    message: format!("line {}: expected two numbers", i + 1),
                }),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct Layer<'a> {
    pub points: &'a [[f64; 2]],
    pub color: &'a str,
    pub opacity: f64,
    pub radius: f64,
}

/// Scatter plot over a square window. Output bytes depend only on the inputs.
pub fn scatter_svg(title: &str, window: f64, layers: &[Layer<'_>]) -> String {
    const SIZE: f64 = 600.0;
    let map = |v: f64| (v + window) / (2.0 * window) * SIZE;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{h}" viewBox="0 0 {SIZE} {h}">"#,
        h = SIZE + 30.0
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r#"<text x="8" y="20" font-family="sans-serif" font-size="14">{}</text>"#,
        xml_escape(title)
    );
    let _ = writeln!(s, r#"<g transform="translate(0,30)">"#);
    for layer in layers {
        let _ = writeln!(
            s,
            r#"<g fill="{}" fill-opacity="{}">"#,
            layer.color, layer.opacity
        );
        for p in layer.points {
            if p[0].abs() > window || p[1].abs() > window || !p[0].is_finite() || !p[1].is_finite()
            {
                continue;
            }
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{}"/>"#,
                map(p[0]),
                SIZE - map(p[1]),
                layer.radius
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</g>\n</svg>\n");
    s
}

/// Points colored on a blue→red ramp by `values` (linear between min and max).
pub fn colored_scatter_svg(
    title: &str,
    window: f64,
    points: &[[f64; 2]],
    values: &[f64],
) -> String {
    const SIZE: f64 = 600.0;
    let map = |v: f64| (v + window) / (2.0 * window) * SIZE;
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{h}" viewBox="0 0 {SIZE} {h}">"#,
        h = SIZE + 30.0
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r#"<text x="8" y="20" font-family="sans-serif" font-size="14">{} [{lo:.3e}, {hi:.3e}]</text>"#,
        xml_escape(title)
    );
    let _ = writeln!(s, r#"<g transform="translate(0,30)">"#);
    for (p, v) in points.iter().zip(values) {
        if p[0].abs() > window || p[1].abs() > window || !v.is_finite() {
            continue;
        }
        let u = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{}"/>"#,
            map(p[0]),
            SIZE - map(p[1]),
            ramp(u)
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

/// Grid heatmap; `cells` is row-major with row 0 at the bottom.
pub fn heatmap_svg(title: &str, n: usize, cells: &[f64], log_scale: bool) -> String {
    const SIZE: f64 = 600.0;
    let tf = |v: f64| if log_scale { v.max(1e-300).log10() } else { v };
    let vals: Vec<f64> = cells.iter().map(|v| tf(*v)).collect();
    let lo = vals
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    let hi = vals
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let w = SIZE / n.max(1) as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{h}" viewBox="0 0 {SIZE} {h}">"#,
        h = SIZE + 30.0
    );
    let _ = writeln!(
        s,
        r#"<text x="8" y="20" font-family="sans-serif" font-size="14">{}{} [{lo:.3}, {hi:.3}]</text>"#,
        xml_escape(title),
        if log_scale { " (log10)" } else { "" }
    );
    let _ = writeln!(s, r#"<g transform="translate(0,30)">"#);
    for iy in 0..n {
        for ix in 0..n {
            let v = vals[iy * n + ix];
            let u = if hi > lo && v.is_finite() {
                (v - lo) / (hi - lo)
            } else {
                0.0
            };
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                ix as f64 * w,
                SIZE - (iy + 1) as f64 * w,
                w + 0.05,
                w + 0.05,
                ramp(u)
            );
        }
    }
    s.push_str("</g>\n</svg>\n");
    s
}

fn ramp(u: f64) -> String {
    let u = u.clamp(0.0, 1.0);
    let r = (40.0 + 200.0 * u) as u8;
    let g = (60.0 + 80.0 * (1.0 - (2.0 * u - 1.0).abs())) as u8;
    let b = (220.0 - 190.0 * u) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub schema_version: u32,
    /// Relative path → sha256 of its bytes.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load_or_default(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self {
                schema_version: 1,
                files: BTreeMap::new(),
            }),
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    /// Records the current bytes of `dir/rel`.
    pub fn record(&mut self, dir: &Path, rel: &str) -> Result<()> {
        let path = dir.join(rel);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.files.insert(rel.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    /// Relative paths whose bytes are missing or differ from the recorded hash.
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|(rel, hash)| {
                fs::read(dir.join(rel))
                    .map(|b| &sha256_hex(&b) != *hash)
                    .unwrap_or(true)
            })
            .map(|(rel, _)| rel.clone())
            .collect()
    }
}

/// Writes `bytes` to `dir/rel` and records it in the directory manifest.
pub fn emit(dir: &Path, rel: &str, bytes: &[u8]) -> Result<()> {
    write_atomic(&dir.join(rel), bytes)?;
    let mut m = Manifest::load_or_default(dir)?;
    m.record(dir, rel)?;
    m.save(dir)
}

/// Exclusive ownership of a run directory for the lifetime of the value.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Refused(format!(
                    "{} is locked by another run (remove {} if stale)",
                    dir.display(),
                    path.display()
                )))
            }
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
