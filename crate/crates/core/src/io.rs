//! On-disk formats.
//!
//! * Binary field files: one ASCII header line `nx ny nz h t` followed by
//!   `nx*ny*nz` little-endian `f64` values in row-major order (x fastest).
//! * CSV: comma separated, `.` decimal, one header row.
//! * Key/value documents: `[section]` headers followed by `key = value`
//!   lines; `#` starts a comment. Keys are addressed as `section.key`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};
use crate::tumor::ModelState;

pub fn write_field(path: &Path, field: &ScalarField, t: f64) -> Result<()> {
    let g = field.spec();
    let mut bytes = format!("{} {} {} {:?} {:?}\n", g.nx, g.ny, g.nz, g.h, t).into_bytes();
    bytes.reserve(8 * g.len());
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_field(path: &Path) -> Result<(ScalarField, f64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let loc = path.display().to_string();
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(&loc, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::parse(&loc, "header is not UTF-8"))?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 5 {
        return Err(Error::parse(&loc, format!("expected `nx ny nz h t`, got `{header}`")));
    }
    let int = |s: &str| s.parse::<usize>().map_err(|e| Error::parse(&loc, e.to_string()));
    let real = |s: &str| s.parse::<f64>().map_err(|e| Error::parse(&loc, e.to_string()));
    let grid = GridSpec::new(int(parts[0])?, int(parts[1])?, int(parts[2])?, real(parts[3])?)?;
    let t = real(parts[4])?;
    let body = &bytes[nl + 1..];
    if body.len() != 8 * grid.len() {
        return Err(Error::parse(
            &loc,
            format!("expected {} bytes of data, found {}", 8 * grid.len(), body.len()),
        ));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((ScalarField::from_vec(grid, values)?, t))
}

/// Writes `b.bin`, `c.bin`, `o.bin`, `M.bin`, `A.bin` into `dir`.
pub fn export_state(dir: &Path, state: &ModelState, t: f64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, field) in ModelState::VARIABLES.iter().zip(state.fields()) {
        write_field(&dir.join(format!("{name}.bin")), field, t)?;
    }
    Ok(())
}

pub fn import_state(dir: &Path) -> Result<(ModelState, f64)> {
    let mut fields = Vec::with_capacity(5);
    let mut time = 0.0;
    for name in ModelState::VARIABLES {
        let (f, t) = read_field(&dir.join(format!("{name}.bin")))?;
        time = t;
        fields.push(f);
    }
    let mut it = fields.into_iter();
    let mut next = || it.next().expect("five fields");
    let state = ModelState::new(next(), next(), next(), next(), next())?;
    Ok((state, time))
}

/// Shortest round-trip representation, switching to exponent form for
/// very large or small magnitudes.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Minimal CSV table builder.
#[derive(Debug, Clone)]
pub struct CsvTable {
    header: Vec<String>,
    body: String,
}

impl CsvTable {
    pub fn new<I, T>(header: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            body: String::new(),
        }
    }

    pub fn columns(&self) -> usize {
        self.header.len()
    }

    /// Appends a row of pre-formatted cells.
    pub fn push_cells(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.body.push_str(&cells.join(","));
        self.body.push('\n');
    }

    pub fn push_row(&mut self, leading: &[usize], values: &[f64]) {
        let mut line = String::new();
        for (i, v) in leading.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            let _ = write!(line, "{v}");
        }
        for (i, v) in values.iter().enumerate() {
            if i > 0 || !leading.is_empty() {
                line.push(',');
            }
            line.push_str(&fmt_f64(*v));
        }
        debug_assert_eq!(leading.len() + values.len(), self.header.len());
        self.body.push_str(&line);
        self.body.push('\n');
    }

    pub fn render(&self) -> String {
        format!("{}\n{}", self.header.join(","), self.body)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.render().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Ordered `section.key = value` entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDocument {
    pub entries: Vec<(String, String)>,
}

impl KvDocument {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let loc = || format!("{source}:{}", lineno + 1);
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(loc(), "unterminated section header"))?;
                section = name.trim().to_string();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(loc(), format!("expected `key = value`, got `{line}`")))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::parse(loc(), "empty key"));
            }
            let full = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            entries.push((full, v.trim().to_string()));
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Last value wins.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        let key = key.into();
        let value = value.into();
        if let Some(slot) = self.entries.iter_mut().find(|(k, _)| *k == key) {
            slot.1 = value;
        } else {
            self.entries.push((key, value));
        }
    }

    /// Groups consecutive keys by their section prefix.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        let mut current: Option<&str> = None;
        for (key, value) in &self.entries {
            let (section, name) = match key.rsplit_once('.') {
                Some((s, n)) => (s, n),
                None => ("", key.as_str()),
            };
            if current != Some(section) {
                if current.is_some() {
                    out.push('\n');
                }
                if !section.is_empty() {
                    let _ = writeln!(out, "[{section}]");
                }
                current = Some(section);
            }
            let _ = writeln!(out, "{name} = {value}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.emit()).map_err(|e| Error::io(path, e))
    }
}
