//! Number formatting and atomic file output.

use std::io::Write;
use std::path::{Path, PathBuf};

use aoi_core::{Policy, ValueTable64};

/// Formats `x` with 12 significant digits, in the shortest of fixed or
/// exponent notation; integral values keep a trailing `.0`.
pub fn fmt_num(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.0".into();
    }
    let sci = format!("{x:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        if !fixed.contains('.') {
            return format!("{fixed}.0");
        }
        let trimmed = fixed.trim_end_matches('0');
        if trimmed.ends_with('.') {
            format!("{trimmed}0")
        } else {
            trimmed.to_string()
        }
    } else {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{m}e{exp}")
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// In-memory CSV table, written out atomically.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Table { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("in-memory flush")
    }

    pub fn save(self, path: &Path) -> std::io::Result<PathBuf> {
        write_atomic(path, &self.into_bytes())?;
        Ok(path.to_path_buf())
    }
}

/// `v1,v2,b,value` in enumeration order.
pub fn values_table(values: &ValueTable64) -> Table {
    let mut t = Table::new(&["v1", "v2", "b", "value"]);
    for (s, v) in values.space().states().iter().zip(values.values()) {
        t.row([s.v1.to_string(), s.v2.to_string(), s.b().to_string(), fmt_num(*v)]);
    }
    t
}

/// `v1,v2,b,action` in enumeration order.
pub fn policy_table(policy: &Policy) -> Table {
    let mut t = Table::new(&["v1", "v2", "b", "action"]);
    for (s, a) in policy.space().states().iter().zip(policy.actions()) {
        t.row([s.v1.to_string(), s.v2.to_string(), s.b().to_string(), a.code().to_string()]);
    }
    t
}
