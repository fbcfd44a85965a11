//! Strict INI-style configuration.
//!
//! Sections in brackets, `key = value` lines, `#` or `;` comments. Keys may
//! carry dots (`kernel.gamma`). Vectors are bracketed lists `[1, 2, 3]`,
//! matrices bracketed row lists `[[1, 0], [0, 1]]`. Parsing is strict: every
//! key must be consumed by the experiment that runs, and leftovers are
//! reported with their line numbers.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug)]
pub struct ConfigError {
    pub message: String,
    pub line: Option<usize>,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            line: None,
        }
    }

    pub fn at(message: impl Into<String>, line: usize) -> Self {
        Self {
            message: message.into(),
            line: Some(line),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "config error (line {line}): {}", self.message),
            None => write!(f, "config error: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug)]
struct Entry {
    value: String,
    line: usize,
    consumed: Cell<bool>,
}

#[derive(Debug)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::at("unterminated section header", line_no))?
                    .trim();
                if name.is_empty() {
                    return Err(ConfigError::at("empty section name", line_no));
                }
                sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::at("expected `key = value`", line_no))?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(ConfigError::at("empty key", line_no));
            }
            let section = current
                .as_ref()
                .ok_or_else(|| ConfigError::at("key outside any [section]", line_no))?;
            let entries = sections.get_mut(section).expect("section registered");
            if entries.contains_key(key) {
                return Err(ConfigError::at(
                    format!("duplicate key `{key}` in [{section}]"),
                    line_no,
                ));
            }
            entries.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    line: line_no,
                    consumed: Cell::new(false),
                },
            );
        }
        Ok(Self { sections })
    }

    pub fn section(&self, name: &str) -> Result<SectionReader<'_>, ConfigError> {
        self.sections
            .get(name)
            .map(|entries| SectionReader {
                name: name.to_string(),
                entries,
            })
            .ok_or_else(|| ConfigError::new(format!("missing required section [{name}]")))
    }

    /// Every key must have been consumed by a reader; leftovers are rejected
    /// by name and line.
    pub fn finish(&self) -> Result<(), ConfigError> {
        for (section, entries) in &self.sections {
            for (key, entry) in entries {
                if !entry.consumed.get() {
                    return Err(ConfigError::at(
                        format!("unknown key `{key}` in [{section}]"),
                        entry.line,
                    ));
                }
            }
        }
        Ok(())
    }

    /// Flat echo of every key for the run report.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut flat = BTreeMap::new();
        for (section, entries) in &self.sections {
            for (key, entry) in entries {
                flat.insert(format!("{section}.{key}"), entry.value.clone());
            }
        }
        flat
    }
}

pub struct SectionReader<'a> {
    name: String,
    entries: &'a BTreeMap<String, Entry>,
}

impl<'a> SectionReader<'a> {
    fn raw(&self, key: &str) -> Option<&'a Entry> {
        self.entries.get(key).inspect(|e| e.consumed.set(true))
    }

    fn required(&self, key: &str) -> Result<&'a Entry, ConfigError> {
        self.raw(key)
            .ok_or_else(|| ConfigError::new(format!("missing key `{key}` in [{}]", self.name)))
    }

    pub fn str(&self, key: &str) -> Result<&'a str, ConfigError> {
        Ok(self.required(key)?.value.as_str())
    }

    pub fn str_opt(&self, key: &str) -> Option<&'a str> {
        self.raw(key).map(|e| e.value.as_str())
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        let entry = self.required(key)?;
        entry
            .value
            .parse()
            .map_err(|_| ConfigError::at(format!("`{key}` is not a number"), entry.line))
    }

    pub fn f64_opt(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(entry) => entry
                .value
                .parse()
                .map(Some)
                .map_err(|_| ConfigError::at(format!("`{key}` is not a number"), entry.line)),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        Ok(self.f64_opt(key)?.unwrap_or(default))
    }

    pub fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        let entry = self.required(key)?;
        entry
            .value
            .parse()
            .map_err(|_| ConfigError::at(format!("`{key}` is not an integer"), entry.line))
    }

    pub fn usize_opt(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(entry) => entry
                .value
                .parse()
                .map(Some)
                .map_err(|_| ConfigError::at(format!("`{key}` is not an integer"), entry.line)),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        Ok(self.usize_opt(key)?.unwrap_or(default))
    }

    pub fn u64_opt(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(entry) => entry
                .value
                .parse()
                .map(Some)
                .map_err(|_| ConfigError::at(format!("`{key}` is not an integer"), entry.line)),
        }
    }

    pub fn vec_f64(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let entry = self.required(key)?;
        parse_vector(&entry.value)
            .ok_or_else(|| ConfigError::at(format!("`{key}` is not a [..] list"), entry.line))
    }

    pub fn vec_f64_opt(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(entry) => parse_vector(&entry.value)
                .map(Some)
                .ok_or_else(|| ConfigError::at(format!("`{key}` is not a [..] list"), entry.line)),
        }
    }

    pub fn vec_usize_opt(&self, key: &str) -> Result<Option<Vec<usize>>, ConfigError> {
        match self.vec_f64_opt(key)? {
            None => Ok(None),
            Some(values) => {
                let mut out = Vec::with_capacity(values.len());
                for v in values {
                    if v < 0.0 || v.fract() != 0.0 {
                        return Err(ConfigError::new(format!(
                            "`{key}` must hold nonnegative integers"
                        )));
                    }
                    out.push(v as usize);
                }
                Ok(Some(out))
            }
        }
    }

    pub fn matrix_opt(&self, key: &str) -> Result<Option<Vec<Vec<f64>>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some(entry) => parse_matrix(&entry.value).map(Some).ok_or_else(|| {
                ConfigError::at(format!("`{key}` is not a [[..],[..]] matrix"), entry.line)
            }),
        }
    }
}

fn parse_vector(text: &str) -> Option<Vec<f64>> {
    let inner = text.trim().strip_prefix('[')?.strip_suffix(']')?.trim();
    if inner.is_empty() {
        return Some(Vec::new());
    }
    inner
        .split(',')
        .map(|part| part.trim().parse().ok())
        .collect()
}

fn parse_matrix(text: &str) -> Option<Vec<Vec<f64>>> {
    let inner = text.trim().strip_prefix('[')?.strip_suffix(']')?.trim();
    if inner.is_empty() {
        return Some(Vec::new());
    }
    let mut rows = Vec::new();
    let mut depth = 0usize;
    let mut start = None;
    for (i, ch) in inner.char_indices() {
        match ch {
            '[' => {
                if depth == 0 {
                    start = Some(i + 1);
                }
                depth += 1;
            }
            ']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    let row = &inner[start?..i];
                    rows.push(
                        row.split(',')
                            .map(|part| part.trim().parse().ok())
                            .collect::<Option<Vec<f64>>>()?,
                    );
                    start = None;
                }
            }
            _ => {}
        }
    }
    if depth != 0 {
        return None;
    }
    let width = rows.first().map(Vec::len)?;
    rows.iter().all(|r| r.len() == width).then_some(rows)
}
