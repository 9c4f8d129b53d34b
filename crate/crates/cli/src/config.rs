//! TOML experiment files, `--set` overrides and the CLI error type.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::json;
use toml::{Table, Value};

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed configuration. Exit code 2.
    Config {
        message: String,
        location: Option<Location>,
    },
    /// Error raised by the simulation library.
    Core(afc_core::Error),
    /// A solver stopped before meeting its tolerance. Exit code 4.
    NotConverged(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub file: PathBuf,
    pub line: usize,
    pub column: usize,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config {
            message: message.into(),
            location: None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Core(afc_core::Error::Parse(_)) => 2,
            CliError::Core(e) if e.is_convergence() => 4,
            CliError::Core(_) => 3,
            CliError::NotConverged(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "config",
            4 => "convergence",
            _ => "precondition",
        }
    }

    /// Machine-readable report printed on stderr.
    pub fn report(&self) -> serde_json::Value {
        let mut body = json!({
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        match self {
            CliError::Config {
                location: Some(loc), ..
            } => {
                body["location"] = json!({
                    "file": loc.file.display().to_string(),
                    "line": loc.line,
                    "column": loc.column,
                });
            }
            CliError::Core(afc_core::Error::Convergence {
                iterations,
                residual,
                best,
            }) => {
                body["iterations"] = json!(iterations);
                body["residual"] = json!(residual);
                body["best_chi"] = serde_json::to_value(best.as_ref()).expect("χ serializes");
            }
            _ => {}
        }
        json!({ "error": body })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config {
                message,
                location: Some(loc),
            } => write!(f, "{}:{}:{}: {message}", loc.file.display(), loc.line, loc.column),
            CliError::Config { message, .. } => f.write_str(message),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::NotConverged(m) => f.write_str(m),
        }
    }
}

impl From<afc_core::Error> for CliError {
    fn from(e: afc_core::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// One-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Experiment parameters merged from a file and command-line overrides.
pub struct Experiment {
    table: Table,
    /// Directory against which relative paths in the file resolve.
    base_dir: PathBuf,
}

impl Experiment {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Experiment {
                table: Table::new(),
                base_dir: PathBuf::from("."),
            });
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let table: Table = text.parse().map_err(|e: toml::de::Error| {
            let location = e.span().map(|span| {
                let (line, column) = line_column(&text, span.start);
                Location {
                    file: path.to_path_buf(),
                    line,
                    column,
                }
            });
            CliError::Config {
                message: e.message().to_string(),
                location,
            }
        })?;
        Ok(Experiment {
            table,
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }

    /// Applies `key.path=value` overrides. Values are read as TOML
    /// literals, falling back to plain strings.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> CliResult<()> {
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("override '{item}' is not of the form key=value")))?;
            let value = format!("v = {raw}")
                .parse::<Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| Value::String(raw.to_string()));
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Sets a dotted key, creating intermediate tables.
    pub fn set(&mut self, key: &str, value: impl Into<Value>) -> CliResult<()> {
        let mut parts: Vec<&str> = key.split('.').collect();
        let last = parts.pop().filter(|s| !s.is_empty());
        let Some(last) = last else {
            return Err(CliError::config(format!("empty override key '{key}'")));
        };
        let mut table = &mut self.table;
        for part in parts {
            let entry = table
                .entry(part.to_string())
                .or_insert_with(|| Value::Table(Table::new()));
            table = entry
                .as_table_mut()
                .ok_or_else(|| CliError::config(format!("'{part}' in '{key}' is not a table")))?;
        }
        table.insert(last.to_string(), value.into());
        Ok(())
    }

    pub fn set_opt<V: Into<Value>>(&mut self, key: &str, value: Option<V>) -> CliResult<()> {
        match value {
            Some(v) => self.set(key, v),
            None => Ok(()),
        }
    }

    pub fn parse<T: DeserializeOwned>(&self) -> CliResult<T> {
        Value::Table(self.table.clone())
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(format!("invalid experiment parameters: {}", e.message())))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn table(&self) -> &Table {
        &self.table
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Deserialize, Debug, PartialEq)]
    struct Sample {
        a: f64,
        inner: Inner,
    }

    #[derive(Deserialize, Debug, PartialEq)]
    struct Inner {
        name: String,
        n: i64,
    }

    #[test]
    fn overrides_create_nested_keys() {
        let mut exp = Experiment::load(None).unwrap();
        exp.apply_overrides(&["a=2.5".into(), "inner.name=abc".into(), "inner.n=7".into()])
            .unwrap();
        let s: Sample = exp.parse().unwrap();
        assert_eq!(
            s,
            Sample {
                a: 2.5,
                inner: Inner { name: "abc".into(), n: 7 }
            }
        );
        assert!(exp.apply_overrides(&["novalue".into()]).is_err());
        assert!(exp.apply_overrides(&["a.b=1".into()]).is_err());
    }

    #[test]
    fn line_and_column() {
        assert_eq!(line_column("ab\ncd", 4), (2, 2));
        assert_eq!(line_column("x", 0), (1, 1));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::config("x").exit_code(), 2);
        assert_eq!(CliError::Core(afc_core::Error::Domain("x".into())).exit_code(), 3);
        assert_eq!(CliError::NotConverged("x".into()).exit_code(), 4);
        assert_eq!(CliError::Core(afc_core::Error::Parse("x".into())).exit_code(), 2);
    }

    #[test]
    fn convergence_report_carries_best_iterate() {
        let err = CliError::Core(afc_core::Error::Convergence {
            iterations: 200,
            residual: 0.5,
            best: Box::new(afc_core::tomography::ChiMatrix::identity_process()),
        });
        assert_eq!(err.exit_code(), 4);
        let report = err.report();
        assert_eq!(report["error"]["kind"], "convergence");
        assert_eq!(report["error"]["iterations"], 200);
        assert!(!report["error"]["best_chi"].is_null());
    }
}
