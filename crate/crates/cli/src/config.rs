//! `key = value` experiment files. Keys are the long flag names of `run` / `table`.

use std::collections::BTreeMap;
use std::path::Path;

pub const KEYS: [&str; 9] = [
    "problem", "method", "n", "periods", "tol", "iteration", "jacobian", "out", "residual-tolerance",
];

#[derive(Debug, Default, Clone, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", lineno + 1))?;
            let key = key.trim().replace('_', "-");
            if !KEYS.contains(&key.as_str()) {
                return Err(format!("line {}: unknown key '{key}'", lineno + 1));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_underscores() {
        let c = ConfigFile::parse("# kepler run\nproblem = kepler\nresidual_tolerance=1e-15  # tight\n\nn=10\n").unwrap();
        assert_eq!(c.get("problem"), Some("kepler"));
        assert_eq!(c.get("residual-tolerance"), Some("1e-15"));
        assert_eq!(c.get("n"), Some("10"));
        assert_eq!(c.get("method"), None);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_lines() {
        assert!(ConfigFile::parse("speed = 3").unwrap_err().contains("unknown key"));
        assert!(ConfigFile::parse("problem kepler").unwrap_err().contains("line 1"));
    }
}
