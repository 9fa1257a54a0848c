//! Key-value settings: a `--config` file overlaid by command-line flags.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, Result};

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

impl Settings {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Settings::default();
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected `key = value`, got `{line}`", k + 1))?;
            s.values.insert(normalize(key), value.trim().to_string());
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        // an unreadable config is a configuration error (exit 2), not an I/O failure
        let text = std::fs::read_to_string(path).map_err(|e| anyhow!("reading config {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.values.insert(normalize(key), value.into());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("setting `{key}` = `{v}`: {e}")))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| anyhow!("missing setting `{key}`"))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            None => Ok(false),
            Some("true" | "yes" | "1" | "") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(anyhow!("setting `{key}` = `{v}` is not a boolean")),
        }
    }

    /// Comma-separated list.
    pub fn list(&self, key: &str) -> Vec<String> {
        self.raw(key)
            .map(|v| v.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect())
            .unwrap_or_default()
    }

    /// An ε grid, either `lo:hi:step` or a comma-separated list; must be
    /// ascending.
    pub fn grid(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(v) = self.raw(key) else { return Ok(None) };
        let grid = if v.contains(':') {
            let parts: Vec<f64> = v
                .split(':')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| anyhow!("setting `{key}` = `{v}`: {e}"))?;
            let [lo, hi, step] = parts[..] else {
                return Err(anyhow!("setting `{key}` = `{v}`: expected lo:hi:step"));
            };
            if !(step > 0.0) || hi < lo {
                return Err(anyhow!("setting `{key}` = `{v}`: need lo <= hi and step > 0"));
            }
            scalelab::pipeline::grid(lo, hi, step)
        } else {
            v.split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| anyhow!("setting `{key}` = `{v}`: {e}"))?
        };
        if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(anyhow!("setting `{key}` must be a non-empty ascending grid"));
        }
        Ok(Some(grid))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut s = Settings::parse("# comment\ndv = 5\neps-grid = 0.45:0.49:0.005 # nine knots\nfixed_graph = yes\n").unwrap();
        assert_eq!(s.require::<usize>("dv").unwrap(), 5);
        assert_eq!(s.grid("eps_grid").unwrap().unwrap().len(), 9);
        assert!(s.flag("fixed_graph").unwrap());
        s.set("dv", "3");
        assert_eq!(s.require::<usize>("dv").unwrap(), 3);
        assert!(s.get::<usize>("missing").unwrap().is_none());
    }

    #[test]
    fn bad_input() {
        assert!(Settings::parse("dv 5").is_err());
        let s = Settings::parse("dv = five\ngrid = 0.5,0.4").unwrap();
        assert!(s.require::<usize>("dv").is_err());
        assert!(s.grid("grid").is_err());
        assert_eq!(
            Settings::parse("grid = 0.4, 0.45").unwrap().grid("grid").unwrap().unwrap(),
            vec![0.4, 0.45]
        );
    }
}
