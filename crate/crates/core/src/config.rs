//! Flat `key = value` configuration files with dotted namespaces.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may appear once.
//! Consumers pull typed values out of a [`KeyValues`] and finally call
//! [`KeyValues::finish`], which rejects any key nobody asked for.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
    used: std::collections::BTreeSet<String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::BadConfig(format!("line {}: expected `key = value`", n + 1)))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::BadConfig(format!("line {}: empty key", n + 1)));
            }
            if kv.entries.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::BadConfig(format!("duplicate key `{key}`")));
            }
        }
        Ok(kv)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::MissingInput(format!("config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override, replacing any existing value.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::BadConfig(format!("override `{assignment}` is not `key=value`")))?;
        let key = k.trim();
        if key.is_empty() {
            return Err(Error::BadConfig(format!("override `{assignment}` has an empty key")));
        }
        self.entries.insert(key.to_string(), v.trim().to_string());
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Raw string value, marking the key as consumed.
    pub fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.entries.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::BadConfig(format!("`{key} = {v}`: {e}"))))
            .transpose()
    }

    pub fn get_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| Error::BadConfig(format!("missing key `{key}`")))
    }

    /// Comma-separated list; an empty value yields an empty list.
    pub fn get_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| parse_list(&v).map_err(|e| Error::BadConfig(format!("`{key}`: {e}"))))
            .transpose()
    }

    pub fn get_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key).as_deref() {
            None => Ok(default),
            Some("true" | "yes" | "1") => Ok(true),
            Some("false" | "no" | "0") => Ok(false),
            Some(v) => Err(Error::BadConfig(format!("`{key} = {v}` is not a boolean"))),
        }
    }

    /// Fails on the first key that was never read.
    pub fn finish(&self) -> Result<()> {
        match self.entries.keys().find(|k| !self.used.contains(*k)) {
            Some(k) => Err(Error::BadConfig(format!("unknown config key `{k}`"))),
            None => Ok(()),
        }
    }

    /// Canonical `key = value` rendering in sorted key order.
    pub fn canonical(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("`{s}`: {e}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_tracks_usage() {
        let mut kv = KeyValues::parse("# comment\nvpt.p = 30\n\nseed=7\nlist = 1, 2,3\n").unwrap();
        assert_eq!(kv.require::<usize>("vpt.p").unwrap(), 30);
        assert_eq!(kv.get_list::<u32>("list").unwrap().unwrap(), vec![1, 2, 3]);
        assert!(matches!(kv.finish(), Err(Error::BadConfig(m)) if m.contains("seed")));
        assert_eq!(kv.get_or("seed", 0u64).unwrap(), 7);
        kv.finish().unwrap();
    }

    #[test]
    fn overrides_replace_values() {
        let mut kv = KeyValues::parse("a = 1").unwrap();
        kv.set("a=2").unwrap();
        kv.set("b = x").unwrap();
        assert_eq!(kv.require::<i32>("a").unwrap(), 2);
        assert!(kv.set("novalue").is_err());
        assert_eq!(kv.canonical(), "a = 2\nb = x\n");
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(KeyValues::parse("just text").is_err());
        assert!(KeyValues::parse("a = 1\na = 2").is_err());
        let mut kv = KeyValues::parse("n = abc\nflag = maybe").unwrap();
        assert!(kv.get::<usize>("n").is_err());
        assert!(kv.get_bool("flag", false).is_err());
    }
}
