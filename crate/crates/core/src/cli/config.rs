//! `key = value` run files and the merge of file values under CLI flags.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Parsed config file. Keys are normalized so `keep_prob` and `keep-prob`
/// name the same setting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, (usize, String)>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('_', "-")
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("config line {line_no}: expected `key = value`, got `{line}`")))?;
            let key = normalize(k);
            if key.is_empty() {
                return Err(Error::config(format!("config line {line_no}: empty key")));
            }
            if values.insert(key.clone(), (line_no, v.trim().to_string())).is_some() {
                return Err(Error::config(format!("config line {line_no}: `{key}` set twice")));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|e| Error::config(format!("config `{}` is not UTF-8: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<(usize, &str)> {
        self.values.get(&normalize(key)).map(|(l, v)| (*l, v.as_str()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Flag,
    File,
    Default,
}

impl Source {
    fn label(self) -> &'static str {
        match self {
            Source::Flag => "flag",
            Source::File => "config",
            Source::Default => "default",
        }
    }
}

/// Picks each setting from the flag, then the file, then the default, and
/// remembers where every value came from.
#[derive(Debug)]
pub struct Resolver<'a> {
    file: &'a ConfigFile,
    seen: RefCell<Vec<(String, String, Source)>>,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a ConfigFile) -> Self {
        Self {
            file,
            seen: RefCell::new(Vec::new()),
        }
    }

    fn note(&self, key: &str, value: String, source: Source) {
        self.seen.borrow_mut().push((normalize(key), value, source));
    }

    /// Flag or file value, if either is present.
    pub fn opt<T>(&self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        if let Some(v) = flag {
            self.note(key, v.to_string(), Source::Flag);
            return Ok(Some(v));
        }
        match self.file.get(key) {
            Some((line, raw)) => {
                let v = raw
                    .parse::<T>()
                    .map_err(|e| Error::config(format!("config line {line}: bad value for `{key}`: {e}")))?;
                self.note(key, v.to_string(), Source::File);
                Ok(Some(v))
            }
            None => Ok(None),
        }
    }

    pub fn get<T>(&self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        match self.opt(key, flag)? {
            Some(v) => Ok(v),
            None => {
                self.note(key, default.to_string(), Source::Default);
                Ok(default)
            }
        }
    }

    pub fn require<T>(&self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.opt(key, flag)?
            .ok_or_else(|| Error::config(format!("missing --{key} (flag or config key `{key}`)")))
    }

    /// Settings in resolution order as `(key, value, source)`.
    pub fn settings(&self) -> Vec<(String, String, &'static str)> {
        self.seen
            .borrow()
            .iter()
            .map(|(k, v, s)| (k.clone(), v.clone(), s.label()))
            .collect()
    }

    /// File keys this command never asked for.
    pub fn unused(&self) -> Vec<String> {
        let seen = self.seen.borrow();
        self.file
            .keys()
            .filter(|k| !seen.iter().any(|(s, _, _)| s == k))
            .map(String::from)
            .collect()
    }

    /// Writes every effective setting and its source to the log.
    pub fn echo(&self, command: &str) {
        for (k, v, s) in self.settings() {
            log::info!("{command}: {k} = {v} ({s})");
        }
        for k in self.unused() {
            log::warn!("{command}: config key `{k}` is not used by this command");
        }
    }
}
