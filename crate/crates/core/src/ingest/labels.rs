use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Rhythm class. Discriminants fix the class index used by the classifier
/// and the confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Class {
    Normal = 0,
    Af = 1,
    Other = 2,
    Noise = 3,
}

impl Class {
    pub const ALL: [Class; 4] = [Class::Normal, Class::Af, Class::Other, Class::Noise];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Challenge annotation symbol.
    pub fn symbol(self) -> char {
        match self {
            Class::Normal => 'N',
            Class::Af => 'A',
            Class::Other => 'O',
            Class::Noise => '~',
        }
    }

    pub fn from_symbol(s: &str) -> Option<Self> {
        match s {
            "N" => Some(Class::Normal),
            "A" => Some(Class::Af),
            "O" => Some(Class::Other),
            "~" => Some(Class::Noise),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Normal => "Normal",
            Class::Af => "AF",
            Class::Other => "Other",
            Class::Noise => "Noise",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Record id → class, ordered by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet {
    labels: BTreeMap<String, Class>,
}

impl LabelSet {
    pub fn get(&self, id: &str) -> Option<Class> {
        self.labels.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Class)> {
        self.labels.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn insert(&mut self, id: impl Into<String>, class: Class) -> Result<()> {
        let id = id.into();
        if self.labels.contains_key(&id) {
            return Err(Error::invalid(format!("duplicate id '{id}'")));
        }
        self.labels.insert(id, class);
        Ok(())
    }

    /// Ids from `ids` that have no label.
    pub fn missing<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        ids.into_iter()
            .filter(|id| !self.labels.contains_key(*id))
            .map(str::to_string)
            .collect()
    }
}

/// Parse challenge-style `id,label` lines (no header).
pub fn parse_labels(text: &str) -> Result<LabelSet> {
    let mut set = LabelSet::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(Error::Label {
                line: line_no,
                message: format!("expected 2 columns, found {}", fields.len()),
            });
        }
        let class = Class::from_symbol(fields[1]).ok_or_else(|| Error::Label {
            line: line_no,
            message: format!("unknown label symbol '{}'", fields[1]),
        })?;
        if fields[0].is_empty() {
            return Err(Error::Label {
                line: line_no,
                message: "empty record id".into(),
            });
        }
        set.insert(fields[0], class).map_err(|_| Error::Label {
            line: line_no,
            message: format!("duplicate id '{}'", fields[0]),
        })?;
    }
    Ok(set)
}

pub fn load_labels(path: &Path) -> Result<LabelSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}
