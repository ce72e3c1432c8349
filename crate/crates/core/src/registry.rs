//! Entity type groups.
//!
//! The registry file is UTF-8 text with one membership per line:
//! `group_name<TAB>qid<TAB>type_label`. Lines starting with `#` are comments;
//! a `# version: <tag>` comment names the registry version. Groups keep the
//! order of their first appearance.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{GeoError, Result};

const DEFAULT_REGISTRY: &str = include_str!("../data/entity_types.tsv");

/// A knowledge-graph item identifier (`Q` followed by digits).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Qid(String);

impl Qid {
    pub fn new(s: impl Into<String>) -> Result<Self> {
        let s = s.into();
        let valid = s.len() > 1
            && s.starts_with('Q')
            && s[1..].bytes().all(|b| b.is_ascii_digit());
        if valid {
            Ok(Self(s))
        } else {
            Err(GeoError::validation(format!("`{s}` is not a valid Q-id")))
        }
    }

    /// Extracts the Q-id from an entity URI such as
    /// `http://www.wikidata.org/entity/Q2981`.
    pub fn from_uri(uri: &str) -> Result<Self> {
        Self::new(uri.rsplit('/').next().unwrap_or(uri))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Qid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Qid {
    type Err = GeoError;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(s)
    }
}

impl TryFrom<String> for Qid {
    type Error = GeoError;

    fn try_from(s: String) -> Result<Self> {
        Self::new(s)
    }
}

impl From<Qid> for String {
    fn from(q: Qid) -> Self {
        q.0
    }
}

impl AsRef<str> for Qid {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemberType {
    pub qid: Qid,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EntityTypeGroup {
    pub name: String,
    pub members: Vec<MemberType>,
}

impl EntityTypeGroup {
    /// Two-letter column code used in evaluation tables.
    pub fn abbreviation(&self) -> String {
        abbreviation(&self.name)
    }

    pub fn contains(&self, qid: &Qid) -> bool {
        self.members.iter().any(|m| &m.qid == qid)
    }
}

/// Column code for a group name, e.g. `Religious Building` → `Rb`.
///
/// The shipped groups use fixed codes; other names use the initials of the
/// first two words, or the first two letters of a single word.
pub fn abbreviation(name: &str) -> String {
    const KNOWN: [(&str, &str); 12] = [
        ("Bridge", "Br"),
        ("Historic Site", "Hi"),
        ("Square", "Sq"),
        ("Castle", "Ca"),
        ("Monument", "Mo"),
        ("Museum", "Mu"),
        ("Building", "Bu"),
        ("Religious Building", "Rb"),
        ("Tower", "To"),
        ("Tourist Attraction", "Ta"),
        ("Waterfall", "Wa"),
        ("Skyscraper", "Sk"),
    ];
    if let Some((_, code)) = KNOWN.iter().find(|(n, _)| *n == name) {
        return code.to_string();
    }
    let words: Vec<&str> = name.split_whitespace().collect();
    let mut chars: Vec<char> = match words.as_slice() {
        [] => Vec::new(),
        [one] => one.chars().take(2).collect(),
        [first, second, ..] => first
            .chars()
            .take(1)
            .chain(second.chars().take(1))
            .collect(),
    };
    for c in chars.iter_mut().skip(1) {
        *c = c.to_ascii_lowercase();
    }
    chars.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeRegistry {
    version: String,
    groups: Vec<EntityTypeGroup>,
}

/// The shipped registry of 12 groups over 35 member types.
pub fn default_type_registry() -> Result<TypeRegistry> {
    TypeRegistry::parse(DEFAULT_REGISTRY)
}

impl TypeRegistry {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut version = None;
        let mut groups: Vec<EntityTypeGroup> = Vec::new();
        let mut seen_types: Vec<(Qid, usize)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("version:") {
                    version = Some(v.trim().to_string());
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [group, qid, label] = fields.as_slice() else {
                return Err(GeoError::parse(
                    line_no,
                    format!("expected 3 tab-separated fields, found {}", fields.len()),
                ));
            };
            let group = group.trim();
            if group.is_empty() {
                return Err(GeoError::parse(line_no, "empty group name"));
            }
            let qid = Qid::new(qid.trim()).map_err(|e| GeoError::parse(line_no, e.to_string()))?;
            if let Some((_, first)) = seen_types.iter().find(|(q, _)| q == &qid) {
                return Err(GeoError::parse(
                    line_no,
                    format!("type {qid} already listed on line {first}"),
                ));
            }
            seen_types.push((qid.clone(), line_no));
            let member = MemberType {
                qid,
                label: label.trim().to_string(),
            };
            match groups.iter_mut().find(|g| g.name == group) {
                Some(g) => g.members.push(member),
                None => groups.push(EntityTypeGroup {
                    name: group.to_string(),
                    members: vec![member],
                }),
            }
        }
        if groups.is_empty() {
            return Err(GeoError::parse(1, "registry lists no groups"));
        }
        let version = version.unwrap_or_else(|| {
            let digest = crate::hash::content_hash(text.as_bytes()).unwrap_or_default();
            format!("sha256:{}", &digest[..12])
        });
        Ok(Self { version, groups })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn groups(&self) -> &[EntityTypeGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn total_types(&self) -> usize {
        self.groups.iter().map(|g| g.members.len()).sum()
    }

    pub fn group(&self, name: &str) -> Option<&EntityTypeGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// Position of a group in registry order.
    pub fn position(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    pub fn group_for_type(&self, qid: &Qid) -> Option<&EntityTypeGroup> {
        self.groups.iter().find(|g| g.contains(qid))
    }

    /// Resolves group names, rejecting unknown ones and empty selections.
    /// Duplicates are dropped; the first occurrence keeps its place.
    pub fn resolve<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<&EntityTypeGroup>> {
        if names.is_empty() {
            return Err(GeoError::validation("select at least one entity type group"));
        }
        let mut out: Vec<&EntityTypeGroup> = Vec::with_capacity(names.len());
        for name in names {
            let name = name.as_ref();
            let g = self
                .group(name)
                .ok_or_else(|| GeoError::validation(format!("unknown entity type group `{name}`")))?;
            if !out.iter().any(|x| x.name == g.name) {
                out.push(g);
            }
        }
        Ok(out)
    }
}
