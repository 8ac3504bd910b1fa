//! Supervision and evaluation inputs: WiC constraints, gold change ratings
//! and scoring targets, with their tab-separated text formats.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{data_lines, read_text, write_atomic};
use crate::store::EmbeddingStore;

/// Whether the target word keeps its meaning across the two occurrences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Different = 0,
    Same = 1,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Label::Different),
            1 => Some(Label::Same),
            _ => None,
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn is_same(self) -> bool {
        self == Label::Same
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Same => Label::Different,
            Label::Different => Label::Same,
        }
    }
}

/// A labelled pair of embedding ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub id1: String,
    pub id2: String,
    pub label: Label,
}

impl Constraint {
    pub fn new(id1: impl Into<String>, id2: impl Into<String>, label: Label) -> Result<Self> {
        let (id1, id2) = (id1.into(), id2.into());
        if id1 == id2 {
            return Err(Error::Validation(format!("constraint pairs '{id1}' with itself")));
        }
        Ok(Self { id1, id2, label })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConstraintSet {
    pub constraints: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new(constraints: Vec<Constraint>) -> Self {
        Self { constraints }
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Constraint> {
        self.constraints.iter()
    }

    /// `(same, different)` counts.
    pub fn label_counts(&self) -> (usize, usize) {
        let same = self.constraints.iter().filter(|c| c.label.is_same()).count();
        (same, self.constraints.len() - same)
    }

    /// Copy with every label inverted.
    pub fn flipped(&self) -> Self {
        Self::new(
            self.constraints
                .iter()
                .map(|c| Constraint {
                    label: c.label.flipped(),
                    ..c.clone()
                })
                .collect(),
        )
    }

    /// Resolves every id against `store`, returning row-index triples.
    pub fn resolve(&self, store: &EmbeddingStore) -> Result<Vec<(usize, usize, Label)>> {
        self.constraints
            .iter()
            .map(|c| Ok((store.resolve(&c.id1)?, store.resolve(&c.id2)?, c.label)))
            .collect()
    }

    /// Parses `id1<TAB>id2<TAB>label` lines; ids must exist in `store`.
    pub fn parse(text: &str, store: &EmbeddingStore) -> Result<Self> {
        let mut out = Vec::new();
        for (line, l) in data_lines(text) {
            let fields: Vec<&str> = l.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line,
                    msg: "expected id1<TAB>id2<TAB>label".into(),
                });
            }
            let label = fields[2]
                .trim()
                .parse::<u8>()
                .ok()
                .and_then(Label::from_u8)
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("label must be 0 or 1, got '{}'", fields[2]),
                })?;
            for id in &fields[..2] {
                if store.index_of(id).is_none() {
                    return Err(Error::Data(format!("line {line}: unknown embedding id '{id}'")));
                }
            }
            let c = Constraint::new(fields[0], fields[1], label).map_err(|e| match e {
                Error::Validation(msg) => Error::Validation(format!("line {line}: {msg}")),
                other => other,
            })?;
            out.push(c);
        }
        Ok(Self::new(out))
    }

    pub fn read(path: &Path, store: &EmbeddingStore) -> Result<Self> {
        Self::parse(&read_text(path)?, store)
    }

    pub fn to_text(&self) -> String {
        self.constraints
            .iter()
            .map(|c| format!("{}\t{}\t{}\n", c.id1, c.id2, c.label.as_u8()))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

/// See [`ConstraintSet::read`].
pub fn read_constraints(path: &Path, store: &EmbeddingStore) -> Result<ConstraintSet> {
    ConstraintSet::read(path, store)
}

/// Human semantic-change ratings per target word.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GoldRatings {
    entries: BTreeMap<String, f64>,
}

impl GoldRatings {
    pub fn new(entries: impl IntoIterator<Item = (String, f64)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (w, r) in entries {
            if !r.is_finite() {
                return Err(Error::NonFinite(format!("gold rating for '{w}' is {r}")));
            }
            if map.insert(w.clone(), r).is_some() {
                return Err(Error::Data(format!("duplicate gold entry for '{w}'")));
            }
        }
        if map.len() < 2 {
            return Err(Error::Input("gold ratings need at least two words".into()));
        }
        Ok(Self { entries: map })
    }

    pub fn get(&self, word: &str) -> Option<f64> {
        self.entries.get(word).copied()
    }

    pub fn require(&self, word: &str) -> Result<f64> {
        self.get(word)
            .ok_or_else(|| Error::Data(format!("no gold rating for '{word}'")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Parses `word<TAB>rating` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (line, l) in data_lines(text) {
            let (word, rating) = l.split_once('\t').ok_or_else(|| Error::Parse {
                line,
                msg: "expected word<TAB>rating".into(),
            })?;
            let rating: f64 = rating.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad rating '{rating}'"),
            })?;
            entries.push((word.to_string(), rating));
        }
        Self::new(entries)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?)
    }

    pub fn to_text(&self) -> String {
        self.iter().map(|(w, r)| format!("{w}\t{r}\n")).collect()
    }
}

/// A word to score between two corpora.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSpec {
    pub word: String,
    pub corpus1: String,
    pub corpus2: String,
}

impl TargetSpec {
    pub fn new(word: impl Into<String>, corpus1: impl Into<String>, corpus2: impl Into<String>) -> Self {
        Self {
            word: word.into(),
            corpus1: corpus1.into(),
            corpus2: corpus2.into(),
        }
    }
}

/// Parses `word<TAB>corpus_id_1<TAB>corpus_id_2` lines.
pub fn parse_targets(text: &str) -> Result<Vec<TargetSpec>> {
    data_lines(text)
        .map(|(line, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::Parse {
                    line,
                    msg: "expected word<TAB>corpus1<TAB>corpus2".into(),
                });
            }
            Ok(TargetSpec::new(f[0], f[1], f[2]))
        })
        .collect()
}

pub fn read_targets(path: &Path) -> Result<Vec<TargetSpec>> {
    parse_targets(&read_text(path)?)
}

pub fn targets_to_text(targets: &[TargetSpec]) -> String {
    targets
        .iter()
        .map(|t| format!("{}\t{}\t{}\n", t.word, t.corpus1, t.corpus2))
        .collect()
}
