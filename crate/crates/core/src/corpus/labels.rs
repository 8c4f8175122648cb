use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Prefix {
    B,
    I,
}

/// A parsed BIO/IOB label: `O`, or a prefix plus entity class.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Entity { prefix: Prefix, class: String },
}

impl Tag {
    pub fn class(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Entity { class, .. } => Some(class),
        }
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(Tag::Outside);
        }
        let (prefix, class) = match s.split_once('-') {
            Some(("B", c)) => (Prefix::B, c),
            Some(("I", c)) => (Prefix::I, c),
            _ => return Err(Error::InvalidLabel(s.to_string())),
        };
        if class.is_empty() || class.chars().any(char::is_whitespace) {
            return Err(Error::InvalidLabel(s.to_string()));
        }
        Ok(Tag::Entity {
            prefix,
            class: class.to_string(),
        })
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Entity { prefix: Prefix::B, class } => write!(f, "B-{class}"),
            Tag::Entity { prefix: Prefix::I, class } => write!(f, "I-{class}"),
        }
    }
}

/// Ordered label set: `O` followed by `B-X`, `I-X` for each class `X`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaSpec", into = "SchemaSpec")]
pub struct LabelSchema {
    name: String,
    classes: Vec<String>,
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct SchemaSpec {
    name: String,
    classes: Vec<String>,
}

impl TryFrom<SchemaSpec> for LabelSchema {
    type Error = Error;
    fn try_from(s: SchemaSpec) -> Result<Self> {
        LabelSchema::new(&s.name, s.classes)
    }
}

impl From<LabelSchema> for SchemaSpec {
    fn from(s: LabelSchema) -> Self {
        SchemaSpec {
            name: s.name,
            classes: s.classes,
        }
    }
}

const MAIN_GERMEVAL: [&str; 4] = ["PER", "LOC", "ORG", "OTH"];

impl LabelSchema {
    pub fn new<S: Into<String>>(name: &str, classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        let mut labels = vec!["O".to_string()];
        for c in &classes {
            if c.is_empty() || c.contains(char::is_whitespace) {
                return Err(Error::InvalidArgument(format!("bad entity class `{c}`")));
            }
            labels.push(format!("B-{c}"));
            labels.push(format!("I-{c}"));
        }
        let index: HashMap<String, usize> = labels.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();
        if index.len() != labels.len() {
            return Err(Error::InvalidArgument("duplicate entity class".into()));
        }
        Ok(LabelSchema {
            name: name.to_string(),
            classes,
            labels,
            index,
        })
    }

    /// The 12 GermEval classes: four main classes with `deriv` and `part`
    /// sub-classes.
    pub fn germeval() -> Self {
        let classes = MAIN_GERMEVAL
            .iter()
            .map(|c| c.to_string())
            .chain(MAIN_GERMEVAL.iter().map(|c| format!("{c}deriv")))
            .chain(MAIN_GERMEVAL.iter().map(|c| format!("{c}part")));
        LabelSchema::new("germeval", classes).expect("static schema")
    }

    pub fn conll() -> Self {
        LabelSchema::new("conll", ["PER", "LOC", "ORG", "MISC"]).expect("static schema")
    }

    /// Union of CoNLL classes and the GermEval main classes, the target of
    /// the `-deriv` → MISC, `-part` → O mapping.
    pub fn combined() -> Self {
        LabelSchema::new("combined", ["PER", "LOC", "ORG", "OTH", "MISC"]).expect("static schema")
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "germeval" => Ok(Self::germeval()),
            "conll" => Ok(Self::conll()),
            "combined" => Ok(Self::combined()),
            other => Err(Error::InvalidArgument(format!("unknown label schema `{other}`"))),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| Error::InvalidLabel(label.to_string()))
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }

    /// Whether `label` is `O` or `B-`/`I-` of a class in this schema. Unlike
    /// [`LabelSchema::contains`], this also accepts IOB input.
    pub fn validate(&self, label: &str) -> Result<()> {
        match label.parse::<Tag>()? {
            Tag::Outside => Ok(()),
            Tag::Entity { class, .. } if self.classes.contains(&class) => Ok(()),
            _ => Err(Error::InvalidLabel(label.to_string())),
        }
    }
}

/// Rewrites IOB1 labels as BIO: an `I-X` that does not continue a chunk of
/// class `X` becomes `B-X`. BIO input passes through unchanged.
pub fn iob_to_bio<S: AsRef<str>>(labels: &[S]) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(labels.len());
    let mut prev: Option<Tag> = None;
    for l in labels {
        let tag: Tag = l.as_ref().parse()?;
        let fixed = match &tag {
            Tag::Entity { prefix: Prefix::I, class } => {
                let continues = matches!(&prev, Some(Tag::Entity { class: pc, .. }) if pc == class);
                if continues {
                    tag.clone()
                } else {
                    Tag::Entity {
                        prefix: Prefix::B,
                        class: class.clone(),
                    }
                }
            }
            _ => tag.clone(),
        };
        out.push(fixed.to_string());
        prev = Some(tag);
    }
    Ok(out)
}
