use ner_core::corpus::{LabelSchema, Prefix, Tag};
use ner_core::{Error, Result};

/// Maps a GermEval label onto the combined schema: derivations become
/// `MISC`, partial mentions become `O`, everything else is unchanged.
/// Labels already in the combined schema pass through, which makes the
/// mapping idempotent.
pub fn map_labels_combined(label: &str) -> Result<String> {
    let tag: Tag = label.parse()?;
    let (prefix, class) = match &tag {
        Tag::Outside => return Ok("O".into()),
        Tag::Entity { prefix, class } => (*prefix, class.as_str()),
    };
    let germeval = LabelSchema::germeval();
    let combined = LabelSchema::combined();
    if !germeval.classes().iter().any(|c| c == class) && !combined.classes().iter().any(|c| c == class) {
        return Err(Error::InvalidLabel(label.to_string()));
    }
    let p = match prefix {
        Prefix::B => "B",
        Prefix::I => "I",
    };
    Ok(if class.ends_with("deriv") {
        format!("{p}-MISC")
    } else if class.ends_with("part") {
        "O".into()
    } else {
        label.to_string()
    })
}

/// Applies [`map_labels_combined`] to every label of a sentence.
pub fn map_sentence_combined<S: AsRef<str>>(labels: &[S]) -> Result<Vec<String>> {
    labels.iter().map(|l| map_labels_combined(l.as_ref())).collect()
}
