use serde::{Deserialize, Serialize};

/// Binary class of an inspected bottle.
///
/// Votes are signed: `Defective` counts as −1 and `Qualified` as +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Defective,
    Qualified,
}

impl Label {
    /// The signed vote, −1 or +1.
    pub fn sign(self) -> i32 {
        match self {
            Label::Defective => -1,
            Label::Qualified => 1,
        }
    }

    /// Maps a real score to a label; a score of exactly zero maps to `Qualified`.
    pub fn from_score(score: f64) -> Self {
        if score < 0.0 {
            Label::Defective
        } else {
            Label::Qualified
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Defective => Label::Qualified,
            Label::Qualified => Label::Defective,
        }
    }
}
