//! The model family: a GRU language model whose input at every step is the
//! word embedding, optionally concatenated with an attribute context.
//!
//! | variant                  | title encoder | h0 from title | context                     |
//! |--------------------------|---------------|---------------|-----------------------------|
//! | `RNN`                    |               |               |                             |
//! | `RNN-State`              | yes           | yes           |                             |
//! | `RNN-BOW`                |               |               | projected mean title embed  |
//! | `SAM-Cat`                |               |               | {category}                  |
//! | `SAM-Title-Att`          | yes           |               | {title attention}           |
//! | `SAM-Title-Att-State`    | yes           | yes           | {title attention}           |
//! | `SAM-Au-Att`             |               |               | {author}                    |
//! | `SAM-Title-Au-Att`       | yes           |               | {title attention, author}   |
//! | `SAM-Title-State-Au-Att` | yes           | yes           | {title attention, author}   |
//!
//! With more than one candidate the context is fused by attribute attention;
//! a single candidate is passed through unchanged.

mod sam;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{IndexedDocument, NUM_SPECIALS};
use crate::error::{Error, Result};
use crate::tensor::{grad_check, GradCheckReport};

pub use sam::{Architecture, Conditioning, ForwardPass, SamModel, StepCache, StepOutput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "RNN")]
    Rnn,
    #[serde(rename = "RNN-State")]
    RnnState,
    #[serde(rename = "RNN-BOW")]
    RnnBow,
    #[serde(rename = "SAM-Cat")]
    SamCat,
    #[serde(rename = "SAM-Title-Att")]
    SamTitleAtt,
    #[serde(rename = "SAM-Title-Att-State")]
    SamTitleAttState,
    #[serde(rename = "SAM-Au-Att")]
    SamAuAtt,
    #[serde(rename = "SAM-Title-Au-Att")]
    SamTitleAuAtt,
    #[serde(rename = "SAM-Title-State-Au-Att")]
    SamTitleStateAuAtt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Title,
    Author,
    Category,
}

impl AttributeKind {
    pub fn name(self) -> &'static str {
        match self {
            AttributeKind::Title => "title",
            AttributeKind::Author => "author",
            AttributeKind::Category => "category",
        }
    }
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Rnn,
        Variant::RnnState,
        Variant::RnnBow,
        Variant::SamCat,
        Variant::SamTitleAtt,
        Variant::SamTitleAttState,
        Variant::SamAuAtt,
        Variant::SamTitleAuAtt,
        Variant::SamTitleStateAuAtt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rnn => "RNN",
            Variant::RnnState => "RNN-State",
            Variant::RnnBow => "RNN-BOW",
            Variant::SamCat => "SAM-Cat",
            Variant::SamTitleAtt => "SAM-Title-Att",
            Variant::SamTitleAttState => "SAM-Title-Att-State",
            Variant::SamAuAtt => "SAM-Au-Att",
            Variant::SamTitleAuAtt => "SAM-Title-Au-Att",
            Variant::SamTitleStateAuAtt => "SAM-Title-State-Au-Att",
        }
    }

    /// Attributes fused by attribute attention, in candidate order.
    pub fn candidates(self) -> &'static [AttributeKind] {
        use AttributeKind::*;
        match self {
            Variant::Rnn | Variant::RnnState | Variant::RnnBow => &[],
            Variant::SamCat => &[Category],
            Variant::SamTitleAtt | Variant::SamTitleAttState => &[Title],
            Variant::SamAuAtt => &[Author],
            Variant::SamTitleAuAtt | Variant::SamTitleStateAuAtt => &[Title, Author],
        }
    }

    pub fn has_title_encoder(self) -> bool {
        self.state_init() || self.candidates().contains(&AttributeKind::Title)
    }

    /// Initial hidden state comes from the title encoder's last state.
    pub fn state_init(self) -> bool {
        matches!(self, Variant::RnnState | Variant::SamTitleAttState | Variant::SamTitleStateAuAtt)
    }

    pub fn bag_of_words(self) -> bool {
        self == Variant::RnnBow
    }

    pub fn needs_title(self) -> bool {
        self.has_title_encoder() || self.bag_of_words()
    }

    pub fn needs_author(self) -> bool {
        self.candidates().contains(&AttributeKind::Author)
    }

    pub fn needs_category(self) -> bool {
        self.candidates().contains(&AttributeKind::Category)
    }

    /// Whether the main cell reads `[embedding, context]` rather than the
    /// embedding alone.
    pub fn has_context(self) -> bool {
        !self.candidates().is_empty() || self.bag_of_words()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Hidden size `d`; also the word-embedding width.
    pub hidden: usize,
    /// Attribute embedding width `d̃`.
    pub attr_dim: usize,
    pub vocab_size: usize,
    /// Author inventory size including the unknown author.
    pub n_authors: usize,
    /// Category inventory size including the unknown category.
    pub n_categories: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.attr_dim == 0 {
            return Err(Error::Config("hidden and attr_dim must be >= 1".into()));
        }
        if self.vocab_size <= NUM_SPECIALS {
            return Err(Error::Config(format!("vocab_size {} leaves no words", self.vocab_size)));
        }
        if self.variant.needs_author() && self.n_authors < 2 {
            return Err(Error::Config(format!("{} needs an author inventory", self.variant)));
        }
        if self.variant.needs_category() && self.n_categories < 2 {
            return Err(Error::Config(format!("{} needs a category inventory", self.variant)));
        }
        Ok(())
    }

    /// Width of the main cell's input.
    pub fn input_dim(&self) -> usize {
        if self.variant.has_context() {
            self.hidden + self.attr_dim
        } else {
            self.hidden
        }
    }
}

/// Finite-difference check of every parameter tensor of `model` on the
/// document NLL.
pub fn gradcheck_model(model: &SamModel, doc: &IndexedDocument, eps: f64, tol: f64) -> Result<GradCheckReport> {
    let pass = model.forward_document(doc)?;
    let mut store = model.params().clone();
    store.zero_grads();
    model.backward_document(&pass, &vec![1.0; pass.tokens()], &mut store.grads)?;
    let arch = model.arch();
    grad_check(|p| Ok(arch.forward(p, doc)?.total_nll), &mut store, eps, tol)
}
