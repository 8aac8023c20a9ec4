//! Error type shared by every pipeline stage.

use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Prompt had no tokens after trimming and punctuation stripping.
    EmptyPrompt,
    /// An adjective run ended without a known part or category noun.
    UnknownPartNoun { word: String },
    /// No garment-category noun found in the prompt.
    NoCategory,
    /// Token does not belong to the phrase tree it was queried against.
    UnknownToken { word: String },
    /// Two phrase trees disagree in category or phrase count.
    StructureMismatch { detail: String },
    /// Category has no layout template.
    UnknownCategory { name: String },
    /// Scene violates its category's layout template.
    InvalidScene { detail: String },
    /// Prototype enumeration produced no scenes.
    EmptyBank,
    /// A part mask with zero pixels was supplied.
    EmptyMask,
    /// A computation produced NaN or infinity.
    NonFinite { context: &'static str },
    /// Grid dimensions do not match the fixed canvas/latent geometry.
    BadShape { context: &'static str },
    /// Timestep outside the schedule's valid range.
    BadTimestep { t: usize, max: usize },
    /// Attention map entries do not form a probability distribution.
    InvalidDistribution { sum: f64 },
    /// Boolean masks of different pixel counts were combined.
    LengthMismatch { left: usize, right: usize },
    /// Images of different shapes were compared.
    ShapeMismatch,
    /// A configuration value is out of its documented range.
    InvalidConfig { detail: String },
    /// An edit request's sampler configuration disagrees with the engine's.
    CfgMismatch { detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EmptyPrompt => write!(f, "prompt is empty"),
            Error::UnknownPartNoun { word } => {
                write!(f, "adjective run ends at unknown word `{word}` instead of a part noun")
            }
            Error::NoCategory => write!(f, "prompt names no garment category"),
            Error::UnknownToken { word } => {
                write!(f, "token `{word}` is not part of the phrase tree")
            }
            Error::StructureMismatch { detail } => write!(f, "structure mismatch: {detail}"),
            Error::UnknownCategory { name } => write!(f, "unknown garment category `{name}`"),
            Error::InvalidScene { detail } => write!(f, "invalid scene: {detail}"),
            Error::EmptyBank => write!(f, "prototype enumeration produced no scenes"),
            Error::EmptyMask => write!(f, "part mask is empty"),
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::BadShape { context } => write!(f, "bad grid shape in {context}"),
            Error::BadTimestep { t, max } => write!(f, "timestep {t} outside [1, {max}]"),
            Error::InvalidDistribution { sum } => {
                write!(f, "attention map sums to {sum}, not 1")
            }
            Error::LengthMismatch { left, right } => {
                write!(f, "mask lengths differ: {left} vs {right}")
            }
            Error::ShapeMismatch => write!(f, "image shapes differ"),
            Error::InvalidConfig { detail } => write!(f, "invalid config: {detail}"),
            Error::CfgMismatch { detail } => write!(f, "config mismatch: {detail}"),
        }
    }
}

impl core::error::Error for Error {}
