//! Closed-vocabulary prompt parsing into attribute-phrase trees.
//!
//! A prompt like "navy blue jacket with red collar" chunks greedily left to
//! right: each maximal run of known attribute adjectives followed by a part
//! or category noun forms one attribute phrase (AP). Conjunctions and unknown
//! function words between phrases are dropped; an unknown word that
//! interrupts an open adjective run is an error so vocabulary gaps surface
//! instead of being silently skipped.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Rgb, NEUTRAL};
use crate::world::{Category, LengthKind, PartId, PatternKind};

/// One lowercased word with its byte span in the source prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub span: (usize, usize),
}

/// Attribute feature carried by an adjective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttrFeature {
    Color(Rgb),
    Length(LengthKind),
    Pattern(PatternKind),
}

/// Closed vocabulary: part nouns, category head nouns, attribute adjectives
/// and droppable conjunctions. Word lists are ordered; ties elsewhere in the
/// pipeline break toward the lower index.
#[derive(Debug, Clone)]
pub struct Lexicon {
    part_nouns: Vec<(String, PartId)>,
    category_nouns: Vec<(String, Category)>,
    adjectives: Vec<(String, AttrFeature)>,
    conjunctions: Vec<String>,
}

impl Lexicon {
    pub fn new(
        part_nouns: Vec<(String, PartId)>,
        category_nouns: Vec<(String, Category)>,
        adjectives: Vec<(String, AttrFeature)>,
        conjunctions: Vec<String>,
    ) -> Result<Self> {
        let lex = Self { part_nouns, category_nouns, adjectives, conjunctions };
        lex.validate()?;
        Ok(lex)
    }

    /// Built-in vocabulary used by the shipped garment world.
    pub fn standard() -> Self {
        let color = |name: &str, rgb: Rgb| (name.to_string(), AttrFeature::Color(rgb));
        let part = |name: &str, id: PartId| (name.to_string(), id);
        let cat = |name: &str, id: Category| (name.to_string(), id);
        let lex = Self {
            part_nouns: alloc::vec![
                part("body", PartId::Body),
                part("sleeves", PartId::Sleeves),
                part("sleeve", PartId::Sleeves),
                part("collar", PartId::Collar),
                part("hood", PartId::Hood),
                part("pockets", PartId::Pockets),
                part("pocket", PartId::Pockets),
                part("buttons", PartId::Buttons),
                part("button", PartId::Buttons),
                part("belt", PartId::Belt),
            ],
            category_nouns: alloc::vec![
                cat("jacket", Category::Jacket),
                cat("sweater", Category::Sweater),
                cat("shirt", Category::Shirt),
                cat("dress", Category::Dress),
            ],
            adjectives: alloc::vec![
                color("red", [1.0, 0.0, 0.0]),
                color("blue", [0.0, 0.0, 1.0]),
                color("green", [0.0, 0.6, 0.0]),
                color("yellow", [1.0, 0.9, 0.0]),
                color("purple", [0.6, 0.0, 0.8]),
                color("navy", [0.05, 0.05, 0.35]),
                ("long".to_string(), AttrFeature::Length(LengthKind::Long)),
                ("short".to_string(), AttrFeature::Length(LengthKind::Short)),
                ("striped".to_string(), AttrFeature::Pattern(PatternKind::Striped)),
                ("plain".to_string(), AttrFeature::Pattern(PatternKind::Plain)),
                ("classic".to_string(), AttrFeature::Pattern(PatternKind::Plain)),
            ],
            conjunctions: alloc::vec!["and".to_string(), "with".to_string()],
        };
        lex.validate().expect("standard lexicon is valid");
        lex
    }

    fn validate(&self) -> Result<()> {
        let mut all: Vec<&str> = Vec::new();
        all.extend(self.part_nouns.iter().map(|(w, _)| w.as_str()));
        all.extend(self.category_nouns.iter().map(|(w, _)| w.as_str()));
        all.extend(self.adjectives.iter().map(|(w, _)| w.as_str()));
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                if a == b {
                    return Err(Error::InvalidConfig {
                        detail: alloc::format!("word `{a}` appears in two lexicon sets"),
                    });
                }
            }
        }
        for (word, feat) in &self.adjectives {
            if let AttrFeature::Color(rgb) = feat {
                if rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
                    return Err(Error::InvalidConfig {
                        detail: alloc::format!("color `{word}` outside [0,1]"),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn part_noun(&self, word: &str) -> Option<PartId> {
        self.part_nouns.iter().find(|(w, _)| w == word).map(|(_, id)| *id)
    }

    pub fn category_noun(&self, word: &str) -> Option<Category> {
        self.category_nouns.iter().find(|(w, _)| w == word).map(|(_, id)| *id)
    }

    pub fn adjective(&self, word: &str) -> Option<AttrFeature> {
        self.adjectives.iter().find(|(w, _)| w == word).map(|(_, f)| *f)
    }

    pub fn is_conjunction(&self, word: &str) -> bool {
        self.conjunctions.iter().any(|w| w == word)
    }

    /// Color adjectives in lexicon order.
    pub fn colors(&self) -> impl Iterator<Item = (&str, Rgb)> {
        self.adjectives.iter().filter_map(|(w, f)| match f {
            AttrFeature::Color(rgb) => Some((w.as_str(), *rgb)),
            _ => None,
        })
    }

    /// Nearest lexicon color by Euclidean RGB distance; ties break toward the
    /// lower lexicon index.
    pub fn snap_color(&self, rgb: Rgb) -> Option<(usize, &str, Rgb)> {
        let mut best: Option<(usize, &str, Rgb, f64)> = None;
        for (i, (name, c)) in self.colors().enumerate() {
            let d = crate::math::dist2(rgb, c);
            match best {
                Some((_, _, _, bd)) if d >= bd => {}
                _ => best = Some((i, name, c, d)),
            }
        }
        best.map(|(i, n, c, _)| (i, n, c))
    }
}

/// A run of attribute adjectives plus the part (or category) noun they bind
/// to. `part` is resolved from the noun; category nouns bind to the body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributePhrase {
    pub adjectives: Vec<Token>,
    pub noun: Token,
    pub part: PartId,
}

impl AttributePhrase {
    /// Byte span covering the phrase's first and last token.
    pub fn span(&self) -> (usize, usize) {
        let start = self.adjectives.first().map(|t| t.span.0).unwrap_or(self.noun.span.0);
        (start, self.noun.span.1)
    }

    /// Token texts in phrase order (adjectives then noun).
    pub fn token_texts(&self) -> Vec<&str> {
        let mut out: Vec<&str> = self.adjectives.iter().map(|t| t.text.as_str()).collect();
        out.push(&self.noun.text);
        out
    }

    /// Mean RGB of the phrase's color adjectives, or neutral gray if none.
    pub fn color_target(&self, lexicon: &Lexicon) -> Rgb {
        let mut acc = [0.0; 3];
        let mut n = 0usize;
        for tok in &self.adjectives {
            if let Some(AttrFeature::Color(rgb)) = lexicon.adjective(&tok.text) {
                acc[0] += rgb[0];
                acc[1] += rgb[1];
                acc[2] += rgb[2];
                n += 1;
            }
        }
        if n == 0 {
            NEUTRAL
        } else {
            [acc[0] / n as f64, acc[1] / n as f64, acc[2] / n as f64]
        }
    }

    /// First length adjective, if any.
    pub fn length_target(&self, lexicon: &Lexicon) -> Option<LengthKind> {
        self.adjectives.iter().find_map(|tok| match lexicon.adjective(&tok.text) {
            Some(AttrFeature::Length(k)) => Some(k),
            _ => None,
        })
    }

    pub fn has_color(&self, lexicon: &Lexicon) -> bool {
        self.adjectives
            .iter()
            .any(|t| matches!(lexicon.adjective(&t.text), Some(AttrFeature::Color(_))))
    }
}

/// Ordered attribute phrases of a prompt plus the garment category derived
/// from its head noun.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct APTree {
    pub full_prompt: String,
    pub category: Category,
    pub aps: Vec<AttributePhrase>,
}

impl APTree {
    /// All tokens across phrases, in prompt order.
    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.aps.iter().flat_map(|ap| ap.adjectives.iter().chain(core::iter::once(&ap.noun)))
    }

    /// Reassemble a canonical prompt from the phrase tokens. Reparsing the
    /// result yields the same phrase structure.
    pub fn regenerate(&self) -> String {
        let phrases: Vec<String> = self
            .aps
            .iter()
            .map(|ap| ap.token_texts().join(" "))
            .collect();
        phrases.join(" and ")
    }
}

/// Lowercase and split a prompt on non-alphanumeric characters.
pub fn tokenize(text: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b.is_ascii_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            tokens.push(Token { text: text[s..i].to_ascii_lowercase(), span: (s, i) });
        }
    }
    if let Some(s) = start {
        tokens.push(Token { text: text[s..].to_ascii_lowercase(), span: (s, bytes.len()) });
    }
    if tokens.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    Ok(tokens)
}

/// Greedy left-to-right chunking of tokens into attribute phrases.
///
/// The first category noun determines the tree's category and binds to the
/// body part. Conjunctions and unknown words are skipped only between
/// phrases; inside an open adjective run they raise `UnknownPartNoun`.
pub fn parse_aps(source: &str, tokens: &[Token], lexicon: &Lexicon) -> Result<APTree> {
    if tokens.is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let mut aps: Vec<AttributePhrase> = Vec::new();
    let mut category: Option<Category> = None;
    let mut run: Vec<Token> = Vec::new();
    for tok in tokens {
        if lexicon.adjective(&tok.text).is_some() {
            run.push(tok.clone());
        } else if let Some(part) = lexicon.part_noun(&tok.text) {
            aps.push(AttributePhrase {
                adjectives: core::mem::take(&mut run),
                noun: tok.clone(),
                part,
            });
        } else if let Some(cat) = lexicon.category_noun(&tok.text) {
            if category.is_none() {
                category = Some(cat);
            }
            aps.push(AttributePhrase {
                adjectives: core::mem::take(&mut run),
                noun: tok.clone(),
                part: PartId::Body,
            });
        } else if run.is_empty() {
            // Conjunction or unknown function word between phrases: drop it.
        } else {
            return Err(Error::UnknownPartNoun { word: tok.text.clone() });
        }
    }
    if let Some(dangling) = run.last() {
        return Err(Error::UnknownPartNoun { word: dangling.text.clone() });
    }
    let category = category.ok_or(Error::NoCategory)?;
    Ok(APTree { full_prompt: source.to_string(), category, aps })
}

/// Tokenize and chunk in one step.
pub fn parse(text: &str, lexicon: &Lexicon) -> Result<APTree> {
    let tokens = tokenize(text)?;
    parse_aps(text, &tokens, lexicon)
}

/// Indices of phrases that differ between two trees of the same shape
/// (the edit set Γ).
pub fn diff_aps(old: &APTree, new: &APTree) -> Result<Vec<usize>> {
    if old.category != new.category {
        return Err(Error::StructureMismatch {
            detail: alloc::format!(
                "categories differ: {} vs {}",
                old.category.name(),
                new.category.name()
            ),
        });
    }
    if old.aps.len() != new.aps.len() {
        return Err(Error::StructureMismatch {
            detail: alloc::format!(
                "phrase counts differ: {} vs {}",
                old.aps.len(),
                new.aps.len()
            ),
        });
    }
    Ok(old
        .aps
        .iter()
        .zip(&new.aps)
        .enumerate()
        .filter(|(_, (a, b))| a.token_texts() != b.token_texts())
        .map(|(i, _)| i)
        .collect())
}
