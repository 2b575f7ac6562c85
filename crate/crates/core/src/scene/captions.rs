use super::{Color, Object, Relation, Scene, Shape};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// A whitespace-tokenized caption.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct Caption {
    tokens: Vec<String>,
}

impl Caption {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { tokens: tokens.into_iter().map(Into::into).collect() }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

impl From<&str> for Caption {
    fn from(text: &str) -> Self {
        Self::from_tokens(text.split_whitespace())
    }
}

impl From<String> for Caption {
    fn from(text: String) -> Self {
        Caption::from(text.as_str())
    }
}

impl From<Caption> for String {
    fn from(c: Caption) -> Self {
        c.text()
    }
}

impl fmt::Display for Caption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegationStrategy {
    /// Insert "not" before the relation.
    LexicalNot,
    /// Replace the relation by its inverse, keeping argument order.
    RelationFlip,
}

impl NegationStrategy {
    pub const ALL: [NegationStrategy; 2] = [NegationStrategy::LexicalNot, NegationStrategy::RelationFlip];

    pub fn key(self) -> &'static str {
        match self {
            NegationStrategy::LexicalNot => "lexical_not",
            NegationStrategy::RelationFlip => "relation_flip",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown negation strategy {0:?}")]
pub struct UnknownStrategy(pub String);

impl FromStr for NegationStrategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.key() == s).ok_or_else(|| UnknownStrategy(s.to_string()))
    }
}

/// `a <color> <shape> <relation> a <color> <shape>`
pub fn render_caption(scene: &Scene) -> Caption {
    statement(scene.object_a, false, scene.relation, scene.object_b)
}

/// Arguments swapped, relation inverted: the same proposition in other words.
pub fn paraphrase_caption(scene: &Scene) -> Caption {
    statement(scene.object_b, false, scene.relation.inverse(), scene.object_a)
}

pub fn negate_caption(scene: &Scene, strategy: NegationStrategy) -> Caption {
    match strategy {
        NegationStrategy::LexicalNot => statement(scene.object_a, true, scene.relation, scene.object_b),
        NegationStrategy::RelationFlip => statement(scene.object_a, false, scene.relation.inverse(), scene.object_b),
    }
}

fn statement(subject: Object, negated: bool, relation: Relation, object: Object) -> Caption {
    let mut tokens = vec!["a", subject.color.word(), subject.shape.word()];
    if negated {
        tokens.push("not");
    }
    tokens.extend_from_slice(relation.words());
    tokens.extend_from_slice(&["a", object.color.word(), object.shape.word()]);
    Caption::from_tokens(tokens)
}

/// Symbolic reading of a caption.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Proposition {
    pub subject: Object,
    pub negated: bool,
    pub relation: Relation,
    pub object: Object,
}

impl Proposition {
    /// Truth value against a scene. `x r y` holds when it restates the scene
    /// directly or through the inverse relation with swapped arguments.
    pub fn holds_in(&self, scene: &Scene) -> bool {
        let direct = self.subject == scene.object_a && self.object == scene.object_b && self.relation == scene.relation;
        let swapped =
            self.subject == scene.object_b && self.object == scene.object_a && self.relation == scene.relation.inverse();
        (direct || swapped) != self.negated
    }

    /// The positive scene this proposition describes, if it is not negated.
    pub fn as_scene(&self) -> Option<Scene> {
        if self.negated {
            return None;
        }
        Scene::new(self.subject, self.relation, self.object)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot parse caption {caption:?}: {reason}")]
pub struct ParseError {
    pub caption: String,
    pub reason: String,
}

pub fn parse_caption(caption: &Caption) -> Result<Proposition, ParseError> {
    let fail = |reason: &str| ParseError { caption: caption.text(), reason: reason.to_string() };
    let toks: Vec<&str> = caption.tokens().iter().map(String::as_str).collect();
    let mut pos = 0;
    let object = |pos: &mut usize| -> Result<Object, ParseError> {
        match toks.get(*pos..*pos + 3) {
            Some(["a", c, s]) => {
                let color = Color::from_word(c).ok_or_else(|| fail(&format!("unknown color {c:?}")))?;
                let shape = Shape::from_word(s).ok_or_else(|| fail(&format!("unknown shape {s:?}")))?;
                *pos += 3;
                Ok(Object::new(color, shape))
            }
            _ => Err(fail("expected \"a <color> <shape>\"")),
        }
    };
    let subject = object(&mut pos)?;
    let negated = toks.get(pos) == Some(&"not");
    if negated {
        pos += 1;
    }
    let relation = Relation::ALL
        .into_iter()
        .find(|r| toks.get(pos..pos + r.words().len()) == Some(r.words()))
        .ok_or_else(|| fail("expected a relation"))?;
    pos += relation.words().len();
    let obj = object(&mut pos)?;
    if pos != toks.len() {
        return Err(fail("trailing tokens"));
    }
    Ok(Proposition { subject, negated, relation, object: obj })
}

/// Original, paraphrase and negation of one scene's caption.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionTriple {
    pub scene_id: String,
    pub original: Caption,
    pub paraphrase: Caption,
    pub negation: Caption,
    pub negation_strategy: NegationStrategy,
    pub validated: bool,
}

impl CaptionTriple {
    /// Unvalidated candidate for `scene`.
    pub fn generate(scene: &Scene, strategy: NegationStrategy) -> Self {
        Self {
            scene_id: scene.id(),
            original: render_caption(scene),
            paraphrase: paraphrase_caption(scene),
            negation: negate_caption(scene, strategy),
            negation_strategy: strategy,
            validated: false,
        }
    }
}

/// Why a triple was rejected.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{reason}")]
pub struct Rejection {
    pub reason: String,
}

impl Rejection {
    fn new(reason: impl Into<String>) -> Self {
        Self { reason: reason.into() }
    }
}

/// Accepts a triple iff its original and paraphrase are true of `scene` and
/// its negation is false, by symbolic evaluation of each caption.
pub fn validate_triple(triple: &CaptionTriple, scene: &Scene) -> Result<(), Rejection> {
    if triple.scene_id != scene.id() {
        return Err(Rejection::new(format!("triple references {} not {}", triple.scene_id, scene.id())));
    }
    let read = |c: &Caption| parse_caption(c).map_err(|e| Rejection::new(e.to_string()));
    if !read(&triple.original)?.holds_in(scene) {
        return Err(Rejection::new("original caption is false for the scene"));
    }
    if !read(&triple.paraphrase)?.holds_in(scene) {
        return Err(Rejection::new("paraphrase does not retain the meaning of the original"));
    }
    if read(&triple.negation)?.holds_in(scene) {
        return Err(Rejection::new("negation does not contradict the original"));
    }
    Ok(())
}
