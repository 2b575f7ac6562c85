//! Two-object spatial scenes, their captions, and the caption-triple dataset.

mod captions;
mod dataset;
mod vocab;

pub use captions::{
    negate_caption, paraphrase_caption, parse_caption, render_caption, validate_triple, Caption, CaptionTriple,
    NegationStrategy, Proposition, Rejection,
};
pub use dataset::{generate_dataset, Dataset, DatasetConfig, DatasetManifest, TripleRecord, MANIFEST_FILE, TEST_FILE, TRAIN_FILE};
pub use vocab::{Vocabulary, EOS_TOKEN};

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Blue,
    Green,
    Yellow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Square,
    Triangle,
    Circle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Blue, Color::Green, Color::Yellow];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Blue => "blue",
            Color::Green => "green",
            Color::Yellow => "yellow",
        }
    }

    pub fn from_word(w: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.word() == w)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Triangle, Shape::Circle];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Circle => "circle",
        }
    }

    pub fn from_word(w: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.word() == w)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::LeftOf, Relation::RightOf, Relation::Above, Relation::Below];

    pub fn inverse(self) -> Self {
        match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
        }
    }

    /// Surface words, e.g. `["left", "of"]`.
    pub fn words(self) -> &'static [&'static str] {
        match self {
            Relation::LeftOf => &["left", "of"],
            Relation::RightOf => &["right", "of"],
            Relation::Above => &["above"],
            Relation::Below => &["below"],
        }
    }

    pub fn phrase(self) -> String {
        self.words().join(" ")
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            Relation::LeftOf => "left_of",
            Relation::RightOf => "right_of",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Object {
    pub color: Color,
    pub shape: Shape,
}

impl Object {
    pub fn new(color: Color, shape: Shape) -> Self {
        Self { color, shape }
    }
}

impl fmt::Display for Object {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.color.word(), self.shape.word())
    }
}

/// `object_a <relation> object_b`, with distinct objects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawScene")]
pub struct Scene {
    pub object_a: Object,
    pub relation: Relation,
    pub object_b: Object,
}

#[derive(Deserialize)]
struct RawScene {
    object_a: Object,
    relation: Relation,
    object_b: Object,
}

impl TryFrom<RawScene> for Scene {
    type Error = String;

    fn try_from(raw: RawScene) -> Result<Self, Self::Error> {
        Scene::new(raw.object_a, raw.relation, raw.object_b).ok_or_else(|| "scene objects must differ".to_string())
    }
}

/// Length of [`Scene::features`].
pub const SCENE_FEATURES: usize = 2 * (4 + 3) + 4;

impl Scene {
    /// `None` when both objects are identical.
    pub fn new(object_a: Object, relation: Relation, object_b: Object) -> Option<Self> {
        (object_a != object_b).then_some(Self { object_a, relation, object_b })
    }

    /// Stable content identifier, e.g. `blue-square-left_of-red-triangle`.
    pub fn id(&self) -> String {
        format!(
            "{}-{}-{}-{}-{}",
            self.object_a.color.word(),
            self.object_a.shape.word(),
            self.relation.key(),
            self.object_b.color.word(),
            self.object_b.shape.word()
        )
    }

    /// One-hot `color_a ⊕ shape_a ⊕ relation ⊕ color_b ⊕ shape_b`.
    pub fn features(&self) -> [f64; SCENE_FEATURES] {
        let mut f = [0.0; SCENE_FEATURES];
        f[self.object_a.color.index()] = 1.0;
        f[4 + self.object_a.shape.index()] = 1.0;
        f[7 + self.relation.index()] = 1.0;
        f[11 + self.object_b.color.index()] = 1.0;
        f[15 + self.object_b.shape.index()] = 1.0;
        f
    }

    /// Every valid scene, in a fixed order.
    pub fn all() -> Vec<Scene> {
        let objects: Vec<Object> =
            Color::ALL.iter().flat_map(|&c| Shape::ALL.iter().map(move |&s| Object::new(c, s))).collect();
        let mut out = Vec::new();
        for &a in &objects {
            for r in Relation::ALL {
                for &b in &objects {
                    if let Some(s) = Scene::new(a, r, b) {
                        out.push(s);
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.object_a, self.relation.phrase(), self.object_b)
    }
}

/// Uniform draw over valid scenes by rejection of identical object pairs.
pub fn sample_scene<R: Rng + ?Sized>(rng: &mut R) -> Scene {
    loop {
        let a = Object::new(Color::ALL[rng.random_range(0..4)], Shape::ALL[rng.random_range(0..3)]);
        let relation = Relation::ALL[rng.random_range(0..4)];
        let b = Object::new(Color::ALL[rng.random_range(0..4)], Shape::ALL[rng.random_range(0..3)]);
        if let Some(scene) = Scene::new(a, relation, b) {
            return scene;
        }
    }
}
