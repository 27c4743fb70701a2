//! Fixed word, class and answer vocabularies of the synthetic world.

use serde::{Deserialize, Serialize};

pub const FAMILIES: [&str; 6] = ["animal", "device", "furniture", "vehicle", "food", "clothing"];
pub const FAMILY_SIZE: usize = 4;

pub const CLASSES: [&str; 24] = [
    "cat", "dog", "horse", "bird", //
    "laptop", "phone", "monitor", "camera", //
    "lamp", "chair", "table", "sofa", //
    "car", "bus", "bike", "truck", //
    "apple", "pizza", "cake", "banana", //
    "shirt", "hat", "sweater", "shoe",
];

pub const COLORS: [&str; 8] = ["red", "blue", "green", "yellow", "white", "black", "brown", "gray"];
pub const SIZES: [&str; 2] = ["small", "large"];

const FUNCTION_WORDS: [&str; 13] = [
    "<pad>", "what", "color", "is", "the", "there", "a", "to", "left", "right", "of", "above",
    "below",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::LeftOf, Relation::RightOf, Relation::Above, Relation::Below];

    pub fn words(self) -> &'static [&'static str] {
        match self {
            Relation::LeftOf => &["to", "the", "left", "of"],
            Relation::RightOf => &["to", "the", "right", "of"],
            Relation::Above => &["above"],
            Relation::Below => &["below"],
        }
    }

    pub fn inverse(self) -> Relation {
        match self {
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
        }
    }
}

/// Active vocabulary: the first `n_classes` classes and `n_colors` colors.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    n_classes: usize,
    n_colors: usize,
    words: Vec<&'static str>,
}

impl Vocab {
    pub fn new(n_classes: usize, n_colors: usize) -> Self {
        assert!(
            (FAMILY_SIZE..=CLASSES.len()).contains(&n_classes) && n_classes % FAMILY_SIZE == 0,
            "n_classes must be a multiple of {FAMILY_SIZE} up to {}",
            CLASSES.len()
        );
        assert!((2..=COLORS.len()).contains(&n_colors), "n_colors out of range");
        let mut words: Vec<&'static str> = FUNCTION_WORDS.to_vec();
        words.extend_from_slice(&FAMILIES[..n_classes / FAMILY_SIZE]);
        words.extend_from_slice(&CLASSES[..n_classes]);
        Vocab {
            n_classes,
            n_colors,
            words,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_colors(&self) -> usize {
        self.n_colors
    }

    pub fn n_families(&self) -> usize {
        self.n_classes / FAMILY_SIZE
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    pub fn word(&self, index: usize) -> Option<&'static str> {
        self.words.get(index).copied()
    }

    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| *w == word)
    }

    pub fn family_of(&self, class: usize) -> usize {
        class / FAMILY_SIZE
    }

    pub fn class_name(&self, class: usize) -> &'static str {
        CLASSES[class]
    }

    pub fn color_name(&self, color: usize) -> &'static str {
        COLORS[color]
    }

    pub fn family_name(&self, family: usize) -> &'static str {
        FAMILIES[family]
    }

    pub fn n_answers(&self) -> usize {
        2 + self.n_classes + self.n_colors
    }

    pub fn answer_yes(&self) -> usize {
        0
    }

    pub fn answer_no(&self) -> usize {
        1
    }

    pub fn answer_for_class(&self, class: usize) -> usize {
        2 + class
    }

    pub fn answer_for_color(&self, color: usize) -> usize {
        2 + self.n_classes + color
    }

    pub fn is_binary_answer(&self, answer: usize) -> bool {
        answer < 2
    }

    pub fn answer_name(&self, answer: usize) -> &'static str {
        match answer {
            0 => "yes",
            1 => "no",
            a if a < 2 + self.n_classes => CLASSES[a - 2],
            a => COLORS[a - 2 - self.n_classes],
        }
    }

    /// Encodes a whitespace-free word list; panics on words outside the vocabulary.
    pub fn encode(&self, words: &[&str]) -> Vec<usize> {
        words
            .iter()
            .map(|w| self.word_index(w).unwrap_or_else(|| panic!("word `{w}` not in vocabulary")))
            .collect()
    }

    pub fn decode(&self, tokens: &[usize]) -> String {
        tokens
            .iter()
            .map(|&t| self.word(t).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
