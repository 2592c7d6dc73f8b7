use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Id of the out-of-vocabulary token.
pub const UNK: usize = 0;
const UNK_TOKEN: &str = "<unk>";

/// Word-to-id table. Id 0 is reserved for unknown words; the rest follow the
/// sorted order of the words the table was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    ids: BTreeMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut sorted: Vec<String> = words
            .into_iter()
            .filter(|w| *w != UNK_TOKEN)
            .map(str::to_string)
            .collect();
        sorted.sort();
        sorted.dedup();
        let mut all = vec![UNK_TOKEN.to_string()];
        all.extend(sorted);
        let ids = all
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocab { words: all, ids }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.ids.get(word).copied().unwrap_or(UNK)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Result<Utterance> {
        Utterance::new(
            text.split_whitespace().map(|w| self.id(w)).collect(),
            self.len(),
        )
    }
}

/// Token ids of one utterance; never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Utterance(Vec<usize>);

impl Utterance {
    pub fn new(tokens: Vec<usize>, vocab_size: usize) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Config("empty utterance".into()));
        }
        if let Some(bad) = tokens.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::Config(format!(
                "token id {bad} outside vocabulary of {vocab_size}"
            )));
        }
        Ok(Utterance(tokens))
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_words_map_to_zero() {
        let v = Vocab::build(["thai", "list", "thai"]);
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("list"), 1);
        assert_eq!(v.id("greek"), UNK);
        assert_eq!(v.encode("list greek thai").unwrap().tokens(), &[1, 0, 2]);
        assert!(v.encode("   ").is_err());
    }
}
