use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::indexer::{Token, MAX_TOKEN};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;

const SPECIALS: [&str; 3] = ["<pad>", "</s>", "<unk>"];
const NUMBER_BASE: TokenId = SPECIALS.len() as TokenId - 1;

/// Reference vocabulary size used for parameter accounting.
pub const ACCOUNTING_SIZE: usize = 32128;

pub const DEFAULT_TEMPLATE: &str = "recommend items for user";

/// Specials, the number tokens `"1"..="999"`, then prompt words.
///
/// Each ID number is a single entry, so a collaborative ID never splits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    words: Vec<String>,
    accounting_size: usize,
    lookup: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    words: Vec<String>,
    accounting_size: usize,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        let mut v = Vocabulary::with_words(f.words.iter().map(String::as_str));
        v.accounting_size = f.accounting_size.max(v.len());
        v
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            words: v.words,
            accounting_size: v.accounting_size,
        }
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary::with_words(DEFAULT_TEMPLATE.split_whitespace())
    }
}

impl Vocabulary {
    /// Vocabulary whose word entries are `words` (duplicates and numbers ignored).
    pub fn with_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocabulary {
            words: Vec::new(),
            accounting_size: ACCOUNTING_SIZE,
            lookup: HashMap::new(),
        };
        for (i, s) in SPECIALS.iter().enumerate() {
            v.lookup.insert(s.to_string(), i as TokenId);
        }
        for n in 1..=MAX_TOKEN {
            v.lookup.insert(n.to_string(), number_token(n));
        }
        for w in words {
            if !v.lookup.contains_key(w) {
                let id = v.len() as TokenId;
                v.lookup.insert(w.to_string(), id);
                v.words.push(w.to_string());
            }
        }
        v
    }

    /// Actual number of entries.
    pub fn len(&self) -> usize {
        SPECIALS.len() + MAX_TOKEN as usize + self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn accounting_size(&self) -> usize {
        self.accounting_size
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, piece: &str) -> Option<TokenId> {
        self.lookup.get(piece).copied()
    }

    /// Whitespace split; unknown pieces become [`UNK`].
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace().map(|p| self.id(p).unwrap_or(UNK)).collect()
    }

    pub fn piece(&self, id: TokenId) -> Option<String> {
        let i = id as usize;
        if i < SPECIALS.len() {
            Some(SPECIALS[i].to_string())
        } else if let Some(n) = id_number(id) {
            Some(n.to_string())
        } else {
            self.words.get(i - SPECIALS.len() - MAX_TOKEN as usize).cloned()
        }
    }

    /// Template tokens followed by the user's ID tokens and EOS.
    pub fn make_prompt(&self, template: &str, user_id: &[Token]) -> Vec<TokenId> {
        let mut out = self.tokenize(template);
        out.extend(user_id.iter().map(|&t| number_token(t)));
        out.push(EOS);
        out
    }
}

/// Vocabulary entry of ID token `n` (1..=999).
pub fn number_token(n: Token) -> TokenId {
    n as TokenId + NUMBER_BASE
}

/// Inverse of [`number_token`].
pub fn id_number(id: TokenId) -> Option<Token> {
    (id > NUMBER_BASE && id <= NUMBER_BASE + MAX_TOKEN as TokenId).then(|| (id - NUMBER_BASE) as Token)
}

/// Decoder target for an item ID: its number tokens then EOS.
pub fn target_tokens(item_id: &[Token]) -> Vec<TokenId> {
    let mut out: Vec<TokenId> = item_id.iter().map(|&t| number_token(t)).collect();
    out.push(EOS);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        let v = Vocabulary::default();
        assert_eq!(
            v.tokenize("13 25 46"),
            vec![number_token(13), number_token(25), number_token(46)]
        );
        assert!(v.tokenize("").is_empty());
        assert_eq!(v.tokenize("banana"), vec![UNK]);
        assert_eq!(v.tokenize("0 1000"), vec![UNK, UNK]);
    }

    #[test]
    fn layout_and_round_trip() {
        let v = Vocabulary::default();
        assert_eq!(v.len(), 3 + 999 + 4);
        assert!(v.accounting_size() >= v.len());
        for id in 0..v.len() as TokenId {
            let piece = v.piece(id).unwrap();
            assert_eq!(v.id(&piece), Some(id));
        }
        assert_eq!(v.piece(v.len() as TokenId), None);
        assert_eq!(id_number(number_token(999)), Some(999));
        assert_eq!(id_number(UNK), None);
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(serde_json::from_str::<Vocabulary>(&json).unwrap(), v);
    }

    #[test]
    fn prompts() {
        let v = Vocabulary::default();
        let p = v.make_prompt(DEFAULT_TEMPLATE, &[13, 25]);
        // four template words plus EOS, then two ID tokens
        assert_eq!(p.len(), 5 + 2);
        assert_eq!(p, v.make_prompt(DEFAULT_TEMPLATE, &[13, 25]));
        assert_ne!(p, v.make_prompt(DEFAULT_TEMPLATE, &[13, 26]));
        assert_ne!(p, v.make_prompt(DEFAULT_TEMPLATE, &[13]));
        assert_eq!(target_tokens(&[4, 7]), vec![number_token(4), number_token(7), EOS]);
    }

    proptest::proptest! {
        #[test]
        fn prompts_stay_in_vocabulary(id in proptest::collection::vec(1u16..=999, 1..8)) {
            let v = Vocabulary::default();
            let p = v.make_prompt(DEFAULT_TEMPLATE, &id);
            proptest::prop_assert_eq!(p.len(), 4 + id.len() + 1);
            proptest::prop_assert_eq!(*p.last().unwrap(), EOS);
            proptest::prop_assert!(p.iter().all(|&t| (t as usize) < v.len() && t != PAD && t != UNK));
            let back: Vec<Token> = p[4..p.len() - 1].iter().map(|&t| id_number(t).unwrap()).collect();
            proptest::prop_assert_eq!(back, id);
        }
    }
}
