//! Code canonicalization: lexing, identifier standardization, literal
//! abstraction and rare-token pruning.
//!
//! Every identifier that is not a keyword or builtin of the snippet's
//! language becomes `var<k>`, numbered by first occurrence. Numeric and
//! string literals become `<num>` and `<str>`. The canonical text is the
//! token list joined with single spaces.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod lexer;

pub use lexer::{lex, Token, TokenKind, NUM, STR, UNK};

pub const PAD: &str = "<pad>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    Python,
    Java,
    Other,
}

impl Lang {
    pub fn as_str(self) -> &'static str {
        match self {
            Lang::Python => "python",
            Lang::Java => "java",
            Lang::Other => "other",
        }
    }

    /// Source-file extension used when loading a local corpus.
    pub fn extension(self) -> &'static str {
        match self {
            Lang::Python => "py",
            Lang::Java => "java",
            Lang::Other => "txt",
        }
    }

    /// First tag naming a supported language, else [`Lang::Other`].
    pub fn from_tags<'a>(tags: impl IntoIterator<Item = &'a str>) -> Lang {
        tags.into_iter()
            .find_map(|t| match t {
                "python" => Some(Lang::Python),
                "java" => Some(Lang::Java),
                _ => None,
            })
            .unwrap_or(Lang::Other)
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lang {
    type Err = Error;

    fn from_str(s: &str) -> Result<Lang> {
        match s {
            "python" => Ok(Lang::Python),
            "java" => Ok(Lang::Java),
            "other" => Ok(Lang::Other),
            _ => Err(Error::Input(format!("unknown language {s:?}"))),
        }
    }
}

/// Keyword and builtin names that survive identifier standardization.
#[derive(Clone, Debug, Default)]
pub struct LangTables {
    keywords: HashSet<String>,
    builtins: HashSet<String>,
}

fn parse_table(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect()
}

impl LangTables {
    pub fn from_text(keywords: &str, builtins: &str) -> Self {
        LangTables {
            keywords: parse_table(keywords),
            builtins: parse_table(builtins),
        }
    }

    /// Reads `keywords.<lang>.txt` and `builtins.<lang>.txt` from `dir`.
    pub fn from_dir(dir: &Path, lang: Lang) -> Result<Self> {
        let read = |kind: &str| {
            let p = dir.join(format!("{kind}.{lang}.txt"));
            std::fs::read_to_string(&p).map_err(|e| Error::io(p, e))
        };
        Ok(Self::from_text(&read("keywords")?, &read("builtins")?))
    }

    /// The tables shipped with the crate.
    pub fn builtin(lang: Lang) -> &'static LangTables {
        static PY: OnceLock<LangTables> = OnceLock::new();
        static JAVA: OnceLock<LangTables> = OnceLock::new();
        static OTHER: OnceLock<LangTables> = OnceLock::new();
        match lang {
            Lang::Python => PY.get_or_init(|| {
                Self::from_text(
                    include_str!("../../data/keywords.python.txt"),
                    include_str!("../../data/builtins.python.txt"),
                )
            }),
            Lang::Java => JAVA.get_or_init(|| {
                Self::from_text(
                    include_str!("../../data/keywords.java.txt"),
                    include_str!("../../data/builtins.java.txt"),
                )
            }),
            Lang::Other => OTHER.get_or_init(LangTables::default),
        }
    }

    pub fn is_reserved(&self, ident: &str) -> bool {
        self.keywords.contains(ident) || self.builtins.contains(ident)
    }
}

/// A code snippet with its canonical form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSnippet {
    pub lang: Lang,
    pub raw: String,
    pub canonical: String,
}

impl CodeSnippet {
    pub fn new(raw: impl Into<String>, lang: Lang) -> Self {
        let raw = raw.into();
        let canonical = canonicalize_text(&raw, lang);
        CodeSnippet {
            lang,
            raw,
            canonical,
        }
    }

    pub fn canonical_tokens(&self) -> impl Iterator<Item = &str> {
        self.canonical.split(' ').filter(|t| !t.is_empty())
    }
}

pub fn tokenize_code(raw: &str, lang: Lang) -> Vec<Token> {
    lex(raw, lang)
}

/// Standardizes identifiers with the crate's built-in tables for `lang`.
pub fn normalize_identifiers(tokens: &[Token], lang: Lang) -> Vec<String> {
    normalize_with(tokens, LangTables::builtin(lang))
}

pub fn normalize_with(tokens: &[Token], tables: &LangTables) -> Vec<String> {
    let mut names: HashMap<&str, usize> = HashMap::new();
    tokens
        .iter()
        .map(|t| match t.kind {
            TokenKind::Ident if tables.is_reserved(&t.text) => t.text.clone(),
            TokenKind::Ident => {
                let next = names.len() + 1;
                let k = *names.entry(t.text.as_str()).or_insert(next);
                format!("var{k}")
            }
            TokenKind::Number => NUM.to_string(),
            TokenKind::Str => STR.to_string(),
            TokenKind::Unknown => UNK.to_string(),
            TokenKind::Op | TokenKind::Placeholder => t.text.clone(),
        })
        .collect()
}

pub fn canonicalize_text(raw: &str, lang: Lang) -> String {
    normalize_identifiers(&tokenize_code(raw, lang), lang).join(" ")
}

pub fn canonicalize(snippet: &CodeSnippet) -> String {
    canonicalize_text(&snippet.raw, snippet.lang)
}

/// Token vocabulary with reserved `<unk>` (index 0) and `<pad>` (index 1).
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TokenVocab {
    pub min_freq: usize,
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TokenVocab {
    pub const UNK_ID: usize = 0;
    pub const PAD_ID: usize = 1;

    /// Rebuilds a vocabulary from its token list (index order).
    pub fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != UNK || tokens[1] != PAD {
            return Err(Error::Input(
                "token vocab must start with the reserved <unk>, <pad> entries".into(),
            ));
        }
        let index: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != tokens.len() {
            return Err(Error::Input("token vocab has duplicate entries".into()));
        }
        Ok(TokenVocab {
            min_freq,
            tokens,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    /// Replaces out-of-vocabulary tokens with `<unk>`.
    pub fn apply<'a>(&'a self, tokens: impl IntoIterator<Item = &'a str>) -> Vec<&'a str> {
        tokens
            .into_iter()
            .map(|t| if self.contains(t) { t } else { UNK })
            .collect()
    }
}

/// Keeps tokens occurring at least `min_freq` times. Non-reserved entries are
/// ordered by descending frequency, then lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], min_freq: usize) -> Result<TokenVocab> {
    if min_freq == 0 {
        return Err(Error::Config("min_freq must be at least 1".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in corpus {
        for t in doc {
            *counts.entry(t.as_ref()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_freq && t != UNK && t != PAD)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let mut tokens = vec![UNK.to_string(), PAD.to_string()];
    tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));
    TokenVocab::from_tokens(tokens, min_freq)
}

impl TokenVocab {
    /// Inverse of serializing with serde; rebuilds the lookup index.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            min_freq: usize,
            tokens: Vec<String>,
        }
        let raw = Raw::deserialize(value)?;
        TokenVocab::from_tokens(raw.tokens, raw.min_freq)
    }
}
