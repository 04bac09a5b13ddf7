use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::triples::Triple;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Bijective token ↔ id map with the four reserved ids first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Keep the `size - 4` most frequent tokens; ties go to the earlier first occurrence.
    pub fn build<'a, I>(sequences: I, size: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        if size <= RESERVED.len() {
            return Err(Error::invalid(format!(
                "vocabulary size must exceed {}, got {size}",
                RESERVED.len()
            )));
        }
        // (count, first occurrence) per token
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut order = 0usize;
        for seq in sequences {
            for tok in seq {
                if RESERVED.contains(&tok.as_str()) {
                    continue;
                }
                let e = counts.entry(tok.as_str()).or_insert((0, order));
                e.0 += 1;
                order += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus("no tokens to build a vocabulary from".into()));
        }
        let mut ranked: Vec<(&str, usize, usize)> = counts.into_iter().map(|(t, (c, f))| (t, c, f)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(
                ranked
                    .into_iter()
                    .take(size - RESERVED.len())
                    .map(|(t, _, _)| t.to_string()),
            )
            .collect();
        Self::from_tokens(tokens)
    }

    pub fn from_triples(triples: &[Triple], size: usize) -> Result<Self> {
        Self::build(
            triples
                .iter()
                .flat_map(|t| [t.query.as_slice(), t.response.as_slice(), t.future.as_slice()]),
            size,
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(RESERVED[UNK])
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// One token per line; the line number is the id.
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let tokens = r.lines().collect::<std::io::Result<Vec<_>>>()?;
        if tokens.len() <= RESERVED.len() {
            return Err(Error::Parse {
                line: tokens.len(),
                msg: "vocabulary file has no content tokens".into(),
            });
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens[i] != *r {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected reserved token {r}, found {:?}", tokens[i]),
                });
            }
        }
        Self::from_tokens(tokens)
    }
}
