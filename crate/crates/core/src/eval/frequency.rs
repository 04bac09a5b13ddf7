use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use super::embedding::cosine;
use crate::corpus::{EOU, RESERVED};
use crate::error::{Error, Result};

/// Stop-word list: one word per line, blank lines and `#` comments ignored.
pub fn read_stopwords<R: BufRead>(r: R) -> Result<HashSet<String>> {
    let mut out = HashSet::new();
    for line in r.lines() {
        let line = line?;
        let w = line.trim();
        if !w.is_empty() && !w.starts_with('#') {
            out.insert(w.to_lowercase());
        }
    }
    Ok(out)
}

/// Fixed list of frequent content words; responses map to count vectors over it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyProfile {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl FrequencyProfile {
    pub const DEFAULT_SIZE: usize = 2350;

    pub fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        FrequencyProfile { words, index }
    }

    /// The `size` most frequent alphabetic, non-stop, non-reserved words; ties go to
    /// the earlier first occurrence.
    pub fn build<S: AsRef<str>>(sentences: &[Vec<S>], stopwords: &HashSet<String>, size: usize) -> Result<Self> {
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut order = 0;
        for s in sentences {
            for w in s {
                let w = w.as_ref();
                let content = w != EOU
                    && !RESERVED.contains(&w)
                    && w.chars().all(char::is_alphabetic)
                    && !w.is_empty()
                    && !stopwords.contains(&w.to_lowercase());
                if content {
                    counts.entry(w).or_insert((0, order)).0 += 1;
                    order += 1;
                }
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus("no content words for the frequency profile".into()));
        }
        let mut ranked: Vec<(&str, usize, usize)> = counts.into_iter().map(|(w, (c, f))| (w, c, f)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        Ok(Self::from_words(
            ranked.into_iter().take(size).map(|(w, _, _)| w.to_string()).collect(),
        ))
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Corpus-level count of each profile word.
    pub fn counts<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> Vec<f64> {
        let mut v = vec![0.0; self.words.len()];
        for w in sentences.iter().flatten() {
            if let Some(&i) = self.index.get(w.as_ref()) {
                v[i] += 1.0;
            }
        }
        v
    }
}

/// Cosine between the profile count vectors of the two corpora.
pub fn frequency_similarity<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>], profile: &FrequencyProfile) -> f64 {
    let (h, r) = (profile.counts(hyps), profile.counts(refs));
    if h.iter().all(|&x| x == 0.0) || r.iter().all(|&x| x == 0.0) {
        log::warn!("a corpus uses no profile words; frequency similarity is 0");
        return 0.0;
    }
    cosine(&h, &r)
}
