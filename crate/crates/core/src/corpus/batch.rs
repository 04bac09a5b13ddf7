use super::triples::Triple;
use super::vocab::{Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};

/// Right-padded id matrix with per-row lengths.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedBatch {
    pub ids: Vec<Vec<usize>>,
    pub lengths: Vec<usize>,
    pub mask: Vec<Vec<bool>>,
}

impl PaddedBatch {
    pub fn from_ids(rows: Vec<Vec<usize>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("batch has no rows"));
        }
        let max_len = rows.iter().map(Vec::len).max().unwrap_or(0);
        let lengths: Vec<usize> = rows.iter().map(Vec::len).collect();
        let ids = rows
            .into_iter()
            .map(|mut r| {
                r.resize(max_len, PAD);
                r
            })
            .collect();
        let mask = lengths.iter().map(|&l| (0..max_len).map(|j| j < l).collect()).collect();
        Ok(PaddedBatch { ids, lengths, mask })
    }

    pub fn batch_size(&self) -> usize {
        self.ids.len()
    }

    pub fn max_len(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    /// Ids at column `t` for every row.
    pub fn column(&self, t: usize) -> Vec<usize> {
        self.ids.iter().map(|r| r[t]).collect()
    }

    /// Row `i` without padding.
    pub fn row(&self, i: usize) -> &[usize] {
        &self.ids[i][..self.lengths[i]]
    }

    pub fn min_len(&self) -> usize {
        self.lengths.iter().copied().min().unwrap_or(0)
    }
}

/// A triple as vocabulary ids, unframed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedTriple {
    pub query: Vec<usize>,
    pub response: Vec<usize>,
    pub future: Vec<usize>,
}

impl EncodedTriple {
    pub fn encode(t: &Triple, vocab: &Vocabulary) -> Self {
        EncodedTriple {
            query: vocab.encode(&t.query),
            response: vocab.encode(&t.response),
            future: vocab.encode(&t.future),
        }
    }

    pub fn encode_all(triples: &[Triple], vocab: &Vocabulary) -> Vec<Self> {
        triples.iter().map(|t| Self::encode(t, vocab)).collect()
    }
}

pub fn encode_batch<S: AsRef<[String]>>(seqs: &[S], vocab: &Vocabulary, add_bos_eos: bool) -> Result<PaddedBatch> {
    let rows = seqs
        .iter()
        .map(|s| {
            let body = vocab.encode(s.as_ref());
            if add_bos_eos {
                std::iter::once(BOS).chain(body).chain(std::iter::once(EOS)).collect()
            } else {
                body
            }
        })
        .collect();
    PaddedBatch::from_ids(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::UNK;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn vocab() -> Vocabulary {
        let s = [toks("a b c d")];
        Vocabulary::build(s.iter().map(Vec::as_slice), 8).unwrap()
    }

    #[test]
    fn pads_to_max_length() {
        let v = vocab();
        let b = encode_batch(&[toks("a b"), toks("a")], &v, false).unwrap();
        let (a, bb) = (v.id("a"), v.id("b"));
        assert_eq!(b.ids, vec![vec![a, bb], vec![a, PAD]]);
        assert_eq!(b.lengths, vec![2, 1]);
        assert_eq!(b.mask, vec![vec![true, true], vec![true, false]]);
    }

    #[test]
    fn unknown_and_framing() {
        let v = vocab();
        let b = encode_batch(&[toks("a q")], &v, false).unwrap();
        assert_eq!(b.ids[0][1], UNK);
        let b = encode_batch(&[toks("a")], &v, true).unwrap();
        assert_eq!(b.ids[0], vec![BOS, v.id("a"), EOS]);
    }

    proptest! {
        #[test]
        fn decode_of_masked_row_is_unk_substituted(rows in prop::collection::vec(
            prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "zz", "q"]), 1..6), 1..5)) {
            let v = vocab();
            let seqs: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect();
            let b = encode_batch(&seqs, &v, false).unwrap();
            for (i, s) in seqs.iter().enumerate() {
                let expect: Vec<String> = s.iter()
                    .map(|t| if v.contains(t) { t.clone() } else { "<unk>".to_string() })
                    .collect();
                prop_assert_eq!(v.decode(b.row(i)), expect);
                for (j, &m) in b.mask[i].iter().enumerate() {
                    prop_assert_eq!(m, j < b.lengths[i]);
                    if !m { prop_assert_eq!(b.ids[i][j], PAD); }
                }
            }
        }
    }
}
