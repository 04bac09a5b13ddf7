use std::io::Write;

use serde::{Deserialize, Serialize};

use super::embedding::{context_matching, corpus_embedding_metrics, EmbeddingTable};
use super::frequency::{frequency_similarity, FrequencyProfile};
use super::overlap::{bleu, distinct_n};
use crate::discriminators::{BackwardDiscriminator, ForwardDiscriminator};
use crate::error::{Error, Result};
use crate::numerics::Real;
use crate::trainer::{combined_reward, shift_by_min, DiscountIndexing};

/// Every automatic metric of one hypothesis set. Metrics whose inputs were not
/// supplied are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub dist1: f64,
    pub dist2: f64,
    pub dist3: f64,
    pub emb_average: Option<f64>,
    pub emb_greedy: Option<f64>,
    pub emb_extrema: Option<f64>,
    pub freq_similarity: Option<f64>,
    pub context_matching: Option<f64>,
    pub skipped_embedding: usize,
    pub sentences: usize,
}

/// Query and future turn of each hypothesis, for context matching.
pub struct Contexts<'a, S> {
    pub queries: &'a [Vec<S>],
    pub futures: &'a [Vec<S>],
}

pub fn evaluate<S: AsRef<str>>(
    hyps: &[Vec<S>],
    refs: &[Vec<S>],
    table: Option<&EmbeddingTable>,
    profile: Option<&FrequencyProfile>,
    contexts: Option<Contexts<'_, S>>,
) -> Result<MetricReport> {
    let mut r = MetricReport {
        bleu: bleu(hyps, refs)?,
        dist1: distinct_n(hyps, 1)?,
        dist2: distinct_n(hyps, 2)?,
        dist3: distinct_n(hyps, 3)?,
        sentences: hyps.len(),
        ..Default::default()
    };
    if let Some(t) = table {
        let (scores, skipped) = corpus_embedding_metrics(hyps, refs, t)?;
        r.skipped_embedding = skipped;
        if let Some(s) = scores {
            r.emb_average = Some(s.average);
            r.emb_greedy = Some(s.greedy);
            r.emb_extrema = Some(s.extrema);
        }
        if let Some(c) = contexts {
            if c.queries.len() != hyps.len() || c.futures.len() != hyps.len() {
                return Err(Error::invalid("context rows must match the hypotheses one to one"));
            }
            let m: Vec<f64> = hyps
                .iter()
                .zip(c.queries.iter().zip(c.futures))
                .filter_map(|(h, (q, z))| context_matching(h, q, z, t))
                .collect();
            if !m.is_empty() {
                r.context_matching = Some(m.iter().sum::<f64>() / m.len() as f64);
            }
        }
    }
    if let Some(p) = profile {
        r.freq_similarity = Some(frequency_similarity(hyps, refs, p));
    }
    Ok(r)
}

/// One evaluated sample of the reward distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub id: usize,
    pub r1_shifted: f64,
    pub r2_mean: f64,
    pub r_combined: f64,
}

/// Score each `(generated response, future turn)` sample with both discriminators.
/// Rows keep the input order.
pub fn export_reward_distribution<F: Real>(
    d1: &ForwardDiscriminator<F>,
    d2: &BackwardDiscriminator<F>,
    responses: &[Vec<usize>],
    futures: &[Vec<usize>],
    discount: f64,
    indexing: DiscountIndexing,
) -> Result<Vec<RewardRow>> {
    if responses.len() != futures.len() {
        return Err(Error::invalid("one future turn per response required"));
    }
    if responses.is_empty() {
        return Ok(Vec::new());
    }
    let r1 = d1.rewards(responses, futures)?;
    let r2 = d2.rewards(futures, responses)?;
    let (min, shifted) = shift_by_min(&r1)?;
    r1.iter()
        .zip(&shifted)
        .zip(&r2)
        .enumerate()
        .map(|(id, ((&a, &s), w))| {
            Ok(RewardRow {
                id,
                r1_shifted: s,
                r2_mean: w.iter().sum::<f64>() / w.len() as f64,
                r_combined: combined_reward(a, min, w, discount, indexing)?[0],
            })
        })
        .collect()
}

pub fn write_reward_csv<W: Write>(w: W, rows: &[RewardRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)
            .map_err(|e| Error::invalid(format!("CSV write failed: {e}")))?;
    }
    if rows.is_empty() {
        out.write_record(["id", "r1_shifted", "r2_mean", "r_combined"])
            .map_err(|e| Error::invalid(format!("CSV write failed: {e}")))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discriminators::R2Sign;
    use crate::seq2seq::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s(x: &str) -> Vec<&str> {
        x.split_whitespace().collect()
    }

    #[test]
    fn report_fills_what_it_can() {
        let h = vec![s("a b c"), s("a a")];
        let r = vec![s("a b c"), s("a a")];
        let rep = evaluate(&h, &r, None, None, None).unwrap();
        assert_eq!(rep.bleu, 1.0);
        assert!((rep.dist1 - 3.0 / 5.0).abs() < 1e-12);
        assert!(rep.emb_greedy.is_none() && rep.freq_similarity.is_none());

        let t = EmbeddingTable::read("a 1 0\nb 0 1\n".as_bytes()).unwrap();
        let p = FrequencyProfile::from_words(vec!["a".into(), "b".into()]);
        let ctx = Contexts {
            queries: &h,
            futures: &r,
        };
        let rep = evaluate(&h, &r, Some(&t), Some(&p), Some(ctx)).unwrap();
        assert!((rep.emb_average.unwrap() - 1.0).abs() < 1e-12);
        assert!((rep.freq_similarity.unwrap() - 1.0).abs() < 1e-12);
        assert!((rep.context_matching.unwrap() - 1.0).abs() < 1e-12);
        let json = serde_json::to_value(&rep).unwrap();
        for k in [
            "bleu",
            "dist1",
            "dist2",
            "dist3",
            "emb_average",
            "emb_greedy",
            "emb_extrema",
            "freq_similarity",
            "context_matching",
        ] {
            assert!(json.get(k).is_some());
        }
    }

    #[test]
    fn reward_rows_follow_the_reward_definitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = ModelConfig::tiny(9, 3, 3);
        let d1 = ForwardDiscriminator::<f64>::initialized(cfg, 0.4, &mut rng).unwrap();
        let d2 = BackwardDiscriminator::<f64>::initialized(cfg, R2Sign::Negated, 0.4, &mut rng).unwrap();
        let ys = vec![vec![4, 5], vec![6], vec![], vec![7, 7, 8]];
        let zs = vec![vec![5], vec![6, 4], vec![8], vec![4]];
        let rows = export_reward_distribution(&d1, &d2, &ys, &zs, 0.9, DiscountIndexing::Absolute).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows.iter().map(|r| r.r1_shifted).fold(f64::INFINITY, f64::min), 0.0);
        let r1 = d1.rewards(&ys, &zs).unwrap();
        let r2 = d2.rewards(&zs, &ys).unwrap();
        let min = r1.iter().copied().fold(f64::INFINITY, f64::min);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.id, i);
            // m = 1 term of the discounted sum, evaluated directly
            let direct: f64 = r2[i]
                .iter()
                .enumerate()
                .map(|(j, x)| 0.9f64.powi(j as i32 + 1) * (r1[i] - min) * x)
                .sum();
            assert!((row.r_combined - direct).abs() < 1e-9);
        }

        let mut buf = Vec::new();
        write_reward_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,r1_shifted,r2_mean,r_combined\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
