use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Turn separator inside flattened query / future sequences.
pub const EOU: &str = "__eou__";

/// A multi-turn conversation; every turn is a non-empty token list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dialogue {
    pub turns: Vec<Vec<String>>,
}

impl Dialogue {
    /// Parse one line with turns separated by the `__eou__` marker. Empty turns are dropped.
    pub fn parse_line(line: &str) -> Option<Dialogue> {
        let turns: Vec<Vec<String>> = line
            .split(EOU)
            .map(|turn| turn.split_whitespace().map(str::to_string).collect::<Vec<_>>())
            .filter(|t| !t.is_empty())
            .collect();
        (!turns.is_empty()).then_some(Dialogue { turns })
    }
}

pub fn read_dialogues<R: BufRead>(r: R) -> Result<Vec<Dialogue>> {
    let mut out = Vec::new();
    for line in r.lines() {
        if let Some(d) = Dialogue::parse_line(&line?) {
            out.push(d);
        }
    }
    Ok(out)
}

/// Query x, response y, future turn z.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Triple {
    pub query: Vec<String>,
    pub response: Vec<String>,
    pub future: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TripleRecord {
    query: String,
    response: String,
    future: String,
}

impl Triple {
    pub fn to_json_line(&self) -> String {
        let rec = TripleRecord {
            query: self.query.join(" "),
            response: self.response.join(" "),
            future: self.future.join(" "),
        };
        serde_json::to_string(&rec).expect("plain strings serialize")
    }

    pub fn from_json_line(line: &str) -> serde_json::Result<Triple> {
        let rec: TripleRecord = serde_json::from_str(line)?;
        let split = |s: &str| s.split_whitespace().map(str::to_string).collect();
        Ok(Triple {
            query: split(&rec.query),
            response: split(&rec.response),
            future: split(&rec.future),
        })
    }
}

pub fn write_triples<W: Write>(w: &mut W, triples: &[Triple]) -> Result<()> {
    for t in triples {
        writeln!(w, "{}", t.to_json_line())?;
    }
    Ok(())
}

pub fn read_triples<R: BufRead>(r: R) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t = Triple::from_json_line(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if t.query.is_empty() || t.response.is_empty() || t.future.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                msg: "triple has an empty component".into(),
            });
        }
        out.push(t);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripleOptions {
    pub window: usize,
    pub resp_min: usize,
    pub resp_max: usize,
    pub ctx_max: usize,
}

impl Default for TripleOptions {
    fn default() -> Self {
        TripleOptions {
            window: 3,
            resp_min: 5,
            resp_max: 40,
            ctx_max: 80,
        }
    }
}

/// Counts from one `build_triples` pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TripleReport {
    pub dialogues: usize,
    pub candidates: usize,
    pub discarded_short: usize,
    pub truncated_response: usize,
    pub truncated_query: usize,
    pub truncated_future: usize,
    pub emitted: usize,
}

fn join_turns(turns: &[Vec<String>]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, t) in turns.iter().enumerate() {
        if i > 0 {
            out.push(EOU.to_string());
        }
        out.extend(t.iter().cloned());
    }
    out
}

/// Slide a window over every dialogue: `window` turns before form the query,
/// the turn itself the response, `window` turns after the future.
pub fn build_triples(dialogues: &[Dialogue], opts: &TripleOptions) -> Result<(Vec<Triple>, TripleReport)> {
    if opts.window == 0 {
        return Err(Error::invalid("window must be >= 1"));
    }
    if opts.resp_min > opts.resp_max || opts.resp_max == 0 || opts.ctx_max == 0 {
        return Err(Error::invalid(
            "length limits must satisfy 1 <= resp_min <= resp_max and ctx_max >= 1",
        ));
    }
    let w = opts.window;
    let mut report = TripleReport {
        dialogues: dialogues.len(),
        ..Default::default()
    };
    let mut out = Vec::new();
    for d in dialogues {
        let n = d.turns.len();
        if n < 2 * w + 1 {
            continue;
        }
        for i in w..n - w {
            report.candidates += 1;
            let mut response = d.turns[i].clone();
            if response.len() < opts.resp_min {
                report.discarded_short += 1;
                continue;
            }
            if response.len() > opts.resp_max {
                response.truncate(opts.resp_max);
                report.truncated_response += 1;
            }
            let mut query = join_turns(&d.turns[i - w..i]);
            if query.len() > opts.ctx_max {
                query.drain(..query.len() - opts.ctx_max);
                report.truncated_query += 1;
            }
            let mut future = join_turns(&d.turns[i + 1..=i + w]);
            if future.len() > opts.ctx_max {
                future.truncate(opts.ctx_max);
                report.truncated_future += 1;
            }
            out.push(Triple {
                query,
                response,
                future,
            });
        }
    }
    report.emitted = out.len();
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn dialogue(lens: &[usize]) -> Dialogue {
        Dialogue {
            turns: lens
                .iter()
                .enumerate()
                .map(|(i, &n)| turn(&format!("t{}w", i + 1), n))
                .collect(),
        }
    }

    #[test]
    fn seven_turns_one_triple() {
        let d = dialogue(&[2, 2, 2, 6, 2, 2, 2]);
        let (ts, rep) = build_triples(std::slice::from_ref(&d), &TripleOptions::default()).unwrap();
        assert_eq!(ts.len(), 1);
        assert_eq!(rep.emitted, 1);
        let t = &ts[0];
        assert_eq!(t.response, d.turns[3]);
        assert_eq!(
            t.query,
            ["t1w0", "t1w1", EOU, "t2w0", "t2w1", EOU, "t3w0", "t3w1"]
                .map(String::from)
                .to_vec()
        );
        assert_eq!(t.future[0], "t5w0");
        assert_eq!(t.future.last().unwrap(), "t7w1");
    }

    #[test]
    fn six_turns_no_triple() {
        let (ts, _) = build_triples(&[dialogue(&[6; 6])], &TripleOptions::default()).unwrap();
        assert!(ts.is_empty());
    }

    #[test]
    fn long_response_truncated_short_discarded() {
        let (ts, rep) = build_triples(&[dialogue(&[3, 3, 3, 50, 3, 3, 3])], &TripleOptions::default()).unwrap();
        assert_eq!(ts[0].response.len(), 40);
        assert_eq!(ts[0].response[39], "t4w39");
        assert_eq!(rep.truncated_response, 1);

        let (ts, rep) = build_triples(&[dialogue(&[3, 3, 3, 4, 3, 3, 3])], &TripleOptions::default()).unwrap();
        assert!(ts.is_empty());
        assert_eq!(rep.discarded_short, 1);

        let (ts, _) = build_triples(&[dialogue(&[3, 3, 3, 5, 3, 3, 3])], &TripleOptions::default()).unwrap();
        assert_eq!(ts[0].response.len(), 5);
    }

    #[test]
    fn context_truncation_keeps_recent_query_and_early_future() {
        let (ts, rep) = build_triples(&[dialogue(&[30, 30, 30, 6, 30, 30, 30])], &TripleOptions::default()).unwrap();
        let t = &ts[0];
        assert_eq!(t.query.len(), 80);
        assert_eq!(t.query.last().unwrap(), "t3w29");
        assert_eq!(t.future.len(), 80);
        assert_eq!(t.future[0], "t5w0");
        assert_eq!((rep.truncated_query, rep.truncated_future), (1, 1));
    }

    #[test]
    fn count_is_n_minus_six() {
        for n in 7..15 {
            let (ts, _) = build_triples(&[dialogue(&vec![6; n])], &TripleOptions::default()).unwrap();
            assert_eq!(ts.len(), n - 6);
        }
    }

    #[test]
    fn zero_window_rejected() {
        let opts = TripleOptions {
            window: 0,
            ..Default::default()
        };
        assert!(build_triples(&[], &opts).is_err());
    }

    #[test]
    fn parse_line_splits_turns() {
        let d = Dialogue::parse_line("hi there __eou__ hello ! __eou__ ").unwrap();
        assert_eq!(d.turns, vec![vec!["hi", "there"], vec!["hello", "!"]]);
        assert!(Dialogue::parse_line("  __eou__ ").is_none());
    }

    #[test]
    fn jsonl_round_trip() {
        let (ts, _) = build_triples(&[dialogue(&[2, 2, 2, 6, 2, 2, 2, 5])], &TripleOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_triples(&mut buf, &ts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text
            .lines()
            .next()
            .unwrap()
            .contains("\"query\":\"t1w0 t1w1 __eou__ t2w0"));
        let back = read_triples(buf.as_slice()).unwrap();
        assert_eq!(back, ts);
    }
}
