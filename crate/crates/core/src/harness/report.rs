use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::{summarize, EvalRecord, MetricsSummary};
use crate::error::{Error, Result};

/// Column name, accessor, and whether larger is better.
type Column = (&'static str, fn(&MetricsSummary) -> Option<f64>, bool);

const COLUMNS: [Column; 6] = [
    ("rep_2", |s| s.rep_2, false),
    ("rep_3", |s| s.rep_3, false),
    ("rep_4", |s| s.rep_4, false),
    ("diversity", |s| s.diversity, true),
    ("coherence", |s| s.coherence, true),
    ("ppl", |s| s.ppl, false),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub summary: MetricsSummary,
    /// Names of the columns where this row holds the best value.
    pub best: Vec<&'static str>,
}

/// Corpus means per configuration. MAUVE is left to external tools and
/// shown as `external`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ReportRow>,
}

/// Splits records by config digest, in order of first appearance. Labels
/// are `<decoder>@<first 8 digest chars>`.
pub fn group_by_config(records: &[EvalRecord]) -> Vec<(String, Vec<EvalRecord>)> {
    let mut groups: Vec<(String, Vec<EvalRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(_, g)| g[0].config_digest == r.config_digest) {
            Some((_, g)) => g.push(r.clone()),
            None => groups.push((
                format!("{}@{}", r.decoder, &r.config_digest[..8.min(r.config_digest.len())]),
                vec![r.clone()],
            )),
        }
    }
    groups
}

/// Builds the comparison. Every group must cover the same prompt ids.
/// Best values are marked only when there are at least two rows; rep-n and
/// perplexity favor the lowest value, diversity and coherence the highest.
pub fn compare_report(groups: &[(String, Vec<EvalRecord>)]) -> Result<ComparisonReport> {
    if groups.is_empty() {
        return Err(Error::Comparison("no configurations to compare".into()));
    }
    let ids = |g: &[EvalRecord]| g.iter().map(|r| r.prompt_id.clone()).collect::<BTreeSet<_>>();
    let reference = ids(&groups[0].1);
    for (label, g) in &groups[1..] {
        if ids(g) != reference {
            return Err(Error::Comparison(format!(
                "{label} covers a different prompt set than {}",
                groups[0].0
            )));
        }
    }
    let mut rows: Vec<ReportRow> = groups
        .iter()
        .map(|(label, g)| ReportRow {
            label: label.clone(),
            summary: summarize(g),
            best: Vec::new(),
        })
        .collect();
    if rows.len() >= 2 {
        for (name, get, higher) in COLUMNS {
            let vals: Vec<f64> = rows.iter().filter_map(|r| get(&r.summary)).collect();
            let best = if higher {
                vals.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            } else {
                vals.iter().copied().fold(f64::INFINITY, f64::min)
            };
            for r in rows.iter_mut() {
                if get(&r.summary) == Some(best) {
                    r.best.push(name);
                }
            }
        }
    }
    Ok(ComparisonReport { rows })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

impl ComparisonReport {
    /// Aligned text table; best cells carry a trailing `*`.
    pub fn to_text(&self) -> String {
        let header = ["config", "n", "rep-2", "rep-3", "rep-4", "div", "mauve", "coh", "ppl"];
        let mut table: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.rows {
            let mut line = vec![r.label.clone(), r.summary.records.to_string()];
            for (i, (name, get, _)) in COLUMNS.iter().enumerate() {
                if i == 4 {
                    line.push("external".into());
                }
                let mark = if r.best.contains(name) { "*" } else { "" };
                line.push(format!("{}{mark}", cell(get(&r.summary))));
            }
            table.push(line);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| table.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in &table {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if c == 0 {
                        format!("{s:<w$}", w = widths[c])
                    } else {
                        format!("{s:>w$}", w = widths[c])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    /// CSV with a header row. Full-precision values; `best` lists the
    /// winning columns separated by `;`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("config,records,rep_2,rep_3,rep_4,diversity,mauve,coherence,ppl,best\n");
        for r in &self.rows {
            let num = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
            let s = &r.summary;
            let label = if r.label.contains([',', '"']) {
                format!("\"{}\"", r.label.replace('"', "\"\""))
            } else {
                r.label.clone()
            };
            let _ = writeln!(
                out,
                "{label},{},{},{},{},{},external,{},{},{}",
                s.records,
                num(s.rep_2),
                num(s.rep_3),
                num(s.rep_4),
                num(s.diversity),
                num(s.coherence),
                num(s.ppl),
                r.best.join(";")
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricsReport;

    fn record(id: &str, digest: &str, div: f64, ppl: f64) -> EvalRecord {
        EvalRecord {
            prompt_id: id.into(),
            config_digest: digest.into(),
            decoder: "greedy".into(),
            seed: 0,
            prompt_ids: vec![1],
            prompt_text: "a".into(),
            reference_text: "b".into(),
            continuation_ids: vec![2],
            continuation_text: "c".into(),
            metrics: MetricsReport {
                rep_2: Some(1.0 - div),
                rep_3: Some(0.5),
                rep_4: None,
                diversity: Some(div),
                coherence: Some(0.2),
                ppl: Some(ppl),
            },
            diagnostics: vec![],
            engine_version: "0".into(),
            wall_ms: 0,
        }
    }

    #[test]
    fn best_markers() {
        let a = vec![record("p:0", "aaaaaaaaaa", 0.1, 3.0), record("p:1", "aaaaaaaaaa", 0.3, 5.0)];
        let b = vec![record("p:1", "bbbbbbbbbb", 0.8, 9.0), record("p:0", "bbbbbbbbbb", 0.9, 7.0)];
        let rep = compare_report(&[("greedy".into(), a), ("cd".into(), b)]).unwrap();
        // rep-3 and coherence tie, so both rows get those markers.
        assert_eq!(rep.rows[0].best, vec!["rep_3", "coherence", "ppl"]);
        assert_eq!(rep.rows[1].best, vec!["rep_2", "rep_3", "diversity", "coherence"]);
        assert!((rep.rows[1].summary.diversity.unwrap() - 0.85).abs() < 1e-12);
        let text = rep.to_text();
        assert!(text.contains("0.8500*"));
        assert!(text.contains("external"));
        assert!(text.lines().next().unwrap().starts_with("config"));
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(2).unwrap().ends_with(",rep_2;rep_3;diversity;coherence"));
    }

    #[test]
    fn single_and_identical_configs() {
        let a = vec![record("p:0", "aaaaaaaaaa", 0.1, 3.0)];
        let rep = compare_report(&[("x".into(), a.clone())]).unwrap();
        assert!(rep.rows[0].best.is_empty());
        assert!(!rep.to_text().contains('*'));
        let rep = compare_report(&[("x".into(), a.clone()), ("x".into(), a)]).unwrap();
        assert_eq!(rep.rows[0], rep.rows[1]);
    }

    #[test]
    fn mismatched_prompts_rejected() {
        let a = vec![record("p:0", "a", 0.1, 3.0)];
        let b = vec![record("p:1", "b", 0.1, 3.0)];
        assert!(matches!(
            compare_report(&[("a".into(), a), ("b".into(), b)]),
            Err(Error::Comparison(_))
        ));
    }

    #[test]
    fn grouping_by_digest() {
        let rs = vec![
            record("p:0", "aaaaaaaaaa", 0.1, 3.0),
            record("p:0", "bbbbbbbbbb", 0.1, 3.0),
            record("p:1", "aaaaaaaaaa", 0.1, 3.0),
        ];
        let g = group_by_config(&rs);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].0, "greedy@aaaaaaaa");
        assert_eq!(g[0].1.len(), 2);
    }
}
