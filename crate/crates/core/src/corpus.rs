//! Interaction logs, leave-one-out splits and dataset statistics.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Field separator of an interaction file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    /// Tab separated; lines without a tab fall back to any run of whitespace.
    Tsv,
    Csv,
}

impl Format {
    /// Guess from a file extension, defaulting to TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => Format::Tsv,
        }
    }

    fn separator(self) -> char {
        match self {
            Format::Tsv => '\t',
            Format::Csv => ',',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InteractionRecord {
    pub user: usize,
    pub item: usize,
    pub timestamp: i64,
}

/// User and item vocabularies plus the raw interaction records.
///
/// Handles are densely indexed in first-appearance order. Duplicate
/// `(user, item)` pairs are kept as separate records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionLog {
    users: Vec<String>,
    items: Vec<String>,
    records: Vec<InteractionRecord>,
}

impl InteractionLog {
    pub fn new(
        users: Vec<String>,
        items: Vec<String>,
        records: Vec<InteractionRecord>,
    ) -> Result<Self> {
        if users.is_empty() || items.is_empty() {
            return Err(Error::Empty("a log needs at least one user and one item".into()));
        }
        for (i, r) in records.iter().enumerate() {
            if r.user >= users.len() || r.item >= items.len() {
                return Err(Error::parse(
                    i + 1,
                    format!("record references unknown handle ({}, {})", r.user, r.item),
                ));
            }
        }
        Ok(InteractionLog {
            users,
            items,
            records,
        })
    }

    /// Parse `user<sep>item[<sep>timestamp]` lines. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str, format: Format) -> Result<Self> {
        let mut users = Vocab::default();
        let mut items = Vocab::default();
        let mut records = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = match format {
                Format::Tsv if !line.contains('\t') => line.split_whitespace().collect(),
                _ => line.split(format.separator()).map(str::trim).collect(),
            };
            if fields.len() < 2 {
                return Err(Error::parse(line_no, "expected `user<sep>item[<sep>timestamp]`"));
            }
            if fields.len() > 3 {
                return Err(Error::parse(
                    line_no,
                    format!("expected at most 3 fields, found {}", fields.len()),
                ));
            }
            let user = check_handle(fields[0], line_no)?;
            let item = check_handle(fields[1], line_no)?;
            let timestamp = match fields.get(2) {
                Some(ts) if !ts.is_empty() => ts
                    .parse::<i64>()
                    .map_err(|e| Error::parse(line_no, format!("bad timestamp `{ts}`: {e}")))?,
                _ => 0,
            };
            records.push(InteractionRecord {
                user: users.intern(user),
                item: items.intern(item),
                timestamp,
            });
        }
        if records.is_empty() {
            return Err(Error::Empty("interaction file has no records".into()));
        }
        InteractionLog::new(users.names, items.names, records)
    }

    pub fn load(path: &Path, format: Format) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, format)
    }

    /// Render back to the line format; `parse` of the output reproduces the log.
    pub fn to_text(&self, format: Format) -> String {
        let sep = format.separator();
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(
                out,
                "{}{sep}{}{sep}{}",
                self.users[r.user], self.items[r.item], r.timestamp
            );
        }
        out
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    /// Items per user ordered by timestamp; equal timestamps keep input order.
    pub fn user_histories(&self) -> Vec<Vec<usize>> {
        let mut per_user: Vec<Vec<(i64, usize)>> = vec![Vec::new(); self.users.len()];
        for r in &self.records {
            per_user[r.user].push((r.timestamp, r.item));
        }
        per_user
            .into_iter()
            .map(|mut h| {
                h.sort_by_key(|&(ts, _)| ts);
                h.into_iter().map(|(_, item)| item).collect()
            })
            .collect()
    }
}

fn check_handle(field: &str, line_no: usize) -> Result<&str> {
    if field.is_empty() {
        return Err(Error::parse(line_no, "empty handle"));
    }
    if field.contains(['\t', '\n']) || field.starts_with('#') {
        return Err(Error::parse(line_no, format!("handle `{field}` contains a reserved character")));
    }
    Ok(field)
}

#[derive(Default)]
struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }
}

/// Leave-one-out partition of every user's history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDataset {
    pub num_items: usize,
    pub train: Vec<Vec<usize>>,
    pub valid: Vec<Option<usize>>,
    pub test: Vec<Option<usize>>,
}

impl SplitDataset {
    pub fn num_users(&self) -> usize {
        self.train.len()
    }

    /// Users that carry a held-out test item.
    pub fn test_users(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.test
            .iter()
            .enumerate()
            .filter_map(|(u, t)| t.map(|item| (u, item)))
    }

    /// Write `train.tsv`, `valid.tsv` and `test.tsv` (`user<TAB>item`) into `dir`.
    pub fn write_tsv(&self, log: &InteractionLog, dir: &Path) -> Result<()> {
        let mut train = String::new();
        let mut valid = String::new();
        let mut test = String::new();
        for u in 0..self.num_users() {
            let name = &log.users()[u];
            for &i in &self.train[u] {
                let _ = writeln!(train, "{name}\t{}", log.items()[i]);
            }
            if let Some(i) = self.valid[u] {
                let _ = writeln!(valid, "{name}\t{}", log.items()[i]);
            }
            if let Some(i) = self.test[u] {
                let _ = writeln!(test, "{name}\t{}", log.items()[i]);
            }
        }
        for (file, body) in [("train.tsv", train), ("valid.tsv", valid), ("test.tsv", test)] {
            let path = dir.join(file);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Last item to test, second-to-last to validation, the rest to train.
/// Users with fewer than three interactions keep everything in train.
pub fn leave_one_out_split(log: &InteractionLog) -> SplitDataset {
    let histories = log.user_histories();
    let mut split = SplitDataset {
        num_items: log.num_items(),
        train: Vec::with_capacity(histories.len()),
        valid: Vec::with_capacity(histories.len()),
        test: Vec::with_capacity(histories.len()),
    };
    for mut h in histories {
        if h.len() >= 3 {
            let test = h.pop();
            let valid = h.pop();
            split.train.push(h);
            split.valid.push(valid);
            split.test.push(test);
        } else {
            split.train.push(h);
            split.valid.push(None);
            split.test.push(None);
        }
    }
    split
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub sparsity: f64,
}

pub fn corpus_stats(log: &InteractionLog) -> CorpusStats {
    let num_users = log.num_users();
    let num_items = log.num_items();
    let num_interactions = log.records().len();
    let sparsity = 1.0 - num_interactions as f64 / (num_users as f64 * num_items as f64);
    CorpusStats {
        num_users,
        num_items,
        num_interactions,
        sparsity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log_of(users: &[(&str, &[&str])]) -> InteractionLog {
        let mut text = String::new();
        let mut ts = 0;
        for (u, items) in users {
            for i in *items {
                ts += 1;
                text.push_str(&format!("{u}\t{i}\t{ts}\n"));
            }
        }
        InteractionLog::parse(&text, Format::Tsv).unwrap()
    }

    #[test]
    fn loads_space_separated_lines() {
        let log = InteractionLog::parse("u1 i1\nu1 i2\nu2 i2\n", Format::Tsv).unwrap();
        assert_eq!(log.num_users(), 2);
        assert_eq!(log.num_items(), 2);
        assert_eq!(log.records().len(), 3);
        assert_eq!(log.users(), ["u1", "u2"]);
        assert!(log.records().iter().all(|r| r.timestamp == 0));
    }

    #[test]
    fn missing_item_reports_line() {
        let err = InteractionLog::parse("u1\n", Format::Tsv).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = InteractionLog::parse("a,b,3\nc,d,x\n", Format::Csv).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(
            InteractionLog::parse("", Format::Tsv),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            InteractionLog::parse("# only a comment\n\n", Format::Csv),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn duplicates_are_retained() {
        let log = InteractionLog::parse("u,i,1\nu,i,2\n", Format::Csv).unwrap();
        assert_eq!(log.records().len(), 2);
        assert_eq!(log.num_items(), 1);
    }

    #[test]
    fn histories_sort_by_timestamp_then_input_order() {
        let log = InteractionLog::parse("u\ta\t5\nu\tb\t1\nu\tc\t5\nu\td\n", Format::Tsv).unwrap();
        let names: Vec<&str> = log.user_histories()[0]
            .iter()
            .map(|&i| log.items()[i].as_str())
            .collect();
        assert_eq!(names, ["d", "b", "a", "c"]);
    }

    #[test]
    fn split_minimal_and_degenerate() {
        let log = log_of(&[("u1", &["a", "b", "c"]), ("u2", &["a", "b"])]);
        let s = leave_one_out_split(&log);
        assert_eq!(s.train[0], vec![0]);
        assert_eq!(s.valid[0], Some(1));
        assert_eq!(s.test[0], Some(2));
        assert_eq!(s.train[1], vec![0, 1]);
        assert_eq!(s.valid[1], None);
        assert_eq!(s.test[1], None);
        assert_eq!(s.test_users().count(), 1);
    }

    #[test]
    fn split_five_interactions() {
        let log = log_of(&[("u", &["a", "b", "c", "d", "e"])]);
        let s = leave_one_out_split(&log);
        assert_eq!(s.train[0], vec![0, 1, 2]);
        assert_eq!(s.valid[0], Some(3));
        assert_eq!(s.test[0], Some(4));
    }

    #[test]
    fn stats_examples() {
        let dense = InteractionLog::parse("u i\n", Format::Tsv).unwrap();
        assert_eq!(corpus_stats(&dense).sparsity, 0.0);
        let log = InteractionLog::new(
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
            vec![InteractionRecord {
                user: 0,
                item: 1,
                timestamp: 0,
            }],
        )
        .unwrap();
        assert_eq!(corpus_stats(&log).sparsity, 0.75);
    }

    fn arb_log() -> impl Strategy<Value = InteractionLog> {
        (1usize..8, 1usize..8)
            .prop_flat_map(|(m, n)| {
                (
                    Just(m),
                    Just(n),
                    prop::collection::vec((0..m, 0..n, 0i64..4), 1..40),
                )
            })
            .prop_map(|(m, n, recs)| {
                let mut text = String::new();
                // Seed every handle so both vocabularies are full.
                for u in 0..m {
                    text.push_str(&format!("u{u}\ti{}\t0\n", u % n));
                }
                for i in 0..n {
                    text.push_str(&format!("u{}\ti{i}\t0\n", i % m));
                }
                for (u, i, t) in recs {
                    text.push_str(&format!("u{u}\ti{i}\t{t}\n"));
                }
                InteractionLog::parse(&text, Format::Tsv).unwrap()
            })
    }

    proptest! {
        #[test]
        fn text_round_trip(log in arb_log()) {
            for format in [Format::Tsv, Format::Csv] {
                let back = InteractionLog::parse(&log.to_text(format), format).unwrap();
                prop_assert_eq!(back.users(), log.users());
                prop_assert_eq!(back.items(), log.items());
                prop_assert_eq!(back.records(), log.records());
                prop_assert_eq!(back.user_histories(), log.user_histories());
            }
        }

        #[test]
        fn split_conserves_history(log in arb_log()) {
            let split = leave_one_out_split(&log);
            for (u, hist) in log.user_histories().into_iter().enumerate() {
                let mut joined = split.train[u].clone();
                joined.extend(split.valid[u]);
                joined.extend(split.test[u]);
                let mut expect = hist.clone();
                joined.sort_unstable();
                expect.sort_unstable();
                prop_assert_eq!(joined, expect);
                prop_assert_eq!(split.test[u].is_some(), hist.len() >= 3);
                if hist.len() >= 3 {
                    prop_assert_eq!(split.test[u], hist.last().copied());
                    prop_assert_eq!(split.valid[u], Some(hist[hist.len() - 2]));
                }
            }
        }

        #[test]
        fn sparsity_formula(log in arb_log()) {
            let s = corpus_stats(&log);
            let expect = 1.0 - log.records().len() as f64
                / (log.num_users() * log.num_items()) as f64;
            prop_assert_eq!(s.sparsity, expect);
            prop_assert_eq!(s.num_interactions, log.records().len());
        }
    }
}
