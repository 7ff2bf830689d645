//! Text formats for feature matrices and score lists.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use ltrkit_core::features::FeatureMatrix;
use ltrkit_core::metrics::{ScoreEntry, ScoreList};
use ltrkit_core::schema::Grade;

/// `srch_id \t prop_id \t <columns...>` with a header row.
pub fn write_feature_tsv<W: Write>(m: &FeatureMatrix, mut w: W) -> io::Result<()> {
    write!(w, "srch_id\tprop_id")?;
    for c in m.columns() {
        write!(w, "\t{c}")?;
    }
    writeln!(w)?;
    for (i, k) in m.keys().iter().enumerate() {
        write!(w, "{}\t{}", k.srch_id, k.prop_id)?;
        for v in m.row(i) {
            write!(w, "\t{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()
}

/// `<grade> qid:<srch_id> <idx>:<val> ...`, feature indices 1-based and
/// ascending. Zero values are written too, so every line has every index.
pub fn write_ranking<W: Write>(m: &FeatureMatrix, grades: &[Grade], mut w: W) -> io::Result<()> {
    assert_eq!(grades.len(), m.n_rows(), "one grade per row");
    for (i, k) in m.keys().iter().enumerate() {
        write!(w, "{} qid:{}", grades[i].value(), k.srch_id)?;
        for (j, v) in m.row(i).iter().enumerate() {
            write!(w, " {}:{v}", j + 1)?;
        }
        writeln!(w)?;
    }
    w.flush()
}

/// Sorted by srch_id, then score descending, then prop_id.
pub fn write_scores<W: Write>(scores: &ScoreList, mut w: W) -> io::Result<()> {
    writeln!(w, "srch_id\tprop_id\tscore")?;
    for e in scores.sorted() {
        writeln!(w, "{}\t{}\t{}", e.srch_id, e.prop_id, e.score)?;
    }
    w.flush()
}

pub fn read_scores<R: BufRead>(reader: R) -> Result<ScoreList> {
    let mut entries = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() || (n == 0 && line.starts_with("srch_id")) {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        let [s, p, v] = parts.as_slice() else {
            bail!("line {}: expected 3 tab-separated fields", n + 1);
        };
        entries.push(ScoreEntry {
            srch_id: s.parse().with_context(|| format!("line {}: bad srch_id", n + 1))?,
            prop_id: p.parse().with_context(|| format!("line {}: bad prop_id", n + 1))?,
            score: v.parse().with_context(|| format!("line {}: bad score", n + 1))?,
        });
    }
    Ok(ScoreList::new(entries)?)
}

pub fn load_scores(path: &Path) -> Result<ScoreList> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_scores(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

pub fn save_scores(scores: &ScoreList, path: &Path) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_scores(scores, BufWriter::new(f))?;
    Ok(())
}
