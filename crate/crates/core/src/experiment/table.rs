use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::run::{Manifest, Report, MANIFEST_FILE, REPORT_FILE};

pub const TABLE_HEADER: &str = "dataset,arch,grid,strategy,val_acc,train_acc,wall_s,seed";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub dataset: String,
    pub arch: String,
    pub grid: String,
    pub strategy: String,
    pub val_acc: f64,
    pub train_acc: f64,
    pub wall_s: f64,
    pub seed: u64,
}

impl TableRow {
    fn key(&self) -> (String, String, String, String, u64) {
        (
            self.dataset.clone(),
            self.arch.clone(),
            self.grid.clone(),
            self.strategy.clone(),
            self.seed,
        )
    }

    fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.dataset, self.arch, self.grid, self.strategy, self.val_acc, self.train_acc, self.wall_s, self.seed
        )
    }
}

/// Run directories under `dir`: `dir` itself if it holds a report, plus any
/// immediate subdirectory that does, sorted by name.
fn report_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if dir.join(REPORT_FILE).is_file() {
        out.push(dir.to_path_buf());
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(REPORT_FILE).is_file())
        .collect();
    subdirs.sort();
    out.extend(subdirs);
    Ok(out)
}

fn read_json<D: for<'de> Deserialize<'de>>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        file: path.to_path_buf(),
        offset: 0,
        detail: e.to_string(),
    })
}

/// Merge all reports under `dir` into one table keyed by
/// (dataset, arch, grid, strategy, seed) and write `table.csv` and
/// `table.json` next to them. Duplicate keys with equal accuracies collapse
/// to the first row; differing accuracies are a merge error.
pub fn emit_table(dir: &Path) -> Result<Vec<TableRow>> {
    let dirs = report_dirs(dir)?;
    if dirs.is_empty() {
        return Err(Error::Input(format!("no {REPORT_FILE} under {}", dir.display())));
    }
    let mut merged: BTreeMap<_, TableRow> = BTreeMap::new();
    for d in dirs {
        let report: Report = read_json(&d.join(REPORT_FILE))?;
        let walls = match read_json::<Manifest>(&d.join(MANIFEST_FILE)) {
            Ok(m) => m.strategy_wall_s,
            Err(_) => BTreeMap::new(),
        };
        for r in report.rows {
            let row = TableRow {
                wall_s: walls.get(&r.strategy).copied().unwrap_or(f64::NAN),
                dataset: r.dataset,
                arch: r.arch,
                grid: r.grid,
                strategy: r.strategy,
                val_acc: r.val_acc,
                train_acc: r.train_acc,
                seed: r.seed,
            };
            match merged.get(&row.key()) {
                None => {
                    merged.insert(row.key(), row);
                }
                Some(prev) if prev.val_acc == row.val_acc && prev.train_acc == row.train_acc => {}
                Some(prev) => {
                    let (ds, arch, grid, strategy, seed) = row.key();
                    return Err(Error::Merge {
                        key: format!("{ds}/{arch}/{grid}/{strategy}/seed {seed}"),
                        detail: format!(
                            "val/train {}/{} in one report, {}/{} in {}",
                            prev.val_acc,
                            prev.train_acc,
                            row.val_acc,
                            row.train_acc,
                            d.display()
                        ),
                    });
                }
            }
        }
    }
    let rows: Vec<TableRow> = merged.into_values().collect();
    let mut csv = String::from(TABLE_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    let csv_path = dir.join("table.csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join("table.json");
    let mut json = serde_json::to_string_pretty(&rows).expect("serialisable");
    json.push('\n');
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok(rows)
}

/// Parse a `table.csv` written by [`emit_table`].
pub fn read_table_csv(path: &Path) -> Result<Vec<TableRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let bad = |offset: usize, detail: String| Error::Format {
        file: path.to_path_buf(),
        offset: offset as u64,
        detail,
    };
    if lines.next() != Some(TABLE_HEADER) {
        return Err(bad(0, "missing table header".into()));
    }
    let mut offset = TABLE_HEADER.len() + 1;
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(offset, format!("expected 8 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(offset, format!("`{s}`: {e}")));
        rows.push(TableRow {
            dataset: f[0].into(),
            arch: f[1].into(),
            grid: f[2].into(),
            strategy: f[3].into(),
            val_acc: num(f[4])?,
            train_acc: num(f[5])?,
            wall_s: num(f[6])?,
            seed: f[7].parse().map_err(|e| bad(offset, format!("seed: {e}")))?,
        });
        offset += line.len() + 1;
    }
    Ok(rows)
}
