//! Summary table over metrics CSVs.
//!
//! Every number is read from or computed on the final row of each CSV.

use std::io::Write;
use std::path::{Path, PathBuf};

use dprec_core::sim::METRICS_HEADER;

use crate::error::{CliError, CliResult};

pub const SUMMARY_HEADER: [&str; 9] = [
    "run",
    "rounds",
    "accuracy",
    "eps_central",
    "uplink_bits",
    "downlink_bits",
    "total_bits",
    "ratio",
    "uplink_ratio",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    /// File stem of the CSV.
    pub run: String,
    pub rounds: u64,
    pub accuracy: f64,
    pub eps_central: f64,
    pub uplink_bits: u64,
    pub downlink_bits: u64,
    pub total_bits: u64,
    /// Baseline total bits over this run's total bits.
    pub ratio: f64,
    /// Baseline uplink bits over this run's uplink bits.
    pub uplink_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub baseline: String,
    pub rows: Vec<SummaryRow>,
}

struct FinalRow {
    rounds: u64,
    accuracy: f64,
    eps_central: f64,
    uplink_bits: u64,
    downlink_bits: u64,
}

fn read_final_row(path: &Path) -> CliResult<FinalRow> {
    let name = path.display();
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| CliError::Usage(format!("{name}: {e}")))?;
    let header = reader
        .headers()
        .map_err(|e| CliError::Usage(format!("{name}: {e}")))?
        .clone();
    if header.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(CliError::Usage(format!(
            "{name}: schema mismatch, expected columns {}",
            METRICS_HEADER.join(",")
        )));
    }
    let mut last = None;
    for (i, record) in reader.records().enumerate() {
        last = Some(record.map_err(|e| CliError::Usage(format!("{name}: row {}: {e}", i + 1)))?);
    }
    let last = last.ok_or_else(|| CliError::Usage(format!("{name}: no metric rows")))?;
    let field = |i: usize| {
        last.get(i)
            .ok_or_else(|| CliError::Usage(format!("{name}: missing column {}", METRICS_HEADER[i])))
    };
    let float = |i: usize| {
        field(i)?
            .parse::<f64>()
            .map_err(|_| CliError::Usage(format!("{name}: bad {}", METRICS_HEADER[i])))
    };
    let int = |i: usize| {
        field(i)?
            .parse::<u64>()
            .map_err(|_| CliError::Usage(format!("{name}: bad {}", METRICS_HEADER[i])))
    };
    Ok(FinalRow {
        rounds: int(0)?,
        accuracy: float(1)?,
        eps_central: float(2)?,
        uplink_bits: int(4)?,
        downlink_bits: int(5)?,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(
        || path.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

impl SummaryTable {
    /// Builds the table; ratios are taken against `paths[baseline]`.
    pub fn from_csvs(paths: &[PathBuf], baseline: usize) -> CliResult<Self> {
        if paths.is_empty() {
            return Err(CliError::Usage("summarize needs at least one CSV".into()));
        }
        if baseline >= paths.len() {
            return Err(CliError::Usage(format!(
                "baseline index {baseline} but only {} CSVs",
                paths.len()
            )));
        }
        let finals = paths
            .iter()
            .map(|p| read_final_row(p))
            .collect::<CliResult<Vec<_>>>()?;
        let base = &finals[baseline];
        let base_total = base.uplink_bits + base.downlink_bits;
        let rows = paths
            .iter()
            .zip(&finals)
            .map(|(p, f)| {
                let total = f.uplink_bits + f.downlink_bits;
                SummaryRow {
                    run: stem(p),
                    rounds: f.rounds,
                    accuracy: f.accuracy,
                    eps_central: f.eps_central,
                    uplink_bits: f.uplink_bits,
                    downlink_bits: f.downlink_bits,
                    total_bits: total,
                    ratio: base_total as f64 / total as f64,
                    uplink_ratio: base.uplink_bits as f64 / f.uplink_bits as f64,
                }
            })
            .collect();
        Ok(Self {
            baseline: stem(&paths[baseline]),
            rows,
        })
    }

    fn cells(&self) -> Vec<[String; 9]> {
        self.rows
            .iter()
            .map(|r| {
                [
                    r.run.clone(),
                    r.rounds.to_string(),
                    r.accuracy.to_string(),
                    r.eps_central.to_string(),
                    r.uplink_bits.to_string(),
                    r.downlink_bits.to_string(),
                    r.total_bits.to_string(),
                    r.ratio.to_string(),
                    r.uplink_ratio.to_string(),
                ]
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| CliError::Runtime(e.to_string());
        w.write_record(SUMMARY_HEADER).map_err(err)?;
        for row in self.cells() {
            w.write_record(&row).map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Right-aligned columns, run names left-aligned.
    pub fn to_text(&self) -> String {
        let cells = self.cells();
        let widths: Vec<usize> = (0..SUMMARY_HEADER.len())
            .map(|i| {
                cells
                    .iter()
                    .map(|r| r[i].len())
                    .chain([SUMMARY_HEADER[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |row: &[String]| {
            let mut s = String::new();
            for (i, cell) in row.iter().enumerate() {
                if i == 0 {
                    s.push_str(&format!("{cell:<w$}", w = widths[0]));
                } else {
                    s.push_str(&format!("  {cell:>w$}", w = widths[i]));
                }
            }
            s.push('\n');
            s
        };
        let header: Vec<String> = SUMMARY_HEADER.iter().map(|s| s.to_string()).collect();
        let mut out = line(&header);
        for row in &cells {
            out.push_str(&line(row));
        }
        out.push_str(&format!("baseline: {}\n", self.baseline));
        out
    }
}
