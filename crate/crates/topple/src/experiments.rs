//! Runs the three experiment designs over a built dataset and writes the
//! report directory:
//!
//! ```text
//! report.txt                aligned text versions of every table
//! tables/intra.csv          4x4 accuracy grid (blocks x column)
//! tables/intra_cells.csv    group,correct,count,accuracy
//! tables/cross.csv          train,test,correct,count,accuracy
//! tables/general.csv        4x4 accuracy grid
//! tables/general_cells.csv
//! predictions.jsonl         every evaluated scene of every experiment
//! models/<experiment>.slnn
//! curves/<experiment>.csv   epoch,loss,train_acc
//! config.effective.json
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use topple_core::eval::{
    run_cross_group, run_generalization, run_intra_group, AccuracyTable, Cell, Example,
    ExperimentRun, COLUMN_NAMES,
};
use topple_core::scene::{GroupTag, BLOCK_COUNTS};

use crate::config::{ExperimentConfig, EFFECTIVE_CONFIG};
use crate::error::Result;
use crate::formats;
use crate::pipeline::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Intra,
    Cross,
    General,
    All,
}

impl ExperimentKind {
    fn includes(self, other: ExperimentKind) -> bool {
        self == ExperimentKind::All || self == other
    }
}

/// Everything one invocation computed.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub intra: Option<AccuracyTable>,
    pub cross: Option<(Cell, Cell)>,
    pub general: Option<AccuracyTable>,
    pub runs: Vec<ExperimentRun>,
}

#[derive(Serialize)]
struct Echo<'a> {
    kind: ExperimentKind,
    dataset: &'a Path,
    experiment: &'a ExperimentConfig,
}

/// Intra-group runs are independent and go through the rayon pool; results
/// are collected in group order.
pub fn run_intra(
    examples: &[Example],
    groups: &[GroupTag],
    cfg: &ExperimentConfig,
) -> Result<(AccuracyTable, Vec<ExperimentRun>)> {
    let runs: Vec<ExperimentRun> = groups
        .par_iter()
        .map(|&g| {
            let (_, mut runs) = run_intra_group(examples, &[g], &cfg.train)?;
            Ok(runs.remove(0))
        })
        .collect::<Result<_>>()?;
    let mut table = AccuracyTable::default();
    for (g, r) in groups.iter().zip(&runs) {
        table.set(*g, r.accuracy());
    }
    Ok((table, runs))
}

pub fn run_experiments(
    dataset: &Dataset,
    out: &Path,
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
) -> Result<Report> {
    cfg.validate()?;
    let examples = dataset.examples()?;
    formats::write_json(
        &out.join(EFFECTIVE_CONFIG),
        &Echo {
            kind,
            dataset: &dataset.root,
            experiment: cfg,
        },
    )?;
    let mut report = Report::default();
    if kind.includes(ExperimentKind::Intra) {
        let groups = if cfg.intra_groups.is_empty() {
            let mut present: Vec<GroupTag> = dataset.records.iter().map(|r| r.group).collect();
            present.sort();
            present.dedup();
            present
        } else {
            cfg.intra_groups.clone()
        };
        let (table, runs) = run_intra(&examples, &groups, cfg)?;
        report.intra = Some(table);
        report.runs.extend(runs);
    }
    if kind.includes(ExperimentKind::Cross) {
        let r = run_cross_group(&examples, &cfg.train)?;
        report.cross = Some((r.simple_to_complex.accuracy(), r.complex_to_simple.accuracy()));
        report.runs.push(r.simple_to_complex);
        report.runs.push(r.complex_to_simple);
    }
    if kind.includes(ExperimentKind::General) {
        let (table, run) = run_generalization(&examples, &cfg.train)?;
        report.general = Some(table);
        report.runs.push(run);
    }
    write_report(out, &report)?;
    Ok(report)
}

fn fmt_acc(c: Option<Cell>) -> String {
    c.and_then(|c| c.accuracy())
        .map(|a| format!("{a:.4}"))
        .unwrap_or_default()
}

pub fn table_csv(t: &AccuracyTable) -> String {
    let mut s = format!("blocks,{}\n", COLUMN_NAMES.join(","));
    for (row, n) in BLOCK_COUNTS.iter().enumerate() {
        let cells: Vec<String> = t.cells[row].iter().map(|c| fmt_acc(*c)).collect();
        writeln!(s, "{n},{}", cells.join(",")).unwrap();
    }
    s
}

pub fn cells_csv(t: &AccuracyTable) -> String {
    let mut s = String::from("group,correct,count,accuracy\n");
    for g in GroupTag::all() {
        if let Some(c) = t.get(g) {
            writeln!(s, "{g},{},{},{}", c.correct, c.count, fmt_acc(Some(c))).unwrap();
        }
    }
    s
}

fn table_text(title: &str, t: &AccuracyTable) -> String {
    let mut s = format!("{title}\n");
    write!(s, "{:<8}", "blocks").unwrap();
    for c in COLUMN_NAMES {
        write!(s, "{c:>12}").unwrap();
    }
    s.push('\n');
    for (row, n) in BLOCK_COUNTS.iter().enumerate() {
        write!(s, "{:<8}", format!("{n}B")).unwrap();
        for c in t.cells[row] {
            let v = c
                .and_then(|c| c.accuracy())
                .map(|a| format!("{:.1}", 100.0 * a))
                .unwrap_or_else(|| "-".into());
            write!(s, "{v:>12}").unwrap();
        }
        s.push('\n');
    }
    s
}

fn write_report(out: &Path, r: &Report) -> Result<()> {
    let mut text = String::new();
    if let Some(t) = &r.intra {
        formats::write_atomic(&out.join("tables/intra.csv"), table_csv(t).as_bytes())?;
        formats::write_atomic(&out.join("tables/intra_cells.csv"), cells_csv(t).as_bytes())?;
        text.push_str(&table_text("Intra-group accuracy (%)", t));
        text.push('\n');
    }
    if let Some((s2c, c2s)) = r.cross {
        let mut csv = String::from("train,test,correct,count,accuracy\n");
        writeln!(csv, "4B+6B,10B+14B,{},{},{}", s2c.correct, s2c.count, fmt_acc(Some(s2c))).unwrap();
        writeln!(csv, "10B+14B,4B+6B,{},{},{}", c2s.correct, c2s.count, fmt_acc(Some(c2s))).unwrap();
        formats::write_atomic(&out.join("tables/cross.csv"), csv.as_bytes())?;
        text.push_str("Cross-group accuracy (%)\n");
        let pct = |c: Cell| c.accuracy().map_or("-".into(), |a| format!("{:.1}", 100.0 * a));
        writeln!(text, "{:<28}{:>8}", "simple -> complex", pct(s2c)).unwrap();
        writeln!(text, "{:<28}{:>8}", "complex -> simple", pct(c2s)).unwrap();
        text.push('\n');
    }
    if let Some(t) = &r.general {
        formats::write_atomic(&out.join("tables/general.csv"), table_csv(t).as_bytes())?;
        formats::write_atomic(&out.join("tables/general_cells.csv"), cells_csv(t).as_bytes())?;
        text.push_str(&table_text("Generalization accuracy (%)", t));
        text.push('\n');
    }
    let mut preds = Vec::new();
    for run in &r.runs {
        let name = &run.spec.name;
        formats::write_atomic(
            &out.join(format!("models/{name}.slnn")),
            &formats::encode_model(&run.params),
        )?;
        formats::write_atomic(&out.join(format!("curves/{name}.csv")), &formats::loss_csv(&run.curve))?;
        preds.extend(run.predictions.iter().cloned());
    }
    formats::write_jsonl(&out.join("predictions.jsonl"), &preds)?;
    formats::write_atomic(&out.join("report.txt"), text.as_bytes())?;
    Ok(())
}
