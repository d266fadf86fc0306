//! Human versus machine report from exported ratings and a prediction log.
//!
//! Writes `tables/human_machine.csv`, `tables/human_machine_marginals.csv`,
//! `tables/histograms.csv`, `tables/correlations.csv` and `report.txt`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use topple_core::eval::{
    correctness_pairs, human_machine_table, pearson, rating_histograms, Cell, CorrectnessPair,
    EvalError, HumanMachineCell, HumanMachineTable, RatingRecord, ScenePrediction, SceneTruth,
};
use topple_core::scene::{DepthMode, GroupTag, SizeMode};

use crate::error::{Error, Result};
use crate::formats;
use crate::pipeline::Dataset;
use crate::study::scene_ref;

/// The experiment whose predictions are compared with humans by default.
pub const DEFAULT_EXPERIMENT: &str = "generalization";

const CORRELATION_NOTE: &str = "Correlations pair, per study scene, the mean correctness of \
the non-abstaining human ratings (each 0 or 1) with the machine's correctness (0 or 1).";

#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationRow {
    pub table: &'static str,
    pub key: String,
    pub n: usize,
    /// `None` when there are fewer than two pairs or one side is constant.
    pub r: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Analysis {
    pub table: HumanMachineTable,
    pub human_histogram: [usize; 5],
    pub machine_histogram: [usize; 5],
    pub correlations: Vec<CorrelationRow>,
    pub ratings: usize,
    pub scenes: usize,
}

/// Ratings may name scenes by id or by study reference; both map to ids.
pub fn resolve_ratings(dataset: &Dataset, ratings: Vec<RatingRecord>) -> Result<Vec<RatingRecord>> {
    let ids: BTreeSet<&str> = dataset.records.iter().map(|r| r.scene_id.as_str()).collect();
    let by_ref: BTreeMap<String, &str> = dataset
        .records
        .iter()
        .map(|r| (scene_ref(&r.scene_id), r.scene_id.as_str()))
        .collect();
    ratings
        .into_iter()
        .map(|mut r| {
            if !ids.contains(r.scene_id.as_str()) {
                let id = by_ref
                    .get(&r.scene_id)
                    .ok_or_else(|| EvalError::SceneMismatch(r.scene_id.clone()))?;
                r.scene_id = id.to_string();
            }
            Ok(r)
        })
        .collect()
}

pub fn analyze(
    dataset: &Dataset,
    ratings: Vec<RatingRecord>,
    predictions: &[ScenePrediction],
    experiment: &str,
) -> Result<Analysis> {
    let ratings = resolve_ratings(dataset, ratings)?;
    let universe: BTreeSet<&str> = match &dataset.study {
        Some(s) => s.scene_ids.iter().map(String::as_str).collect(),
        None => ratings.iter().map(|r| r.scene_id.as_str()).collect(),
    };
    if let Some(r) = ratings.iter().find(|r| !universe.contains(r.scene_id.as_str())) {
        return Err(EvalError::SceneMismatch(r.scene_id.clone()).into());
    }
    let preds: Vec<ScenePrediction> = predictions
        .iter()
        .filter(|p| p.experiment == experiment && universe.contains(p.scene_id.as_str()))
        .cloned()
        .collect();
    let covered: BTreeSet<&str> = preds.iter().map(|p| p.scene_id.as_str()).collect();
    if let Some(missing) = universe.iter().find(|id| !covered.contains(*id)) {
        return Err(Error::Config(format!(
            "experiment {experiment:?} has no prediction for study scene {missing}"
        )));
    }
    let truth: BTreeMap<String, SceneTruth> = dataset
        .records
        .iter()
        .filter(|r| universe.contains(r.scene_id.as_str()))
        .map(|r| {
            (
                r.scene_id.clone(),
                SceneTruth {
                    group: r.group,
                    label: r.label,
                },
            )
        })
        .collect();
    let table = human_machine_table(&ratings, &preds, &truth)?;
    let (human_histogram, machine_histogram) = rating_histograms(&ratings, &preds)?;
    let pairs = correctness_pairs(&ratings, &preds, &truth)?;
    Ok(Analysis {
        table,
        human_histogram,
        machine_histogram,
        correlations: correlations(&pairs),
        ratings: ratings.len(),
        scenes: preds.len(),
    })
}

fn correlation(table: &'static str, key: String, pairs: &[&CorrectnessPair]) -> CorrelationRow {
    let x: Vec<f64> = pairs.iter().map(|p| p.human).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.machine).collect();
    CorrelationRow {
        table,
        key,
        n: pairs.len(),
        r: pearson(&x, &y).ok(),
    }
}

/// One row per block count, per stacking depth and per size mode, then
/// one over every pair.
pub fn correlations(pairs: &[CorrectnessPair]) -> Vec<CorrelationRow> {
    let mut rows = Vec::new();
    let blocks: BTreeSet<u32> = GroupTag::all().iter().map(|g| g.num_blocks).collect();
    for n in blocks {
        let sel: Vec<_> = pairs.iter().filter(|p| p.group.num_blocks == n).collect();
        rows.push(correlation("blocks", format!("{n}B"), &sel));
    }
    for d in [DepthMode::TwoD, DepthMode::ThreeD] {
        let sel: Vec<_> = pairs.iter().filter(|p| p.group.depth == d).collect();
        rows.push(correlation("depth", depth_name(d).into(), &sel));
    }
    for s in [SizeMode::Uni, SizeMode::NonUni] {
        let sel: Vec<_> = pairs.iter().filter(|p| p.group.size == s).collect();
        rows.push(correlation("size", size_name(s).into(), &sel));
    }
    rows.push(correlation("all", "all".into(), &pairs.iter().collect::<Vec<_>>()));
    rows
}

fn depth_name(d: DepthMode) -> &'static str {
    match d {
        DepthMode::TwoD => "2D",
        DepthMode::ThreeD => "3D",
    }
}

fn size_name(s: SizeMode) -> &'static str {
    match s {
        SizeMode::Uni => "Uni",
        SizeMode::NonUni => "NonUni",
    }
}

fn acc(c: Cell) -> String {
    c.accuracy().map(|a| format!("{a:.4}")).unwrap_or_default()
}

const CELL_COLUMNS: &str =
    "human_correct,human_count,abstentions,human_accuracy,machine_correct,machine_count,machine_accuracy";

fn cell_fields(c: &HumanMachineCell) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        c.human.correct,
        c.human.count,
        c.abstentions,
        acc(c.human),
        c.machine.correct,
        c.machine.count,
        acc(c.machine)
    )
}

/// `a/b`: human accuracy over machine accuracy, in percent.
fn ab(c: &HumanMachineCell) -> String {
    let pct = |c: Cell| c.accuracy().map_or("-".into(), |a| format!("{:.1}", 100.0 * a));
    format!("{}/{}", pct(c.human), pct(c.machine))
}

fn marginals(t: &HumanMachineTable) -> Vec<(&'static str, String, HumanMachineCell)> {
    let mut out = Vec::new();
    for (n, c) in &t.by_blocks {
        out.push(("blocks", format!("{n}B"), *c));
    }
    for (d, c) in &t.by_depth {
        out.push(("depth", depth_name(*d).to_string(), *c));
    }
    for (s, c) in &t.by_size {
        out.push(("size", size_name(*s).to_string(), *c));
    }
    out
}

pub fn write_analysis(out: &Path, a: &Analysis, experiment: &str) -> Result<()> {
    let t = &a.table;
    let empty = HumanMachineCell::default();
    let cell = |g: &GroupTag| t.groups.get(g).unwrap_or(&empty);

    let mut csv = format!("group,{CELL_COLUMNS}\n");
    for g in GroupTag::all() {
        writeln!(csv, "{g},{}", cell_fields(cell(&g))).unwrap();
    }
    formats::write_atomic(&out.join("tables/human_machine.csv"), csv.as_bytes())?;

    let mut csv = format!("parameter,value,{CELL_COLUMNS}\n");
    for (p, v, c) in marginals(t) {
        writeln!(csv, "{p},{v},{}", cell_fields(&c)).unwrap();
    }
    formats::write_atomic(&out.join("tables/human_machine_marginals.csv"), csv.as_bytes())?;

    let mut csv = String::from("bin,human,machine\n");
    for i in 0..5 {
        writeln!(csv, "{},{},{}", i + 1, a.human_histogram[i], a.machine_histogram[i]).unwrap();
    }
    formats::write_atomic(&out.join("tables/histograms.csv"), csv.as_bytes())?;

    let mut csv = String::from("table,key,n,pearson\n");
    for r in &a.correlations {
        let v = r.r.map(|v| format!("{v:.6}")).unwrap_or_default();
        writeln!(csv, "{},{},{},{v}", r.table, r.key, r.n).unwrap();
    }
    formats::write_atomic(&out.join("tables/correlations.csv"), csv.as_bytes())?;

    let mut text = format!(
        "Human vs machine ({experiment}): {} ratings over {} scenes\n\
         Cells read human/machine accuracy in percent; ratings of 3 are abstentions.\n\n",
        a.ratings, a.scenes
    );
    write!(text, "{:<8}", "blocks").unwrap();
    for c in topple_core::eval::COLUMN_NAMES {
        write!(text, "{c:>14}").unwrap();
    }
    text.push('\n');
    for row in GroupTag::all().chunks(4) {
        write!(text, "{:<8}", format!("{}B", row[0].num_blocks)).unwrap();
        let mut cols = [String::new(), String::new(), String::new(), String::new()];
        for g in row {
            cols[g.column()] = ab(cell(g));
        }
        for c in cols {
            write!(text, "{c:>14}").unwrap();
        }
        text.push('\n');
    }
    text.push_str("\nMarginals\n");
    for (p, v, c) in marginals(t) {
        writeln!(text, "{:<8}{:<8}{:>14}{:>6} abstained", p, v, ab(&c), c.abstentions).unwrap();
    }
    text.push_str("\nHistograms (bin: human machine)\n");
    for i in 0..5 {
        writeln!(text, "{}: {:>6} {:>6}", i + 1, a.human_histogram[i], a.machine_histogram[i]).unwrap();
    }
    text.push_str("\nPearson correlation\n");
    text.push_str(CORRELATION_NOTE);
    text.push('\n');
    for r in &a.correlations {
        let v = r.r.map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into());
        writeln!(text, "{:<8}{:<8}{:>6} pairs{:>10}", r.table, r.key, r.n, v).unwrap();
    }
    formats::write_atomic(&out.join("report.txt"), text.as_bytes())?;
    Ok(())
}
