//! Experiment designs (intra-group, cross-group, generalization) and the
//! human-versus-machine analysis.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::dataset::Split;
use crate::learn::{self, LearnError, ModelParams, Sample, TrainConfig};
use crate::scene::{DepthMode, GroupTag, SizeMode, BLOCK_COUNTS};
use crate::stability::StabilityLabel;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("scene {0} is in both the training and the evaluation slice")]
    Leakage(String),
    #[error("experiment {0} has no evaluation scenes")]
    EmptyEvalSet(String),
    #[error("group {0} is missing from the dataset")]
    MissingGroup(GroupTag),
    #[error("scene {0} is unknown to the predictions or the manifest")]
    SceneMismatch(String),
    #[error("rating {0} is outside 1..=5")]
    OutOfRange(u8),
    #[error("inputs have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two pairs, got {0}")]
    TooFewPairs(usize),
    #[error("one input is constant")]
    ZeroVariance,
}

/// A rendered, labeled scene as seen by the experiments.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub scene_id: String,
    pub group: GroupTag,
    pub split: Split,
    pub label: StabilityLabel,
    pub input: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExperimentSpec {
    pub name: String,
    pub train_groups: BTreeSet<GroupTag>,
    pub test_groups: BTreeSet<GroupTag>,
}

impl ExperimentSpec {
    pub fn new(
        name: impl Into<String>,
        train: impl IntoIterator<Item = GroupTag>,
        test: impl IntoIterator<Item = GroupTag>,
    ) -> Self {
        ExperimentSpec {
            name: name.into(),
            train_groups: train.into_iter().collect(),
            test_groups: test.into_iter().collect(),
        }
    }
}

/// One line of `predictions.jsonl`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScenePrediction {
    pub scene_id: String,
    pub experiment: String,
    pub p_stable: f64,
    pub label: StabilityLabel,
    pub truth: StabilityLabel,
}

impl ScenePrediction {
    pub fn is_correct(&self) -> bool {
        self.label == self.truth
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRun {
    pub spec: ExperimentSpec,
    pub train_size: usize,
    pub params: ModelParams,
    pub curve: Vec<learn::EpochStats>,
    /// Evaluation scenes in ascending id order.
    pub predictions: Vec<ScenePrediction>,
}

impl ExperimentRun {
    pub fn accuracy(&self) -> Cell {
        Cell::tally(self.predictions.iter().map(ScenePrediction::is_correct))
    }
}

/// Correct and total counts; accuracy is their ratio.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Cell {
    pub correct: usize,
    pub count: usize,
}

impl Cell {
    pub fn tally(outcomes: impl IntoIterator<Item = bool>) -> Cell {
        let mut c = Cell::default();
        for ok in outcomes {
            c.add(ok);
        }
        c
    }

    pub fn add(&mut self, correct: bool) {
        self.count += 1;
        self.correct += usize::from(correct);
    }

    pub fn merge(&mut self, other: Cell) {
        self.correct += other.correct;
        self.count += other.count;
    }

    /// `None` for an empty cell.
    pub fn accuracy(&self) -> Option<f64> {
        (self.count > 0).then(|| self.correct as f64 / self.count as f64)
    }
}

pub const COLUMN_NAMES: [&str; 4] = ["Uni-2D", "Uni-3D", "NonUni-2D", "NonUni-3D"];

/// Rows are block counts (4, 6, 10, 14); columns follow [`COLUMN_NAMES`].
/// Absent cells are `None`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AccuracyTable {
    pub cells: [[Option<Cell>; 4]; 4],
}

impl AccuracyTable {
    fn row(group: GroupTag) -> usize {
        BLOCK_COUNTS
            .iter()
            .position(|&n| n == group.num_blocks)
            .unwrap_or(0)
    }

    pub fn get(&self, group: GroupTag) -> Option<Cell> {
        self.cells[Self::row(group)][group.column()]
    }

    pub fn set(&mut self, group: GroupTag, cell: Cell) {
        self.cells[Self::row(group)][group.column()] = Some(cell);
    }

    pub fn accuracy(&self, group: GroupTag) -> Option<f64> {
        self.get(group).and_then(|c| c.accuracy())
    }

    /// Tally predictions by the group of each scene.
    pub fn from_predictions(
        predictions: &[ScenePrediction],
        group_of: impl Fn(&str) -> Option<GroupTag>,
    ) -> Result<Self, EvalError> {
        let mut cells: BTreeMap<GroupTag, Cell> = BTreeMap::new();
        for p in predictions {
            let g = group_of(&p.scene_id).ok_or_else(|| EvalError::SceneMismatch(p.scene_id.clone()))?;
            cells.entry(g).or_default().add(p.is_correct());
        }
        let mut t = AccuracyTable::default();
        for (g, c) in cells {
            t.set(g, c);
        }
        Ok(t)
    }
}

/// Train on the Train split of `train_groups` and evaluate on the Test split
/// of `test_groups`.
pub fn run_experiment(
    spec: &ExperimentSpec,
    examples: &[Example],
    cfg: &TrainConfig,
) -> Result<ExperimentRun, EvalError> {
    let train_set: Vec<&Example> = examples
        .iter()
        .filter(|e| e.split == Split::Train && spec.train_groups.contains(&e.group))
        .collect();
    let mut eval_set: Vec<&Example> = examples
        .iter()
        .filter(|e| e.split == Split::Test && spec.test_groups.contains(&e.group))
        .collect();
    let train_ids: BTreeSet<&str> = train_set.iter().map(|e| e.scene_id.as_str()).collect();
    if let Some(e) = eval_set.iter().find(|e| train_ids.contains(e.scene_id.as_str())) {
        return Err(EvalError::Leakage(e.scene_id.clone()));
    }
    if eval_set.is_empty() {
        return Err(EvalError::EmptyEvalSet(spec.name.clone()));
    }
    let samples: Vec<Sample> = train_set
        .iter()
        .map(|e| Sample {
            key: e.scene_id.clone(),
            input: e.input.clone(),
            label: e.label,
        })
        .collect();
    let outcome = learn::train(&samples, cfg)?;
    eval_set.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));
    let mut predictions = Vec::with_capacity(eval_set.len());
    for e in eval_set {
        let p = learn::predict(&outcome.params, &e.input)?;
        predictions.push(ScenePrediction {
            scene_id: e.scene_id.clone(),
            experiment: spec.name.clone(),
            p_stable: p.p_stable,
            label: p.label,
            truth: e.label,
        });
    }
    Ok(ExperimentRun {
        spec: spec.clone(),
        train_size: samples.len(),
        params: outcome.params,
        curve: outcome.curve,
        predictions,
    })
}

fn require_groups(examples: &[Example], groups: &[GroupTag]) -> Result<(), EvalError> {
    for &g in groups {
        let has = |s: Split| examples.iter().any(|e| e.group == g && e.split == s);
        if !has(Split::Train) || !has(Split::Test) {
            return Err(EvalError::MissingGroup(g));
        }
    }
    Ok(())
}

/// One model per group, trained and tested within that group.
pub fn run_intra_group(
    examples: &[Example],
    groups: &[GroupTag],
    cfg: &TrainConfig,
) -> Result<(AccuracyTable, Vec<ExperimentRun>), EvalError> {
    require_groups(examples, groups)?;
    let mut table = AccuracyTable::default();
    let mut runs = Vec::with_capacity(groups.len());
    for &g in groups {
        let spec = ExperimentSpec::new(format!("intra-{g}"), [g], [g]);
        let run = run_experiment(&spec, examples, cfg)?;
        table.set(g, run.accuracy());
        runs.push(run);
    }
    Ok((table, runs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossGroupResult {
    pub simple_to_complex: ExperimentRun,
    pub complex_to_simple: ExperimentRun,
}

/// Train on 4- and 6-block groups and test on 10 and 14, and the reverse.
pub fn run_cross_group(examples: &[Example], cfg: &TrainConfig) -> Result<CrossGroupResult, EvalError> {
    let all = GroupTag::all();
    require_groups(examples, &all)?;
    let (simple, complex): (Vec<GroupTag>, Vec<GroupTag>) = all.iter().partition(|g| g.is_simple());
    let s2c = ExperimentSpec::new("cross-simple-to-complex", simple.clone(), complex.clone());
    let c2s = ExperimentSpec::new("cross-complex-to-simple", complex, simple);
    for spec in [&s2c, &c2s] {
        if !spec.train_groups.is_disjoint(&spec.test_groups) {
            return Err(EvalError::Leakage(spec.name.clone()));
        }
    }
    Ok(CrossGroupResult {
        simple_to_complex: run_experiment(&s2c, examples, cfg)?,
        complex_to_simple: run_experiment(&c2s, examples, cfg)?,
    })
}

/// One model trained on every group's Train split, scored per group.
pub fn run_generalization(
    examples: &[Example],
    cfg: &TrainConfig,
) -> Result<(AccuracyTable, ExperimentRun), EvalError> {
    let all = GroupTag::all();
    require_groups(examples, &all)?;
    let spec = ExperimentSpec::new("generalization", all.clone(), all);
    let run = run_experiment(&spec, examples, cfg)?;
    let groups: BTreeMap<&str, GroupTag> = examples
        .iter()
        .map(|e| (e.scene_id.as_str(), e.group))
        .collect();
    let table = AccuracyTable::from_predictions(&run.predictions, |id| groups.get(id).copied())?;
    Ok((table, run))
}

/// A human rating reduced to a vote, or an abstention for "cannot tell".
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binarized {
    Vote(StabilityLabel),
    Abstain,
}

pub fn binarize_rating(r: u8) -> Result<Binarized, EvalError> {
    match r {
        1 | 2 => Ok(Binarized::Vote(StabilityLabel::Unstable)),
        3 => Ok(Binarized::Abstain),
        4 | 5 => Ok(Binarized::Vote(StabilityLabel::Stable)),
        _ => Err(EvalError::OutOfRange(r)),
    }
}

/// One line of `ratings.jsonl`.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RatingRecord {
    pub session_id: String,
    pub scene_id: String,
    pub rating: u8,
    pub response_ms: u64,
}

/// Ground truth for a study scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneTruth {
    pub group: GroupTag,
    pub label: StabilityLabel,
}

/// Human and machine tallies for one group.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HumanMachineCell {
    pub human: Cell,
    /// Ratings of 3, left out of `human`.
    pub abstentions: usize,
    pub machine: Cell,
}

impl HumanMachineCell {
    fn merge(&mut self, o: &HumanMachineCell) {
        self.human.merge(o.human);
        self.abstentions += o.abstentions;
        self.machine.merge(o.machine);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HumanMachineTable {
    pub groups: BTreeMap<GroupTag, HumanMachineCell>,
    /// Keyed by block count.
    pub by_blocks: BTreeMap<u32, HumanMachineCell>,
    pub by_depth: BTreeMap<DepthMode, HumanMachineCell>,
    pub by_size: BTreeMap<SizeMode, HumanMachineCell>,
}

/// Per-group human accuracy over non-abstaining ratings next to machine
/// accuracy on the same scenes, with marginals over each scene parameter.
///
/// Marginals pool the counts of their cells, so each is the count-weighted
/// mean of the cell accuracies.
pub fn human_machine_table(
    ratings: &[RatingRecord],
    predictions: &[ScenePrediction],
    truth: &BTreeMap<String, SceneTruth>,
) -> Result<HumanMachineTable, EvalError> {
    let mut groups: BTreeMap<GroupTag, HumanMachineCell> = BTreeMap::new();
    let predicted: BTreeSet<&str> = predictions.iter().map(|p| p.scene_id.as_str()).collect();
    for r in ratings {
        let t = truth
            .get(&r.scene_id)
            .ok_or_else(|| EvalError::SceneMismatch(r.scene_id.clone()))?;
        if !predicted.contains(r.scene_id.as_str()) {
            return Err(EvalError::SceneMismatch(r.scene_id.clone()));
        }
        let cell = groups.entry(t.group).or_default();
        match binarize_rating(r.rating)? {
            Binarized::Vote(v) => cell.human.add(v == t.label),
            Binarized::Abstain => cell.abstentions += 1,
        }
    }
    for p in predictions {
        let t = truth
            .get(&p.scene_id)
            .ok_or_else(|| EvalError::SceneMismatch(p.scene_id.clone()))?;
        groups
            .entry(t.group)
            .or_default()
            .machine
            .add(p.label == t.label);
    }
    let mut table = HumanMachineTable {
        groups,
        ..Default::default()
    };
    for (g, c) in &table.groups {
        table.by_blocks.entry(g.num_blocks).or_default().merge(c);
        table.by_depth.entry(g.depth).or_default().merge(c);
        table.by_size.entry(g.size).or_default().merge(c);
    }
    Ok(table)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(EvalError::TooFewPairs(x.len()));
    }
    if x.iter().all(|&v| v == x[0]) || y.iter().all(|&v| v == y[0]) {
        return Err(EvalError::ZeroVariance);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let r = sxy / (libm::sqrt(sxx) * libm::sqrt(syy));
    Ok(r.clamp(-1.0, 1.0))
}

/// Per-scene pair used for the correlation tables: mean human correctness
/// over non-abstaining ratings, and machine correctness (0 or 1).
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectnessPair {
    pub scene_id: String,
    pub group: GroupTag,
    pub human: f64,
    pub machine: f64,
}

/// Scenes with no non-abstaining rating are skipped.
pub fn correctness_pairs(
    ratings: &[RatingRecord],
    predictions: &[ScenePrediction],
    truth: &BTreeMap<String, SceneTruth>,
) -> Result<Vec<CorrectnessPair>, EvalError> {
    let mut human: BTreeMap<&str, Cell> = BTreeMap::new();
    for r in ratings {
        let t = truth
            .get(&r.scene_id)
            .ok_or_else(|| EvalError::SceneMismatch(r.scene_id.clone()))?;
        if let Binarized::Vote(v) = binarize_rating(r.rating)? {
            human.entry(r.scene_id.as_str()).or_default().add(v == t.label);
        }
    }
    let mut out = Vec::new();
    for p in predictions {
        let t = truth
            .get(&p.scene_id)
            .ok_or_else(|| EvalError::SceneMismatch(p.scene_id.clone()))?;
        if let Some(acc) = human.get(p.scene_id.as_str()).and_then(Cell::accuracy) {
            out.push(CorrectnessPair {
                scene_id: p.scene_id.clone(),
                group: t.group,
                human: acc,
                machine: if p.label == t.label { 1.0 } else { 0.0 },
            });
        }
    }
    Ok(out)
}

/// Counts of human ratings 1..=5 and of quantized machine confidences.
pub fn rating_histograms(
    ratings: &[RatingRecord],
    predictions: &[ScenePrediction],
) -> Result<([usize; 5], [usize; 5]), EvalError> {
    let mut human = [0usize; 5];
    for r in ratings {
        if !(1..=5).contains(&r.rating) {
            return Err(EvalError::OutOfRange(r.rating));
        }
        human[usize::from(r.rating) - 1] += 1;
    }
    let mut machine = [0usize; 5];
    for p in predictions {
        let bin = learn::quantize_confidence(p.p_stable)?;
        machine[usize::from(bin) - 1] += 1;
    }
    Ok((human, machine))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn g(s: &str) -> GroupTag {
        s.parse().unwrap()
    }

    fn pred(id: &str, p: f64, truth: StabilityLabel) -> ScenePrediction {
        let pr = learn::prediction_from_p(p);
        ScenePrediction {
            scene_id: id.to_string(),
            experiment: "x".to_string(),
            p_stable: p,
            label: pr.label,
            truth,
        }
    }

    fn rating(session: &str, id: &str, r: u8) -> RatingRecord {
        RatingRecord {
            session_id: session.to_string(),
            scene_id: id.to_string(),
            rating: r,
            response_ms: 1000,
        }
    }

    #[test]
    fn pearson_fixtures() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-12);
        let expected = 15.0 / libm::sqrt(228.0);
        assert!((pearson(&x, &[2.0, 4.0, 7.0]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn pearson_errors() {
        assert_eq!(pearson(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch(1, 2)));
        assert_eq!(pearson(&[1.0], &[1.0]), Err(EvalError::TooFewPairs(1)));
        assert_eq!(
            pearson(&[0.1, 0.1, 0.1], &[1.0, 2.0, 3.0]),
            Err(EvalError::ZeroVariance)
        );
    }

    #[test]
    fn binarization() {
        use StabilityLabel::*;
        let expect = [
            (1, Binarized::Vote(Unstable)),
            (2, Binarized::Vote(Unstable)),
            (3, Binarized::Abstain),
            (4, Binarized::Vote(Stable)),
            (5, Binarized::Vote(Stable)),
        ];
        for (r, b) in expect {
            assert_eq!(binarize_rating(r), Ok(b));
        }
        assert_eq!(binarize_rating(0), Err(EvalError::OutOfRange(0)));
        assert_eq!(binarize_rating(6), Err(EvalError::OutOfRange(6)));
    }

    #[test]
    fn histograms() {
        let ratings: Vec<RatingRecord> = (1..=5).map(|r| rating("s", "a", r)).collect();
        let preds: Vec<ScenePrediction> = (0..4)
            .map(|i| pred(&format!("p{i}"), 1.0, StabilityLabel::Stable))
            .collect();
        assert_eq!(
            rating_histograms(&ratings, &preds).unwrap(),
            ([1, 1, 1, 1, 1], [0, 0, 0, 0, 4])
        );
        // Hand tally: ratings 2,2,5,3,1,4,4,4,5,2 and confidences by bin.
        let ratings: Vec<RatingRecord> = [2, 2, 5, 3, 1, 4, 4, 4, 5, 2]
            .iter()
            .map(|&r| rating("s", "a", r))
            .collect();
        let preds: Vec<ScenePrediction> = [0.0, 0.19, 0.2, 0.5, 0.55, 0.79, 0.8, 0.99, 1.0, 0.4]
            .iter()
            .enumerate()
            .map(|(i, &p)| pred(&format!("p{i}"), p, StabilityLabel::Stable))
            .collect();
        assert_eq!(
            rating_histograms(&ratings, &preds).unwrap(),
            ([1, 3, 1, 3, 2], [2, 1, 3, 1, 3])
        );
    }

    fn fixture() -> (Vec<RatingRecord>, Vec<ScenePrediction>, BTreeMap<String, SceneTruth>) {
        use StabilityLabel::*;
        let scenes = [
            ("4B-2D-Uni-0000", Stable),
            ("4B-2D-Uni-0001", Unstable),
            ("4B-3D-Uni-0000", Stable),
            ("14B-2D-Uni-0000", Unstable),
        ];
        let truth: BTreeMap<String, SceneTruth> = scenes
            .iter()
            .map(|(id, l)| {
                let group = g(&id[..id.len() - 5]);
                (id.to_string(), SceneTruth { group, label: *l })
            })
            .collect();
        let preds = vec![
            pred("4B-2D-Uni-0000", 0.9, Stable),
            pred("4B-2D-Uni-0001", 0.7, Unstable),
            pred("4B-3D-Uni-0000", 0.6, Stable),
            pred("14B-2D-Uni-0000", 0.1, Unstable),
        ];
        let ratings = vec![
            rating("a", "4B-2D-Uni-0000", 5),
            rating("a", "4B-2D-Uni-0001", 4),
            rating("a", "4B-3D-Uni-0000", 3),
            rating("a", "14B-2D-Uni-0000", 1),
            rating("b", "4B-2D-Uni-0000", 4),
            rating("b", "4B-2D-Uni-0001", 1),
            rating("b", "4B-3D-Uni-0000", 2),
            rating("b", "14B-2D-Uni-0000", 2),
        ];
        (ratings, preds, truth)
    }

    #[test]
    fn human_machine_marginals_pool_counts() {
        let (ratings, preds, truth) = fixture();
        let t = human_machine_table(&ratings, &preds, &truth).unwrap();
        let c = t.groups[&g("4B-2D-Uni")];
        assert_eq!(c.human, Cell { correct: 3, count: 4 });
        assert_eq!(c.machine, Cell { correct: 1, count: 2 });
        let c = t.groups[&g("4B-3D-Uni")];
        assert_eq!(c.human, Cell { correct: 0, count: 1 });
        assert_eq!(c.abstentions, 1);
        // 4-block row: human (3 + 0) / (4 + 1), machine (1 + 1) / (2 + 1).
        let row = t.by_blocks[&4];
        assert_eq!(row.human.accuracy(), Some(3.0 / 5.0));
        assert_eq!(row.machine.accuracy(), Some(2.0 / 3.0));
        let two_d = t.by_depth[&DepthMode::TwoD];
        assert_eq!(two_d.human, Cell { correct: 5, count: 6 });
        assert_eq!(t.by_size[&SizeMode::Uni].machine, Cell { correct: 3, count: 4 });
        for (key, m) in &t.by_blocks {
            let parts: Vec<&HumanMachineCell> = t
                .groups
                .iter()
                .filter(|(gr, _)| gr.num_blocks == *key)
                .map(|(_, c)| c)
                .collect();
            let num: f64 = parts
                .iter()
                .map(|c| c.human.accuracy().unwrap_or(0.0) * c.human.count as f64)
                .sum();
            let den: usize = parts.iter().map(|c| c.human.count).sum();
            assert!((m.human.accuracy().unwrap() - num / den as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn perfect_raters_and_model() {
        let (_, preds, truth) = fixture();
        let ratings: Vec<RatingRecord> = truth
            .iter()
            .map(|(id, t)| rating("a", id, if t.label.is_stable() { 5 } else { 1 }))
            .collect();
        let preds: Vec<ScenePrediction> = preds
            .into_iter()
            .map(|p| {
                let q = if p.truth.is_stable() { 0.9 } else { 0.1 };
                pred(&p.scene_id, q, p.truth)
            })
            .collect();
        let t = human_machine_table(&ratings, &preds, &truth).unwrap();
        for c in t.groups.values() {
            assert_eq!(c.human.accuracy(), Some(1.0));
            assert_eq!(c.machine.accuracy(), Some(1.0));
        }
    }

    #[test]
    fn unknown_scene_is_a_mismatch() {
        let (mut ratings, preds, truth) = fixture();
        ratings.push(rating("c", "6B-2D-Uni-0003", 5));
        assert_eq!(
            human_machine_table(&ratings, &preds, &truth),
            Err(EvalError::SceneMismatch("6B-2D-Uni-0003".to_string()))
        );
    }

    #[test]
    fn correctness_pairs_average_subjects() {
        let (ratings, preds, truth) = fixture();
        let pairs = correctness_pairs(&ratings, &preds, &truth).unwrap();
        let find = |id: &str| pairs.iter().find(|p| p.scene_id == id).unwrap();
        assert_eq!(find("4B-2D-Uni-0001").human, 0.5);
        assert_eq!(find("4B-2D-Uni-0001").machine, 0.0);
        assert_eq!(find("4B-3D-Uni-0000").human, 0.0);
        assert_eq!(find("14B-2D-Uni-0000").human, 1.0);
    }

    fn example(id: &str, group: GroupTag, split: Split, label: StabilityLabel, v: f32) -> Example {
        Example {
            scene_id: id.to_string(),
            group,
            split,
            label,
            input: vec![v; learn::INPUT_SIDE * learn::INPUT_SIDE],
        }
    }

    #[test]
    fn constant_test_labels_matching_the_model_score_one() {
        // A constant model (no training signal: every input identical, all
        // labels unstable) predicts unstable everywhere.
        let grp = g("4B-2D-Uni");
        let mut ex = Vec::new();
        for i in 0..4 {
            let split = if i % 2 == 0 { Split::Train } else { Split::Test };
            ex.push(example(
                &format!("{grp}-{i:04}"),
                grp,
                split,
                StabilityLabel::Unstable,
                0.5,
            ));
        }
        let (table, runs) = run_intra_group(&ex, &[grp], &TrainConfig::default()).unwrap();
        assert_eq!(table.accuracy(grp), Some(1.0));
        assert_eq!(runs[0].train_size, 2);
        assert_eq!(table.get(g("14B-3D-NonUni")), None);
    }

    #[test]
    fn leakage_is_detected() {
        let grp = g("4B-2D-Uni");
        let ex = vec![
            example("dup", grp, Split::Train, StabilityLabel::Stable, 0.1),
            example("dup", grp, Split::Test, StabilityLabel::Stable, 0.1),
        ];
        let spec = ExperimentSpec::new("leak", [grp], [grp]);
        assert_eq!(
            run_experiment(&spec, &ex, &TrainConfig::default()),
            Err(EvalError::Leakage("dup".to_string()))
        );
    }

    #[test]
    fn missing_group_is_reported() {
        let grp = g("4B-2D-Uni");
        let ex = vec![example("a", grp, Split::Train, StabilityLabel::Stable, 0.1)];
        assert_eq!(
            run_intra_group(&ex, &[grp], &TrainConfig::default()).unwrap_err(),
            EvalError::MissingGroup(grp)
        );
        assert_eq!(
            run_cross_group(&ex, &TrainConfig::default()).unwrap_err(),
            EvalError::MissingGroup(grp)
        );
    }
}
