//! Behavioral benchmarks and comparison statistics.
//!
//! Embeds four classic category-learning structures (a 5-4 family-resemblance
//! table, a linearly vs non-linearly separable pair, the six three-feature
//! concept types, and a second family-resemblance table with initial/final
//! learning blocks), runs the network and Rational Rules predictors on them,
//! and computes the comparison statistics (squared Pearson R², error
//! probability) used to judge fidelity.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::episode::{LabeledExample, OutlierParam};
use crate::error::{Error, Result};
use crate::grammar::{default_grammar, Object};
use crate::meta::{adapt, Checkpoint};
use crate::mlp::{forward, Mode};
use crate::rng;
use crate::rr::{posterior_predictive, predict_blocks, RRConfig};

/// One named column of per-object response probabilities (human response
/// rates or published model predictions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

/// One benchmark category structure: labeled training examples, test objects
/// in presentation order, optional true test labels, and published response
/// columns aligned with the test objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub name: String,
    pub n_features: usize,
    pub training: Vec<LabeledExample>,
    /// Row names in table order (e.g. "A1", "T3"); unique within a table.
    pub row_names: Vec<String>,
    pub test_objects: Vec<Object>,
    /// True category labels of the test objects, when the benchmark defines
    /// them (transfer objects in the family-resemblance tables do not).
    pub test_labels: Option<Vec<u8>>,
    pub columns: Vec<Column>,
}

impl BenchmarkTable {
    pub fn validate(&self) -> Result<()> {
        let n = self.test_objects.len();
        if self.row_names.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{}: {} row names for {} test objects",
                self.name,
                self.row_names.len(),
                n
            )));
        }
        for (i, name) in self.row_names.iter().enumerate() {
            if self.row_names[..i].contains(name) {
                return Err(Error::InvalidArgument(format!(
                    "{}: duplicate row name {name}",
                    self.name
                )));
            }
        }
        for ex in &self.training {
            if ex.object.len() != self.n_features {
                return Err(Error::InvalidArgument(format!(
                    "{}: training object {} is not {}-feature",
                    self.name,
                    ex.object.bitstring(),
                    self.n_features
                )));
            }
        }
        for o in &self.test_objects {
            if o.len() != self.n_features {
                return Err(Error::InvalidArgument(format!(
                    "{}: test object {} is not {}-feature",
                    self.name,
                    o.bitstring(),
                    self.n_features
                )));
            }
        }
        if let Some(labels) = &self.test_labels {
            if labels.len() != n || labels.iter().any(|&l| l > 1) {
                return Err(Error::InvalidArgument(format!("{}: bad test labels", self.name)));
            }
        }
        for col in &self.columns {
            if col.values.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{}: column {} has {} values for {n} objects",
                    self.name,
                    col.name,
                    col.values.len()
                )));
            }
            if col.values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::InvalidArgument(format!(
                    "{}: column {} has a probability outside [0,1]",
                    self.name, col.name
                )));
            }
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.values.as_slice())
    }
}

fn ex(bits: &str, label: u8) -> LabeledExample {
    LabeledExample { object: Object::from_bitstring(bits).unwrap(), label, flipped: false }
}

fn objs(bits: &[&str]) -> Vec<Object> {
    bits.iter().map(|s| Object::from_bitstring(s).unwrap()).collect()
}

fn names(prefix_counts: &[(&str, usize)]) -> Vec<String> {
    let mut out = Vec::new();
    for &(p, count) in prefix_counts {
        for i in 1..=count {
            out.push(format!("{p}{i}"));
        }
    }
    out
}

/// The 5-4 family-resemblance structure: nine four-feature training objects
/// (five A, four B) and sixteen test objects with human response rates and
/// published model columns.
pub fn medin_schaffer() -> BenchmarkTable {
    let order = [
        "0001", "0101", "0100", "0010", "1000", "0011", "1001", "1110", "1111", "0110", "0111",
        "0000", "1101", "1010", "1100", "1011",
    ];
    BenchmarkTable {
        name: "medin-schaffer".into(),
        n_features: 4,
        training: order[..9]
            .iter()
            .enumerate()
            .map(|(i, bits)| ex(bits, (i < 5) as u8))
            .collect(),
        row_names: names(&[("A", 5), ("B", 4), ("T", 7)]),
        test_objects: objs(&order),
        test_labels: None,
        columns: vec![
            Column {
                name: "human".into(),
                values: vec![
                    0.77, 0.78, 0.83, 0.64, 0.61, 0.39, 0.41, 0.21, 0.15, 0.56, 0.41, 0.82, 0.40,
                    0.32, 0.53, 0.20,
                ],
            },
            Column {
                name: "rr".into(),
                values: vec![
                    0.82, 0.81, 0.92, 0.61, 0.61, 0.47, 0.47, 0.21, 0.07, 0.57, 0.44, 0.95, 0.44,
                    0.28, 0.57, 0.13,
                ],
            },
            Column {
                name: "prior_trained".into(),
                values: vec![
                    0.71, 0.76, 0.84, 0.69, 0.70, 0.40, 0.45, 0.22, 0.14, 0.56, 0.34, 0.84, 0.41,
                    0.39, 0.60, 0.19,
                ],
            },
            Column { name: "standard".into(), values: vec![0.52; 16] },
        ],
    }
}

fn ls_nls_table(name: &str, a: [&str; 3], b: [&str; 3]) -> BenchmarkTable {
    let training: Vec<LabeledExample> = a
        .iter()
        .map(|s| ex(s, 1))
        .chain(b.iter().map(|s| ex(s, 0)))
        .collect();
    BenchmarkTable {
        name: name.into(),
        n_features: 4,
        test_objects: training.iter().map(|e| e.object.clone()).collect(),
        test_labels: Some(training.iter().map(|e| e.label).collect()),
        row_names: names(&[("A", 3), ("B", 3)]),
        training,
        columns: Vec::new(),
    }
}

/// The linearly separable concept of the LS/NLS pair, exactly as published
/// (object 1000 appears in both categories).
pub fn concept_ls() -> BenchmarkTable {
    ls_nls_table("ls", ["1000", "0001", "0110"], ["0111", "1000", "1001"])
}

/// The non-linearly separable concept of the LS/NLS pair.
pub fn concept_nls() -> BenchmarkTable {
    ls_nls_table("nls", ["0011", "1100", "0000"], ["1111", "1010", "0101"])
}

/// Sign patterns of the six three-feature concept types over objects
/// 000..111 in binary order (1 = positive example).
pub const SHJ_SIGNS: [[u8; 8]; 6] = [
    [1, 1, 1, 1, 0, 0, 0, 0], // I
    [1, 1, 0, 0, 0, 0, 1, 1], // II
    [1, 1, 1, 0, 0, 1, 0, 0], // III
    [1, 1, 1, 0, 1, 0, 0, 0], // IV
    [1, 1, 1, 0, 0, 0, 0, 1], // V
    [1, 0, 0, 1, 0, 1, 1, 0], // VI
];

pub const SHJ_NAMES: [&str; 6] = ["shj-i", "shj-ii", "shj-iii", "shj-iv", "shj-v", "shj-vi"];

/// One of the six three-feature concept types (`concept` in 1..=6). All
/// eight objects serve as both training and test set.
pub fn shj_concept(concept: usize) -> Result<BenchmarkTable> {
    if !(1..=6).contains(&concept) {
        return Err(Error::InvalidArgument(format!("concept type {concept} not in 1..=6")));
    }
    let signs = SHJ_SIGNS[concept - 1];
    let objects = Object::all(3);
    let training: Vec<LabeledExample> = objects
        .iter()
        .enumerate()
        .map(|(ix, o)| LabeledExample { object: o.clone(), label: signs[ix], flipped: false })
        .collect();
    Ok(BenchmarkTable {
        name: SHJ_NAMES[concept - 1].into(),
        n_features: 3,
        row_names: objects.iter().map(|o| o.bitstring()).collect(),
        test_objects: objects,
        test_labels: Some(signs.to_vec()),
        training,
        columns: Vec::new(),
    })
}

/// The second family-resemblance structure: eight training objects and
/// sixteen test objects with initial- and final-block human response rates
/// plus published model columns at b=1 and b=7.
pub fn medin82() -> BenchmarkTable {
    let order = [
        "1111", "0111", "1100", "1000", "1010", "0010", "0101", "0001", "0000", "0011", "0100",
        "1011", "1110", "1101", "0110", "1001",
    ];
    BenchmarkTable {
        name: "medin82".into(),
        n_features: 4,
        training: order[..8]
            .iter()
            .enumerate()
            .map(|(i, bits)| ex(bits, (i < 4) as u8))
            .collect(),
        row_names: names(&[("A", 4), ("B", 4), ("T", 8)]),
        test_objects: objs(&order),
        test_labels: None,
        columns: vec![
            Column {
                name: "human_initial".into(),
                values: vec![
                    0.64, 0.64, 0.66, 0.55, 0.57, 0.43, 0.46, 0.34, 0.46, 0.41, 0.52, 0.5, 0.73,
                    0.59, 0.39, 0.46,
                ],
            },
            Column {
                name: "rr_b1".into(),
                values: vec![
                    0.84, 0.54, 0.84, 0.54, 0.46, 0.16, 0.46, 0.16, 0.2, 0.2, 0.5, 0.5, 0.8, 0.8,
                    0.5, 0.5,
                ],
            },
            Column {
                name: "network_b1".into(),
                values: vec![
                    0.84, 0.67, 0.83, 0.66, 0.32, 0.15, 0.31, 0.15, 0.22, 0.26, 0.45, 0.48, 0.72,
                    0.74, 0.49, 0.51,
                ],
            },
            Column {
                name: "human_final".into(),
                values: vec![
                    0.96, 0.93, 1.0, 0.96, 0.02, 0.0, 0.05, 0.0, 0.66, 0.64, 0.64, 0.66, 0.36,
                    0.36, 0.27, 0.3,
                ],
            },
            Column {
                name: "rr_b7".into(),
                values: vec![
                    1.0, 1.0, 1.0, 0.99, 0.0, 0.0, 0.01, 0.0, 0.56, 0.55, 0.57, 0.56, 0.45, 0.44,
                    0.44, 0.43,
                ],
            },
            Column {
                name: "network_b7".into(),
                values: vec![
                    0.98, 0.97, 0.98, 0.96, 0.03, 0.02, 0.03, 0.02, 0.14, 0.32, 0.3, 0.38, 0.66,
                    0.79, 0.53, 0.63,
                ],
            },
        ],
    }
}

/// All embedded benchmark tables.
pub fn builtin_benchmarks() -> Vec<BenchmarkTable> {
    let mut out = vec![medin_schaffer(), concept_ls(), concept_nls()];
    for c in 1..=6 {
        out.push(shj_concept(c).unwrap());
    }
    out.push(medin82());
    out
}

/// Mean probability of a classification error: `1 - p` on true-A objects and
/// `p` on true-B objects.
pub fn error_probability(predictions: &[f64], labels: &[u8]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::InvalidArgument(
            "error_probability needs aligned nonempty predictions and labels".into(),
        ));
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &l)| if l == 1 { 1.0 - p } else { p })
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Squared Pearson correlation between two response vectors.
pub fn r_squared(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 3 {
        return Err(Error::InvalidArgument(
            "r_squared needs two vectors of equal length >= 3".into(),
        ));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        var_a += (x - ma) * (x - ma);
        var_b += (y - mb) * (y - mb);
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::UndefinedStatistic(
            "correlation with a zero-variance vector".into(),
        ));
    }
    Ok((cov * cov / (var_a * var_b)).min(1.0))
}

/// Network predictions on a benchmark: one probability vector per checkpoint
/// (seed replicate) plus their mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkPredictions {
    pub per_seed: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

/// Adapt each checkpoint on the benchmark's training examples for `epochs`
/// epochs (at the checkpoint's own inner learning rate), evaluate all test
/// objects, and average over checkpoints.
pub fn predict_with_network(
    checkpoints: &[Checkpoint],
    benchmark: &BenchmarkTable,
    epochs: usize,
) -> Result<NetworkPredictions> {
    if checkpoints.is_empty() {
        return Err(Error::InvalidArgument("predict_with_network needs >= 1 checkpoint".into()));
    }
    let mut per_seed = Vec::with_capacity(checkpoints.len());
    for ck in checkpoints {
        if ck.mlp_config.input_dim != benchmark.n_features {
            return Err(Error::Incompatible(format!(
                "checkpoint expects {} features, benchmark {} has {}",
                ck.mlp_config.input_dim, benchmark.name, benchmark.n_features
            )));
        }
        let adapted = adapt(
            &ck.params,
            &ck.mlp_config,
            &benchmark.training,
            epochs,
            ck.meta_config.inner_lr,
        )?;
        per_seed.push(forward(
            &adapted,
            &ck.mlp_config,
            &benchmark.test_objects,
            Mode::Eval,
            &mut rng::root(0),
        )?);
    }
    let n = benchmark.test_objects.len();
    let mean = (0..n)
        .map(|i| per_seed.iter().map(|p| p[i]).sum::<f64>() / per_seed.len() as f64)
        .collect();
    Ok(NetworkPredictions { per_seed, mean })
}

/// Rational Rules posterior predictive on a benchmark's test objects.
pub fn predict_with_rr(benchmark: &BenchmarkTable, config: &RRConfig) -> Result<Vec<f64>> {
    let grammar = default_grammar(benchmark.n_features)?;
    let pred = posterior_predictive(&grammar, &benchmark.training, config)?;
    Ok(benchmark.test_objects.iter().map(|o| pred.prob_a[o.index()]).collect())
}

/// Rational Rules predictive after `n_blocks` presentations of the training
/// set (computed through the b' = b * blocks identity).
pub fn predict_with_rr_blocks(
    benchmark: &BenchmarkTable,
    b: OutlierParam,
    n_blocks: u32,
    config: &RRConfig,
) -> Result<Vec<f64>> {
    let grammar = default_grammar(benchmark.n_features)?;
    let pred = predict_blocks(&grammar, &benchmark.training, b, n_blocks, config)?;
    Ok(benchmark.test_objects.iter().map(|o| pred.prob_a[o.index()]).collect())
}

/// The four named experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    MedinSchaffer,
    LsNls,
    Shj,
    Medin82,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::MedinSchaffer => "medin-schaffer",
            Experiment::LsNls => "ls-nls",
            Experiment::Shj => "shj",
            Experiment::Medin82 => "medin82",
        }
    }

    /// The benchmark tables this experiment evaluates.
    pub fn benchmarks(self) -> Vec<BenchmarkTable> {
        match self {
            Experiment::MedinSchaffer => vec![medin_schaffer()],
            Experiment::LsNls => vec![concept_ls(), concept_nls()],
            Experiment::Shj => (1..=6).map(|c| shj_concept(c).unwrap()).collect(),
            Experiment::Medin82 => vec![medin82()],
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Experiment> {
        match s {
            "medin-schaffer" => Ok(Experiment::MedinSchaffer),
            "ls-nls" => Ok(Experiment::LsNls),
            "shj" => Ok(Experiment::Shj),
            "medin82" => Ok(Experiment::Medin82),
            other => Err(Error::Config(format!(
                "unknown experiment {other:?} (expected medin-schaffer, ls-nls, shj, or medin82)"
            ))),
        }
    }
}

/// The swept axis: per-b checkpoint sets with one test-time epoch, or a
/// fixed checkpoint set with varying test-time epochs.
#[derive(Debug, Clone)]
pub enum Sweep {
    OutlierB { points: Vec<u32>, checkpoints: BTreeMap<u32, Vec<Checkpoint>> },
    Epochs { points: Vec<u32>, checkpoints: Vec<Checkpoint> },
}

impl Sweep {
    fn axis_name(&self) -> &'static str {
        match self {
            Sweep::OutlierB { .. } => "b",
            Sweep::Epochs { .. } => "epochs",
        }
    }

    fn points(&self) -> &[u32] {
        match self {
            Sweep::OutlierB { points, .. } | Sweep::Epochs { points, .. } => points,
        }
    }
}

/// Full experiment request.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    pub sweep: Sweep,
    /// Also evaluate the Rational Rules predictor at each axis point.
    pub include_rr: bool,
    /// Enumeration bound for the Rational Rules predictor.
    pub rr_max_literals: usize,
}

/// One object-level prediction in a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionRow {
    pub benchmark: String,
    pub predictor: String,
    pub axis: String,
    pub point: u32,
    pub row: String,
    pub object: String,
    pub value: f64,
}

/// One summary statistic in a report. Undefined statistics (zero-variance
/// correlations) are recorded as NaN.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub benchmark: String,
    pub axis: String,
    pub point: u32,
    pub stat: String,
    pub value: f64,
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub experiment: String,
    pub predictions: Vec<PredictionRow>,
    pub summary: Vec<SummaryRow>,
}

impl EvalReport {
    /// Summary values for one statistic keyed by (benchmark, point).
    pub fn stat(&self, benchmark: &str, stat: &str) -> BTreeMap<u32, f64> {
        self.summary
            .iter()
            .filter(|r| r.benchmark == benchmark && r.stat == stat)
            .map(|r| (r.point, r.value))
            .collect()
    }
}

fn stat_or_nan(r: Result<f64>) -> Result<f64> {
    match r {
        Err(Error::UndefinedStatistic(_)) => Ok(f64::NAN),
        other => other,
    }
}

/// Run a named experiment over the configured sweep, computing per-object
/// predictions and summary statistics (error probabilities against true
/// labels, R² against every published column). Writes `predictions.csv`,
/// `summary.csv`, and `benchmarks.csv` under `out_dir` when given.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: Option<&Path>) -> Result<EvalReport> {
    let benchmarks = spec.experiment.benchmarks();
    let axis = spec.sweep.axis_name();
    let mut report = EvalReport {
        experiment: spec.experiment.name().to_string(),
        predictions: Vec::new(),
        summary: Vec::new(),
    };
    for &point in spec.sweep.points() {
        for bench in &benchmarks {
            let net = match &spec.sweep {
                Sweep::OutlierB { checkpoints, .. } => {
                    let cks = checkpoints.get(&point).ok_or_else(|| {
                        Error::Config(format!("no checkpoint provided for b = {point}"))
                    })?;
                    predict_with_network(cks, bench, 1)?
                }
                Sweep::Epochs { checkpoints, .. } => {
                    predict_with_network(checkpoints, bench, point as usize)?
                }
            };
            let rr = if spec.include_rr {
                let cfg = RRConfig::enumeration(OutlierParam(1), spec.rr_max_literals);
                Some(match &spec.sweep {
                    Sweep::OutlierB { .. } => predict_with_rr(
                        bench,
                        &RRConfig::enumeration(OutlierParam(point), spec.rr_max_literals),
                    )?,
                    Sweep::Epochs { .. } => {
                        predict_with_rr_blocks(bench, OutlierParam(1), point, &cfg)?
                    }
                })
            } else {
                None
            };
            let mut predictors: Vec<(&str, &[f64])> = vec![("network", &net.mean)];
            if let Some(rr) = &rr {
                predictors.push(("rr", rr));
            }
            for (pname, values) in &predictors {
                for (i, row) in bench.row_names.iter().enumerate() {
                    report.predictions.push(PredictionRow {
                        benchmark: bench.name.clone(),
                        predictor: pname.to_string(),
                        axis: axis.to_string(),
                        point,
                        row: row.clone(),
                        object: bench.test_objects[i].bitstring(),
                        value: values[i],
                    });
                }
                if let Some(labels) = &bench.test_labels {
                    report.summary.push(SummaryRow {
                        benchmark: bench.name.clone(),
                        axis: axis.to_string(),
                        point,
                        stat: format!("error_{pname}"),
                        value: error_probability(values, labels)?,
                    });
                }
                for col in &bench.columns {
                    report.summary.push(SummaryRow {
                        benchmark: bench.name.clone(),
                        axis: axis.to_string(),
                        point,
                        stat: format!("r2_{pname}_vs_{}", col.name),
                        value: stat_or_nan(r_squared(values, &col.values))?,
                    });
                }
            }
        }
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("predictions.csv"), predictions_csv(&report.predictions))?;
        fs::write(dir.join("summary.csv"), summary_csv(&report.summary))?;
        fs::write(dir.join("benchmarks.csv"), benchmarks_csv(&benchmarks))?;
    }
    Ok(report)
}

fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut s = String::from("benchmark,predictor,axis,point,row,object,value\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.benchmark, r.predictor, r.axis, r.point, r.row, r.object, r.value
        ));
    }
    s
}

fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("benchmark,axis,point,stat,value\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.benchmark, r.axis, r.point, r.stat, r.value));
    }
    s
}

/// Serialize benchmark tables to a tall CSV. Three row kinds: `train`
/// (labeled training example), `test` (test object in order, with label when
/// defined), and `value` (one cell of a published column, aligned with test
/// rows by order of appearance).
pub fn benchmarks_csv(tables: &[BenchmarkTable]) -> String {
    let mut s = String::from("kind,benchmark,row,object,label,column,value\n");
    for t in tables {
        for ex in &t.training {
            s.push_str(&format!(
                "train,{},,{},{},,\n",
                t.name,
                ex.object.bitstring(),
                ex.label
            ));
        }
        for (i, o) in t.test_objects.iter().enumerate() {
            let label = match &t.test_labels {
                Some(l) => l[i].to_string(),
                None => String::new(),
            };
            s.push_str(&format!(
                "test,{},{},{},{label},,\n",
                t.name,
                t.row_names[i],
                o.bitstring()
            ));
        }
        for col in &t.columns {
            for (i, v) in col.values.iter().enumerate() {
                s.push_str(&format!(
                    "value,{},{},,,{},{v}\n",
                    t.name, t.row_names[i], col.name
                ));
            }
        }
    }
    s
}

/// Parse the output of [`benchmarks_csv`] back into tables (used to verify
/// that embedded benchmark data survives the report format unchanged).
pub fn parse_benchmarks_csv(text: &str) -> Result<Vec<BenchmarkTable>> {
    let mut tables: Vec<BenchmarkTable> = Vec::new();
    let parse_err = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
    for (ix, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(parse_err(ix + 1, "expected 7 fields"));
        }
        let (kind, name, row, object, label, column, value) = (
            fields[0], fields[1], fields[2], fields[3], fields[4], fields[5], fields[6],
        );
        if tables.last().map(|t: &BenchmarkTable| t.name.as_str()) != Some(name) {
            tables.push(BenchmarkTable {
                name: name.to_string(),
                n_features: 0,
                training: Vec::new(),
                row_names: Vec::new(),
                test_objects: Vec::new(),
                test_labels: None,
                columns: Vec::new(),
            });
        }
        let t = tables.last_mut().unwrap();
        match kind {
            "train" => {
                let obj = Object::from_bitstring(object)?;
                t.n_features = obj.len();
                t.training.push(LabeledExample {
                    object: obj,
                    label: label.parse().map_err(|_| parse_err(ix + 1, "bad label"))?,
                    flipped: false,
                });
            }
            "test" => {
                t.row_names.push(row.to_string());
                t.test_objects.push(Object::from_bitstring(object)?);
                if !label.is_empty() {
                    let l = label.parse().map_err(|_| parse_err(ix + 1, "bad label"))?;
                    t.test_labels.get_or_insert_with(Vec::new).push(l);
                }
            }
            "value" => {
                let v: f64 = value.parse().map_err(|_| parse_err(ix + 1, "bad value"))?;
                if t.columns.last().map(|c| c.name.as_str()) != Some(column) {
                    t.columns.push(Column { name: column.to_string(), values: Vec::new() });
                }
                t.columns.last_mut().unwrap().values.push(v);
            }
            other => return Err(parse_err(ix + 1, &format!("unknown row kind {other:?}"))),
        }
    }
    for t in &tables {
        t.validate()?;
    }
    Ok(tables)
}

impl fmt::Display for SummaryRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}={} {} {:.4}",
            self.benchmark, self.axis, self.point, self.stat, self.value
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::MetaConfig;
    use crate::mlp::{MLPConfig, ParamSet};
    use approx::assert_abs_diff_eq;

    #[test]
    fn builtin_tables_validate_and_match_published_structure() {
        let tables = builtin_benchmarks();
        assert_eq!(tables.len(), 10);
        for t in &tables {
            t.validate().unwrap();
        }
        let ms = medin_schaffer();
        assert_eq!(ms.training.len(), 9);
        assert_eq!(ms.test_objects.len(), 16);
        assert_eq!(ms.column("human").unwrap()[0], 0.77);
        assert_eq!(ms.row_names[0], "A1");

        let shj1 = shj_concept(1).unwrap();
        let positives: Vec<String> = shj1
            .training
            .iter()
            .filter(|e| e.label == 1)
            .map(|e| e.object.bitstring())
            .collect();
        assert_eq!(positives, ["000", "001", "010", "011"]);

        let ls = concept_ls();
        let a: Vec<String> = ls
            .training
            .iter()
            .filter(|e| e.label == 1)
            .map(|e| e.object.bitstring())
            .collect();
        assert_eq!(a, ["1000", "0001", "0110"]);
        // object 1000 is printed in both categories of concept LS
        assert!(ls.training.iter().any(|e| e.label == 0 && e.object.bitstring() == "1000"));
        assert!(shj_concept(0).is_err());
    }

    #[test]
    fn r_squared_matches_correlation_identities() {
        let x = [0.1, 0.5, 0.9, 0.3];
        assert_abs_diff_eq!(r_squared(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
        let affine: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert_abs_diff_eq!(r_squared(&x, &affine).unwrap(), 1.0, epsilon = 1e-12);
        let y = [0.4, 0.2, 0.8, 0.6];
        assert_abs_diff_eq!(
            r_squared(&x, &y).unwrap(),
            r_squared(&y, &x).unwrap(),
            epsilon = 1e-14
        );
        let neg: Vec<f64> = y.iter().map(|v| -3.0 * v + 0.5).collect();
        assert_abs_diff_eq!(
            r_squared(&x, &y).unwrap(),
            r_squared(&x, &neg).unwrap(),
            epsilon = 1e-14
        );
        assert!(matches!(
            r_squared(&x, &[0.3, 0.3, 0.3, 0.3]),
            Err(Error::UndefinedStatistic(_))
        ));
        assert!(r_squared(&[0.1, 0.2], &[0.3, 0.4]).is_err());
    }

    #[test]
    fn error_probability_identities() {
        assert_eq!(error_probability(&[1.0, 1.0, 0.0], &[1, 1, 0]).unwrap(), 0.0);
        assert_eq!(error_probability(&[0.5; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
        // invariant under simultaneous A<->B relabeling
        let p = [0.9, 0.2, 0.6, 0.4];
        let l = [1, 0, 0, 1];
        let p_flip: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
        let l_flip: Vec<u8> = l.iter().map(|v| 1 - v).collect();
        assert_eq!(
            error_probability(&p, &l).unwrap(),
            error_probability(&p_flip, &l_flip).unwrap()
        );
        assert!(error_probability(&[0.5], &[1, 0]).is_err());
    }

    #[test]
    fn rr_predictor_tracks_human_responses() {
        let ms = medin_schaffer();
        let pred = predict_with_rr(&ms, &RRConfig::enumeration(OutlierParam(1), 5)).unwrap();
        let r2 = r_squared(&pred, ms.column("human").unwrap()).unwrap();
        assert!((r2 - 0.98).abs() <= 0.03, "R2 vs humans = {r2}");
    }

    #[test]
    fn rr_block_sweep_equals_scaled_b_sweep() {
        let cfg = RRConfig::enumeration(OutlierParam(1), 4);
        let shj = shj_concept(2).unwrap();
        for n in 1..=3u32 {
            let blocks = predict_with_rr_blocks(&shj, OutlierParam(2), n, &cfg).unwrap();
            let scaled =
                predict_with_rr(&shj, &RRConfig::enumeration(OutlierParam(2 * n), 4)).unwrap();
            assert_eq!(blocks, scaled, "blocks = {n}");
        }
    }

    #[test]
    fn benchmarks_csv_round_trips() {
        let tables = builtin_benchmarks();
        let csv = benchmarks_csv(&tables);
        let parsed = parse_benchmarks_csv(&csv).unwrap();
        assert_eq!(parsed, tables);
    }

    fn untrained_checkpoint(input_dim: usize, seed: u64) -> Checkpoint {
        let cfg = MLPConfig::tiny(input_dim);
        Checkpoint {
            params: ParamSet::init(&cfg, &mut rng::stream(seed, 0)).unwrap(),
            mlp_config: cfg,
            meta_config: MetaConfig::new(seed),
            corpus_digest: String::new(),
            outer_steps: 0,
        }
    }

    #[test]
    fn network_predictions_average_seeds_and_respect_zero_epochs() {
        let ms = medin_schaffer();
        let cks = [untrained_checkpoint(4, 1), untrained_checkpoint(4, 2)];
        let pred = predict_with_network(&cks, &ms, 1).unwrap();
        assert_eq!(pred.per_seed.len(), 2);
        assert_eq!(pred.mean.len(), 16);
        for i in 0..16 {
            assert!(pred.mean[i] > 0.0 && pred.mean[i] < 1.0);
            let m = (pred.per_seed[0][i] + pred.per_seed[1][i]) / 2.0;
            assert_abs_diff_eq!(pred.mean[i], m, epsilon = 1e-15);
        }
        // zero adaptation epochs: output is the raw initialization's forward
        let raw = predict_with_network(&cks[..1], &ms, 0).unwrap();
        let direct = forward(
            &cks[0].params,
            &cks[0].mlp_config,
            &ms.test_objects,
            Mode::Eval,
            &mut rng::root(0),
        )
        .unwrap();
        assert_eq!(raw.mean, direct);
        // feature-count mismatch is rejected
        let shj = shj_concept(1).unwrap();
        assert!(matches!(
            predict_with_network(&cks[..1], &shj, 1),
            Err(Error::Incompatible(_))
        ));
    }

    #[test]
    fn run_experiment_reports_and_flags_missing_checkpoints() {
        let ck = untrained_checkpoint(4, 3);
        let spec = ExperimentSpec {
            experiment: Experiment::LsNls,
            sweep: Sweep::OutlierB {
                points: vec![1, 2],
                checkpoints: BTreeMap::from([(1, vec![ck.clone()]), (2, vec![ck.clone()])]),
            },
            include_rr: true,
            rr_max_literals: 3,
        };
        let dir = tempfile::tempdir().unwrap();
        let report = run_experiment(&spec, Some(dir.path())).unwrap();
        // 2 benchmarks x 2 points x 2 predictors x 6 objects
        assert_eq!(report.predictions.len(), 48);
        let err_rr = report.stat("nls", "error_rr");
        assert_eq!(err_rr.len(), 2);
        assert!(err_rr.values().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
        for f in ["predictions.csv", "summary.csv", "benchmarks.csv"] {
            assert!(dir.path().join(f).exists());
        }
        let missing = ExperimentSpec {
            sweep: Sweep::OutlierB {
                points: vec![3],
                checkpoints: BTreeMap::new(),
            },
            ..spec
        };
        assert!(matches!(run_experiment(&missing, None), Err(Error::Config(_))));
        assert!("medin-schaffer".parse::<Experiment>().is_ok());
        assert!("unknown".parse::<Experiment>().is_err());
    }
}
