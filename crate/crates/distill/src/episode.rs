//! Few-shot episode generation and the line-oriented corpus format.
//!
//! An episode is one meta-learning task: a concept sampled from the grammar
//! (with its own production probabilities), a noisy support set of up to 20
//! labeled objects drawn with replacement, and a query set covering the full
//! object space with noiseless labels. Corpora are written one JSON record
//! per line behind a single header line carrying the format version.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{evaluate, sample_formula, sample_prob_table, Formula, Grammar, Object, ProbTable};
use crate::rng::{self, Rng};

/// Corpus format version string.
pub const FORMAT_VERSION: &str = "episodes-v1";

/// Maximum support-set size.
pub const MAX_SUPPORT: usize = 20;

/// The outlier parameter `b`: labels are flipped with probability
/// `e^-b / (1 + e^-b)`. The behavioral experiments use `b` in 1..=8; larger
/// values (e.g. block products `b * N`) are permitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OutlierParam(pub u32);

impl OutlierParam {
    pub fn value(self) -> u32 {
        self.0
    }
}

/// Label-flip probability `e^-b / (1 + e^-b)`.
pub fn flip_probability(b: OutlierParam) -> f64 {
    let e = (-(b.0 as f64)).exp();
    e / (1.0 + e)
}

/// One labeled object. `label` is 1 for category A, 0 for category B;
/// `flipped` records whether the label disagrees with the concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub object: Object,
    pub label: u8,
    pub flipped: bool,
}

/// One meta-learning task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub concept: Formula,
    pub prob_table: ProbTable,
    pub b: OutlierParam,
    pub support: Vec<LabeledExample>,
    pub query: Vec<LabeledExample>,
}

impl Episode {
    pub fn n_features(&self) -> usize {
        self.query
            .first()
            .map(|ex| ex.object.len())
            .unwrap_or(0)
    }

    /// Check every structural invariant of an episode.
    pub fn validate(&self, grammar: &Grammar) -> Result<()> {
        let n = grammar.n_features();
        if self.support.is_empty() || self.support.len() > MAX_SUPPORT {
            return Err(Error::InvalidArgument(format!(
                "support length {} outside [1, {MAX_SUPPORT}]",
                self.support.len()
            )));
        }
        if self.query.len() != 1 << n {
            return Err(Error::InvalidArgument(format!(
                "query length {} != 2^{n}",
                self.query.len()
            )));
        }
        let mut seen = vec![false; 1 << n];
        for ex in &self.query {
            if ex.object.len() != n {
                return Err(Error::InvalidArgument("query object width mismatch".into()));
            }
            let ix = ex.object.index();
            if seen[ix] {
                return Err(Error::InvalidArgument(format!(
                    "duplicate query object {}",
                    ex.object.bitstring()
                )));
            }
            seen[ix] = true;
            let truth = evaluate(&self.concept, &ex.object)?;
            if ex.flipped || ex.label != truth as u8 {
                return Err(Error::InvalidArgument(format!(
                    "query label for {} is not the noiseless concept evaluation",
                    ex.object.bitstring()
                )));
            }
        }
        for ex in &self.support {
            let truth = evaluate(&self.concept, &ex.object)? as u8;
            if ex.flipped != (ex.label != truth) {
                return Err(Error::InvalidArgument(format!(
                    "support flip flag inconsistent for {}",
                    ex.object.bitstring()
                )));
            }
        }
        self.prob_table.validate(grammar)?;
        Ok(())
    }
}

/// Sample one episode: probability table, then concept, then a support set
/// drawn uniformly with replacement and flipped with probability
/// `flip_probability(b)` per example; the query set is the full object space
/// with ground-truth labels.
pub fn sample_episode(
    grammar: &Grammar,
    dirichlet_alpha: f64,
    b: OutlierParam,
    support_size: usize,
    max_depth: usize,
    rng: &mut Rng,
) -> Result<Episode> {
    if support_size == 0 || support_size > MAX_SUPPORT {
        return Err(Error::InvalidArgument(format!(
            "support_size {support_size} outside [1, {MAX_SUPPORT}]"
        )));
    }
    // Roughly 1e-4 of Dirichlet draws are supercritical enough to exhaust
    // the formula sampler's rejection budget; redraw the table in that case
    // so corpus-scale generation does not abort on degenerate tables.
    let mut redraws = 0;
    let (prob_table, concept) = loop {
        let prob_table = sample_prob_table(grammar, dirichlet_alpha, rng)?;
        match sample_formula(grammar, &prob_table, rng, max_depth) {
            Ok(f) => break (prob_table, f),
            Err(e @ Error::SamplingDiverged(_)) => {
                redraws += 1;
                if redraws >= 100 {
                    return Err(e);
                }
            }
            Err(e) => return Err(e),
        }
    };
    let objects = Object::all(grammar.n_features());
    let eps = flip_probability(b);
    let mut support = Vec::with_capacity(support_size);
    for _ in 0..support_size {
        let object = objects[rng.gen_range(0..objects.len())].clone();
        let truth = evaluate(&concept, &object)? as u8;
        let flipped = rng.gen::<f64>() < eps;
        support.push(LabeledExample {
            object,
            label: if flipped { 1 - truth } else { truth },
            flipped,
        });
    }
    let query = objects
        .iter()
        .map(|object| {
            Ok(LabeledExample {
                object: object.clone(),
                label: evaluate(&concept, object)? as u8,
                flipped: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Episode { concept, prob_table, b, support, query })
}

/// How support-set sizes are chosen per episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportSize {
    /// Uniform over `1..=max`.
    Uniform { max: usize },
    Fixed { size: usize },
}

impl Default for SupportSize {
    fn default() -> Self {
        SupportSize::Uniform { max: MAX_SUPPORT }
    }
}

/// Configuration for corpus generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_features: usize,
    pub dirichlet_alpha: f64,
    pub b: OutlierParam,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub support_size: SupportSize,
    pub max_depth: usize,
    pub seed: u64,
}

impl CorpusConfig {
    pub fn new(n_features: usize, b: OutlierParam, seed: u64) -> Self {
        CorpusConfig {
            n_features,
            dirichlet_alpha: 1.0,
            b,
            n_train: 10_000,
            n_val: 100,
            n_test: 100,
            support_size: SupportSize::default(),
            max_depth: 25,
            seed,
        }
    }
}

/// Corpus manifest, written beside the episode files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: String,
    pub config: CorpusConfig,
    pub files: Vec<String>,
}

impl Manifest {
    /// Hex SHA-256 of the manifest's canonical JSON, recorded in checkpoints.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("manifest serializes");
        let mut h = Sha256::new();
        h.update(&bytes);
        hex(&h.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Sample `count` episodes using split random streams keyed by
/// `stream_offset + i`, so corpus splits never share randomness.
pub fn sample_episodes(
    grammar: &Grammar,
    config: &CorpusConfig,
    count: usize,
    stream_offset: u64,
) -> Result<Vec<Episode>> {
    (0..count)
        .map(|i| {
            let mut r = rng::stream(config.seed, stream_offset + i as u64);
            let size = match config.support_size {
                SupportSize::Uniform { max } => r.gen_range(1..=max),
                SupportSize::Fixed { size } => size,
            };
            sample_episode(grammar, config.dirichlet_alpha, config.b, size, config.max_depth, &mut r)
        })
        .collect()
}

/// Stream offsets for the three splits. Val/test streams are pinned well past
/// any plausible train size so changing `n_train` never reuses them.
const VAL_OFFSET: u64 = 1 << 40;
const TEST_OFFSET: u64 = 1 << 41;

/// Generate and write the train/val/test corpus files plus `manifest.json`
/// under `out_dir`. Returns the manifest.
pub fn generate_corpus(grammar: &Grammar, config: &CorpusConfig, out_dir: &Path, overwrite: bool) -> Result<Manifest> {
    if config.n_train == 0 || config.n_val == 0 || config.n_test == 0 {
        return Err(Error::InvalidArgument("episode counts must be positive".into()));
    }
    if grammar.n_features() != config.n_features {
        return Err(Error::InvalidArgument("grammar/config feature count mismatch".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let splits = [
        ("train.jsonl", config.n_train, 0u64),
        ("val.jsonl", config.n_val, VAL_OFFSET),
        ("test.jsonl", config.n_test, TEST_OFFSET),
    ];
    let manifest_path = out_dir.join("manifest.json");
    for (name, _, _) in &splits {
        let path = out_dir.join(name);
        if path.exists() && !overwrite {
            return Err(Error::Config(format!(
                "output {} exists; pass overwrite to replace it",
                path.display()
            )));
        }
    }
    if manifest_path.exists() && !overwrite {
        return Err(Error::Config(format!(
            "output {} exists; pass overwrite to replace it",
            manifest_path.display()
        )));
    }
    let mut files = Vec::new();
    for (name, count, offset) in splits {
        let episodes = sample_episodes(grammar, config, count, offset)?;
        write_corpus_file(&out_dir.join(name), &episodes)?;
        files.push(name.to_string());
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION.to_string(),
        config: config.clone(),
        files,
    };
    let mut w = BufWriter::new(File::create(&manifest_path)?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    Ok(manifest)
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
}

/// On-disk record: the concept is stored in its text form.
#[derive(Serialize, Deserialize)]
struct Record {
    concept: String,
    prob_table: Vec<Vec<f64>>,
    b: u32,
    support: Vec<LabeledExample>,
    query: Vec<LabeledExample>,
}

impl Record {
    fn from_episode(ep: &Episode) -> Record {
        Record {
            concept: ep.concept.to_string(),
            prob_table: ep.prob_table.probs.clone(),
            b: ep.b.0,
            support: ep.support.clone(),
            query: ep.query.clone(),
        }
    }

    fn into_episode(self, line: usize) -> Result<Episode> {
        let concept: Formula = self.concept.parse().map_err(|e| Error::Parse {
            line,
            msg: format!("{e}"),
        })?;
        Ok(Episode {
            concept,
            prob_table: ProbTable { probs: self.prob_table },
            b: OutlierParam(self.b),
            support: self.support,
            query: self.query,
        })
    }
}

/// Write episodes to one corpus file (header line + one record per line).
pub fn write_corpus_file(path: &Path, episodes: &[Episode]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &Header { format: FORMAT_VERSION.to_string() })?;
    w.write_all(b"\n")?;
    for ep in episodes {
        serde_json::to_writer(&mut w, &Record::from_episode(ep))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Streaming corpus reader. Yields episodes in file order, validating every
/// record against the grammar implied by its own query length.
pub struct CorpusReader {
    lines: std::iter::Enumerate<std::io::Lines<BufReader<File>>>,
    path: PathBuf,
    grammar: Grammar,
}

impl CorpusReader {
    pub fn open(path: &Path) -> Result<CorpusReader> {
        let mut lines = BufReader::new(File::open(path)?).lines().enumerate();
        let (_, header_line) = lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            msg: format!("{}: empty corpus file", path.display()),
        })?;
        let header: Header = serde_json::from_str(&header_line?).map_err(|e| Error::Parse {
            line: 1,
            msg: format!("bad header: {e}"),
        })?;
        if header.format != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: header.format,
                expected: FORMAT_VERSION.to_string(),
            });
        }
        // The feature count is fixed per file; it is resolved lazily from the
        // first record's query length.
        Ok(CorpusReader {
            lines,
            path: path.to_path_buf(),
            grammar: crate::grammar::default_grammar(1)?,
        })
    }

    fn parse_line(&mut self, idx: usize, text: &str) -> Result<Episode> {
        let line = idx + 1;
        let record: Record = serde_json::from_str(text).map_err(|e| Error::Parse {
            line,
            msg: format!("{}: {e}", self.path.display()),
        })?;
        let ep = record.into_episode(line)?;
        let n = ep.n_features();
        if n == 0 || ep.query.len() != 1 << n {
            return Err(Error::Parse {
                line,
                msg: format!("query length {} is not a full object space", ep.query.len()),
            });
        }
        if self.grammar.n_features() != n {
            self.grammar = crate::grammar::default_grammar(n)?;
        }
        ep.validate(&self.grammar).map_err(|e| Error::Parse {
            line,
            msg: format!("{e}"),
        })?;
        Ok(ep)
    }
}

impl Iterator for CorpusReader {
    type Item = Result<Episode>;

    fn next(&mut self) -> Option<Self::Item> {
        let (idx, text) = self.lines.next()?;
        let text = match text {
            Ok(t) => t,
            Err(e) => return Some(Err(e.into())),
        };
        if text.trim().is_empty() {
            return self.next();
        }
        Some(self.parse_line(idx, &text))
    }
}

/// Read a whole corpus file into memory.
pub fn read_corpus(path: &Path) -> Result<Vec<Episode>> {
    CorpusReader::open(path)?.collect()
}
