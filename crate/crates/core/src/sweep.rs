//! λ sweeps over a dataset: augment, index, query, evaluate, write CSV/JSON.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bitvec::BinaryDescriptor;
use crate::dataset::{generate_synthetic, load_dataset, Dataset, GroundTruth, ImageRecord, Role, SyntheticConfig};
use crate::encoders::{augment_with_block, encode_cues, CueSchema, CueValue, NamedCue};
use crate::error::{Error, Result};
use crate::eval::{
    average_precision, mean_average_precision, pr_curve, write_curve_csv, EvalReport, QueryAp,
    ScoredPair, TimingStats, SUMMARY_HEADER, summary_row,
};
use crate::index::{build_index, Backend, ImageScore, IndexConfig};

pub const DEFAULT_LAMBDAS: [u32; 7] = [0, 1, 2, 4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticConfig),
    Manifest { path: PathBuf },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticConfig::default())
    }
}

/// How the match threshold τ follows the augmented descriptor length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum TauRule {
    /// `value` times the augmented length. Selector cues are not counted by
    /// length; each one adds `selector_slack` per repetition instead.
    Fraction {
        #[serde(default = "default_fraction")]
        value: f64,
        #[serde(default = "default_slack")]
        selector_slack: f64,
    },
    Absolute { value: f64 },
}

fn default_fraction() -> f64 {
    0.1
}

fn default_slack() -> f64 {
    2.0
}

impl Default for TauRule {
    fn default() -> Self {
        TauRule::Fraction {
            value: default_fraction(),
            selector_slack: default_slack(),
        }
    }
}

impl TauRule {
    pub fn tau(&self, descriptor_bits: usize, schema: &CueSchema, lambda: u32) -> f64 {
        match *self {
            TauRule::Absolute { value } => value,
            TauRule::Fraction {
                value,
                selector_slack,
            } => {
                let l = f64::from(lambda);
                let selectors = schema.selector_count();
                if selectors == 0 {
                    value * schema.with_lambda(lambda).augmented_bits(descriptor_bits) as f64
                } else {
                    value * (descriptor_bits as f64 + l * schema.continuous_block_bits() as f64)
                        + selector_slack * l * selectors as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Protocol {
    /// Insert every reference image, then query every query image.
    Batch,
    /// Walk the image sequence taking every `stride`-th image; query it
    /// against everything inserted so far, then insert it.
    Incremental {
        #[serde(default = "default_stride")]
        stride: usize,
    },
}

fn default_stride() -> usize {
    10
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol::Batch
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub enabled: bool,
    pub runs: usize,
    pub warmup: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            runs: 10,
            warmup: 1,
        }
    }
}

fn default_backends() -> Vec<Backend> {
    Backend::ALL.to_vec()
}

fn default_pad() -> bool {
    true
}

/// A cue schema document extended with the sweep settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the dataset and index seeds when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_backends")]
    pub backends: Vec<Backend>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<u32>>,
    /// Single weight, accepted so that a plain schema document is a valid
    /// run config. Ignored when `lambdas` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<u32>,
    #[serde(default = "default_pad")]
    pub pad_block_to_byte: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub tau: TauRule,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub index: IndexConfig,
    #[serde(default)]
    pub timing: TimingConfig,
    pub cues: Vec<NamedCue>,
}

impl RunConfig {
    pub fn new(cues: Vec<NamedCue>) -> Self {
        Self {
            seed: None,
            backends: default_backends(),
            lambdas: None,
            lambda: None,
            pad_block_to_byte: true,
            output_dir: None,
            dataset: DatasetSource::default(),
            tau: TauRule::default(),
            protocol: Protocol::default(),
            index: IndexConfig::default(),
            timing: TimingConfig::default(),
            cues,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string().trim_end().to_string()]))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        if let DatasetSource::Manifest { path: manifest } = &mut config.dataset {
            if manifest.is_relative() {
                if let Some(base) = path.parent() {
                    *manifest = base.join(&*manifest);
                }
            }
        }
        Ok(config)
    }

    pub fn lambda_list(&self) -> Vec<u32> {
        match (&self.lambdas, self.lambda) {
            (Some(list), _) => list.clone(),
            (None, Some(l)) => vec![l],
            (None, None) => DEFAULT_LAMBDAS.to_vec(),
        }
    }

    pub fn schema(&self) -> Result<CueSchema> {
        CueSchema::new(self.cues.clone(), 0, self.pad_block_to_byte)
    }

    /// Pushes the master seed into every seeded component and pins the λ
    /// list, so that the result describes the run completely.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.lambdas = Some(self.lambda_list());
        c.lambda = None;
        if let Some(seed) = c.seed {
            if let DatasetSource::Synthetic(s) = &mut c.dataset {
                s.seed = seed;
            }
            c.index.lsh.seed = seed;
            c.index.bof.seed = seed;
        }
        c
    }

    /// Every problem found, each prefixed with its field path.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let lambdas = self.lambda_list();
        if lambdas.is_empty() {
            problems.push("lambdas: list must not be empty".to_string());
        }
        if lambdas.iter().collect::<HashSet<_>>().len() != lambdas.len() {
            problems.push("lambdas: values must be distinct".to_string());
        }
        if self.backends.is_empty() {
            problems.push("backends: list must not be empty".to_string());
        }
        if self.backends.iter().collect::<HashSet<_>>().len() != self.backends.len() {
            problems.push("backends: values must be distinct".to_string());
        }
        match self.tau {
            TauRule::Fraction {
                value,
                selector_slack,
            } => {
                if !(value > 0.0 && value <= 1.0) {
                    problems.push(format!("tau.value: fraction must lie in (0, 1], got {value}"));
                }
                if !(selector_slack.is_finite() && selector_slack >= 0.0) {
                    problems.push(format!(
                        "tau.selector_slack: must be finite and non-negative, got {selector_slack}"
                    ));
                }
            }
            TauRule::Absolute { value } => {
                if !(value.is_finite() && value >= 0.0) {
                    problems.push(format!("tau.value: must be finite and non-negative, got {value}"));
                }
            }
        }
        if let Protocol::Incremental { stride: 0 } = self.protocol {
            problems.push("protocol.stride: must be at least 1".to_string());
        }
        if self.timing.enabled && self.timing.runs == 0 {
            problems.push("timing.runs: must be at least 1 when timing is enabled".to_string());
        }
        if let Err(e) = self.schema() {
            problems.push(format!("cues: {e}"));
        }
        if let DatasetSource::Synthetic(s) = &self.resolved().dataset {
            if let Err(Error::Config(p)) = s.validate() {
                problems.extend(p.into_iter().map(|m| format!("dataset.{m}")));
            }
        }
        if let Err(Error::Config(p)) = self.index.bof.validate() {
            problems.extend(p.into_iter().map(|m| format!("index.{m}")));
        }
        if self.index.bst.max_leaf_size == Some(0) {
            problems.push("index.bst.max_leaf_size: must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.resolved().to_toml().as_bytes());
        hex::encode(&digest[..8])
    }
}

/// Dataset plus the cue block of every descriptor, encoded once.
pub struct PreparedDataset {
    pub dataset: Dataset,
    pub schema: CueSchema,
    blocks: Vec<Vec<BinaryDescriptor>>,
}

impl PreparedDataset {
    pub fn new(dataset: Dataset, schema: CueSchema) -> Result<Self> {
        let projection = dataset.cue_projection(&schema)?;
        let blocks = dataset
            .images
            .iter()
            .map(|im| {
                im.cue_values
                    .iter()
                    .map(|row| {
                        let values: Vec<CueValue> = projection.iter().map(|&i| row[i]).collect();
                        encode_cues(&values, &schema)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dataset,
            schema,
            blocks,
        })
    }

    pub fn augmented_bits(&self, lambda: u32) -> usize {
        self.schema.with_lambda(lambda).augmented_bits(self.dataset.descriptor_bits)
    }

    /// Images with every descriptor augmented by `lambda` cue blocks. The
    /// raw descriptors come back untouched for `lambda == 0`.
    pub fn augmented(&self, lambda: u32) -> Result<Vec<ImageRecord>> {
        self.dataset
            .images
            .iter()
            .zip(&self.blocks)
            .map(|(im, blocks)| {
                let descriptors = im
                    .descriptors
                    .iter()
                    .zip(blocks)
                    .map(|(d, b)| augment_with_block(d, b, lambda))
                    .collect::<Result<Vec<_>>>()?;
                Ok(ImageRecord {
                    descriptors,
                    ..im.clone()
                })
            })
            .collect()
    }
}

pub fn load_source(source: &DatasetSource) -> Result<Dataset> {
    match source {
        DatasetSource::Synthetic(config) => generate_synthetic(config),
        DatasetSource::Manifest { path } => load_dataset(path),
    }
}

/// Images visited by a protocol, in order.
fn sequence<'a>(images: &'a [ImageRecord], protocol: Protocol) -> Vec<&'a ImageRecord> {
    match protocol {
        Protocol::Batch => images
            .iter()
            .filter(|im| im.role == Role::Reference)
            .chain(images.iter().filter(|im| im.role == Role::Query))
            .collect(),
        Protocol::Incremental { stride } => images.iter().step_by(stride).collect(),
    }
}

struct QueryOutcome {
    query_id: String,
    scores: Vec<ImageScore>,
    relevant: BTreeSet<String>,
}

/// Runs the protocol once without timing and scores every query-role
/// image. A query's relevant set is restricted to images in the database
/// when it is issued.
pub fn evaluate_cell(
    backend: Backend,
    lambda: u32,
    images: &[ImageRecord],
    prepared: &PreparedDataset,
    config: &RunConfig,
) -> Result<EvalReport> {
    let bits = prepared.augmented_bits(lambda);
    let tau = config.tau.tau(prepared.dataset.descriptor_bits, &prepared.schema, lambda);
    let gt = &prepared.dataset.ground_truth;
    let mut index = build_index(backend, bits, &config.index)?;
    let mut inserted: HashSet<&str> = HashSet::new();
    let restrict = |q: &ImageRecord, inserted: &HashSet<&str>| -> BTreeSet<String> {
        gt.relevant(&q.image_id)
            .iter()
            .filter(|r| inserted.contains(r.as_str()))
            .cloned()
            .collect()
    };

    let mut outcomes = Vec::new();
    match config.protocol {
        Protocol::Batch => {
            let (refs, queries): (Vec<&ImageRecord>, Vec<&ImageRecord>) =
                images.iter().partition(|im| im.role == Role::Reference);
            for im in refs {
                index.insert(im)?;
                inserted.insert(&im.image_id);
            }
            index.commit()?;
            let index = &*index;
            let results: Vec<(Vec<ImageScore>, _)> = queries
                .par_iter()
                .map(|q| index.search(q, tau))
                .collect::<Result<_>>()?;
            for (q, (scores, _)) in queries.iter().zip(results) {
                outcomes.push(QueryOutcome {
                    query_id: q.image_id.clone(),
                    scores,
                    relevant: restrict(q, &inserted),
                });
            }
        }
        Protocol::Incremental { .. } => {
            for im in sequence(images, config.protocol) {
                if im.role == Role::Query {
                    let (scores, _) = index.search(im, tau)?;
                    outcomes.push(QueryOutcome {
                        query_id: im.image_id.clone(),
                        scores,
                        relevant: restrict(im, &inserted),
                    });
                }
                index.insert(im)?;
                index.commit()?;
                inserted.insert(&im.image_id);
            }
        }
    }

    let mut effective = GroundTruth::new();
    let mut query_aps = Vec::with_capacity(outcomes.len());
    let mut pairs = Vec::new();
    for o in &outcomes {
        effective.add_query(o.query_id.clone());
        for r in &o.relevant {
            effective.add_pair(o.query_id.clone(), r.clone());
        }
        let ap = average_precision(o.scores.iter().map(|s| &*s.image_id), &o.relevant);
        query_aps.push(QueryAp {
            query_id: o.query_id.clone(),
            relevant: o.relevant.len(),
            ap: (!o.relevant.is_empty()).then_some(ap),
        });
        pairs.extend(o.scores.iter().map(|s| ScoredPair {
            query_id: o.query_id.clone(),
            reference_id: s.image_id.to_string(),
            score: s.score,
        }));
    }
    let known: BTreeSet<&str> = prepared
        .dataset
        .images
        .iter()
        .map(|im| im.image_id.as_str())
        .collect();
    let curve = pr_curve(&pairs, &effective, &known)?;
    Ok(EvalReport {
        backend,
        lambda,
        tau,
        descriptor_bits: prepared.dataset.descriptor_bits,
        augmented_bits: bits,
        map: mean_average_precision(&query_aps),
        query_aps,
        curve,
    })
}

/// Per-image durations of one protocol pass with a fresh index. Every
/// visited image is queried if anything is stored and then inserted,
/// except that batch query images are only queried.
pub fn time_protocol(
    backend: Backend,
    images: &[ImageRecord],
    bits: usize,
    tau: f64,
    protocol: Protocol,
    config: &IndexConfig,
) -> Result<Vec<Duration>> {
    let mut index = build_index(backend, bits, config)?;
    let references = images.iter().filter(|im| im.role == Role::Reference).count();
    let mut inserted = 0;
    let mut samples = Vec::new();
    for im in sequence(images, protocol) {
        let start = Instant::now();
        match protocol {
            Protocol::Batch if im.role == Role::Query => {
                std::hint::black_box(index.search(im, tau)?);
            }
            Protocol::Batch => {
                index.insert(im)?;
                inserted += 1;
                if inserted == references {
                    index.commit()?;
                }
            }
            Protocol::Incremental { .. } => {
                if index.image_count() > 0 {
                    std::hint::black_box(index.search(im, tau)?);
                }
                index.insert(im)?;
                index.commit()?;
            }
        }
        samples.push(start.elapsed());
    }
    Ok(samples)
}

pub fn time_cell(
    backend: Backend,
    images: &[ImageRecord],
    bits: usize,
    tau: f64,
    config: &RunConfig,
) -> Result<TimingStats> {
    for _ in 0..config.timing.warmup {
        time_protocol(backend, images, bits, tau, config.protocol, &config.index)?;
    }
    let runs = (0..config.timing.runs)
        .map(|_| time_protocol(backend, images, bits, tau, config.protocol, &config.index))
        .collect::<Result<Vec<_>>>()?;
    Ok(TimingStats::from_runs(&runs))
}

#[derive(Debug, Clone)]
pub struct CellTiming {
    pub backend: Backend,
    pub lambda: u32,
    pub stats: TimingStats,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub config: RunConfig,
    pub reports: Vec<EvalReport>,
    pub timings: Vec<CellTiming>,
}

/// Evaluates every (backend, λ) cell, backends outermost.
pub fn run_sweep(config: &RunConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let config = config.resolved();
    let dataset = load_source(&config.dataset)?;
    let prepared = PreparedDataset::new(dataset, config.schema()?)?;
    let lambdas = config.lambda_list();
    let mut reports = Vec::new();
    let mut timings = Vec::new();
    for &lambda in &lambdas {
        let images = prepared.augmented(lambda)?;
        for &backend in &config.backends {
            reports.push(evaluate_cell(backend, lambda, &images, &prepared, &config)?);
            if config.timing.enabled {
                let tau = config.tau.tau(prepared.dataset.descriptor_bits, &prepared.schema, lambda);
                let stats = time_cell(backend, &images, prepared.augmented_bits(lambda), tau, &config)?;
                timings.push(CellTiming {
                    backend,
                    lambda,
                    stats,
                });
            }
        }
    }
    let order = |b: Backend| config.backends.iter().position(|&x| x == b);
    reports.sort_by_key(|r| (order(r.backend), lambdas.iter().position(|&l| l == r.lambda)));
    timings.sort_by_key(|t| (order(t.backend), lambdas.iter().position(|&l| l == t.lambda)));
    Ok(SweepOutcome {
        config,
        reports,
        timings,
    })
}

pub const TIMING_HEADER: [&str; 7] = [
    "backend",
    "lambda",
    "runs",
    "images_per_run",
    "mean_seconds",
    "min_run_mean_seconds",
    "max_run_mean_seconds",
];

fn seed_of(config: &RunConfig) -> String {
    match (config.seed, &config.dataset) {
        (Some(s), _) => s.to_string(),
        (None, DatasetSource::Synthetic(s)) => s.seed.to_string(),
        (None, DatasetSource::Manifest { .. }) => String::new(),
    }
}

pub fn sweep_csv(outcome: &SweepOutcome) -> Result<Vec<u8>> {
    let fingerprint = outcome.config.fingerprint();
    let seed = seed_of(&outcome.config);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER.iter().chain(&["seed", "config_sha256"]))?;
    for r in &outcome.reports {
        let mut row = summary_row(r);
        row.push(seed.clone());
        row.push(fingerprint.clone());
        w.write_record(row)?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}

pub fn timing_csv(timings: &[CellTiming]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TIMING_HEADER)?;
    for t in timings {
        w.write_record([
            t.backend.to_string(),
            t.lambda.to_string(),
            t.stats.runs.to_string(),
            t.stats.images_per_run.to_string(),
            t.stats.mean_seconds.to_string(),
            t.stats.min_run_mean_seconds.to_string(),
            t.stats.max_run_mean_seconds.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    format: &'static str,
    version: u32,
    config_sha256: String,
    config: &'a RunConfig,
    reports: &'a [EvalReport],
}

pub fn report_json(outcome: &SweepOutcome) -> Result<Vec<u8>> {
    let doc = ReportDocument {
        format: "cuebits-report",
        version: 1,
        config_sha256: outcome.config.fingerprint(),
        config: &outcome.config,
        reports: &outcome.reports,
    };
    let mut bytes = serde_json::to_vec_pretty(&doc)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn curve_file_name(backend: Backend, lambda: u32) -> String {
    format!("pr_{backend}_{lambda}.csv")
}

/// Writes `config.toml`, `sweep.csv`, `report.json`, one curve file per
/// cell and, if timing ran, `timing.csv`. Files are first written to a
/// staging directory and moved into `dir` only once all of them exist.
pub fn write_outputs(outcome: &SweepOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<(String, Vec<u8>)> = vec![
        ("config.toml".into(), outcome.config.to_toml().into_bytes()),
        ("sweep.csv".into(), sweep_csv(outcome)?),
        ("report.json".into(), report_json(outcome)?),
    ];
    for r in &outcome.reports {
        let mut bytes = Vec::new();
        write_curve_csv(&r.curve, &mut bytes)?;
        files.push((curve_file_name(r.backend, r.lambda), bytes));
    }
    if !outcome.timings.is_empty() {
        files.push(("timing.csv".into(), timing_csv(&outcome.timings)?));
    }

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let staging = dir.join(format!(".staging-{}", std::process::id()));
    let result = (|| {
        fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        for (name, bytes) in &files {
            let path = staging.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        let mut written = Vec::new();
        for (name, _) in &files {
            let target = dir.join(name);
            fs::rename(staging.join(name), &target).map_err(|e| Error::io(&target, e))?;
            written.push(target);
        }
        Ok(written)
    })();
    let _ = fs::remove_dir_all(&staging);
    result
}

/// Concatenates sweep summaries that share one header.
pub fn merge_summaries(inputs: &[PathBuf]) -> Result<Vec<u8>> {
    if inputs.is_empty() {
        return Err(Error::Config(vec!["report: no input files".into()]));
    }
    let mut header: Option<csv::StringRecord> = None;
    let mut w = csv::Writer::from_writer(Vec::new());
    for path in inputs {
        let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::format(path.display().to_string(), format!("{other:?}")),
        })?;
        let h = r.headers()?.clone();
        match &header {
            None => {
                w.write_record(&h)?;
                header = Some(h);
            }
            Some(first) if *first != h => {
                return Err(Error::format(
                    path.display().to_string(),
                    "header differs from the first input",
                ));
            }
            Some(_) => {}
        }
        for row in r.records() {
            w.write_record(&row?)?;
        }
    }
    w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))
}
