//! Config-driven pipeline: ingest → graphs → index → train → recommend → evaluate,
//! with every artifact stamped by a hash of the inputs that produced it.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{self, Format, InteractionLog, SplitDataset};
use crate::decode::{self, BeamConfig, DecodeStats, IdTrie};
use crate::error::{Error, Result};
use crate::eval::{self, EfficiencyReport, EvalConfig, MetricsReport};
use crate::graph;
use crate::indexer::{self, IndexConfig, IndexDictionary, IndexPair};
use crate::model::{self, Accounting, ModelConfig, Seq2SeqModel, TrainConfig, TrainReport, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub workdir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data: PathBuf::from("interactions.tsv"),
            workdir: PathBuf::from("work"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSettings {
    pub beam: usize,
    pub topk: usize,
    pub filter_train: bool,
    pub length_penalty: f64,
}

impl Default for DecodeSettings {
    fn default() -> Self {
        DecodeSettings {
            beam: 20,
            topk: 10,
            filter_train: true,
            length_penalty: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub ks: Vec<usize>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { ks: vec![5, 10] }
    }
}

/// Everything a run depends on. The top-level `seed` overrides the seeds of
/// the index, model and training sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub template: String,
    pub paths: Paths,
    pub index: IndexConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeSettings,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            template: model::vocab::DEFAULT_TEMPLATE.into(),
            paths: Paths::default(),
            index: IndexConfig::default(),
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            decode: DecodeSettings::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load a TOML file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            for p in [&mut config.paths.data, &mut config.paths.workdir] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Copy with the top-level seed pushed into every stochastic component.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.index.seed = c.seed;
        c.model.seed = c.seed;
        c.train.seed = c.seed;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.index.validate()?;
        self.model.validate()?;
        if self.decode.topk == 0 || self.decode.beam == 0 {
            return Err(Error::Config("beam and topk must be positive".into()));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Config("evaluation cutoffs must be positive".into()));
        }
        if self.template.split_whitespace().next().is_none() {
            return Err(Error::Config("prompt template is empty".into()));
        }
        Ok(())
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            beam: self.decode.beam,
            ks: self.eval.ks.clone(),
            filter_train: self.decode.filter_train,
            length_penalty: self.decode.length_penalty,
        }
    }
}

fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())[..16].to_string()
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("config types serialize")
}

/// Hashes identifying the inputs of each stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageHashes {
    pub ingest: String,
    pub graphs: String,
    pub index: String,
    pub train: String,
    pub decode: String,
}

impl StageHashes {
    fn compute(config: &RunConfig, data: &[u8]) -> Self {
        let ingest = digest(&[b"ingest", data]);
        let graphs = digest(&[b"graphs", ingest.as_bytes(), &json(&config.index.co_interaction)]);
        let index = digest(&[b"index", ingest.as_bytes(), &json(&config.index)]);
        let train = digest(&[
            b"train",
            index.as_bytes(),
            &json(&config.model),
            &json(&config.train),
            config.template.as_bytes(),
        ]);
        let decode = digest(&[b"decode", train.as_bytes(), &json(&config.decode), &json(&config.eval)]);
        StageHashes {
            ingest,
            graphs,
            index,
            train,
            decode,
        }
    }
}

fn stamp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".stamp");
    path.with_file_name(name)
}

fn write(path: &Path, body: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Write `body` plus a `<name>.stamp` sidecar holding `stamp`.
pub fn write_stamped(path: &Path, body: &[u8], stamp: &str) -> Result<()> {
    write(path, body)?;
    write(&stamp_path(path), format!("{stamp}\n").as_bytes())
}

/// Read an artifact after checking that its sidecar matches `expected`.
pub fn read_stamped(path: &Path, expected: &str) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let sp = stamp_path(path);
    let found = std::fs::read_to_string(&sp)
        .map(|s| s.trim().to_string())
        .unwrap_or_default();
    if found != expected {
        return Err(Error::StaleArtifact {
            path: path.to_path_buf(),
            expected: expected.to_string(),
            found: if found.is_empty() { "<none>".into() } else { found },
        });
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Fixed workdir layout.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workspace { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn graphs(&self) -> PathBuf {
        self.root.join("graphs")
    }

    pub fn index(&self) -> PathBuf {
        self.root.join("index")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model")
    }

    pub fn recs(&self) -> PathBuf {
        self.root.join("recs")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn user_index(&self) -> PathBuf {
        self.index().join("users.idx")
    }

    pub fn item_index(&self) -> PathBuf {
        self.index().join("items.idx")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.model().join("checkpoint.json")
    }

    pub fn loss_curve(&self) -> PathBuf {
        self.model().join("loss.csv")
    }

    pub fn train_log(&self) -> PathBuf {
        self.model().join("train.json")
    }

    pub fn recommendations(&self) -> PathBuf {
        self.recs().join("recommendations.tsv")
    }

    pub fn metrics(&self) -> PathBuf {
        self.reports().join("metrics.txt")
    }

    pub fn efficiency(&self) -> PathBuf {
        self.reports().join("efficiency.txt")
    }

    pub fn run_row(&self) -> PathBuf {
        self.reports().join("run.csv")
    }

    pub fn stats(&self) -> PathBuf {
        self.reports().join("stats.json")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainLog {
    report: TrainReport,
    wall_time_secs: f64,
    param_count: u64,
}

/// Result of evaluating a trained run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub metrics: MetricsReport,
    pub efficiency: EfficiencyReport,
    pub stats: DecodeStats,
}

pub struct Pipeline {
    config: RunConfig,
    workspace: Workspace,
    hashes: StageHashes,
}

impl Pipeline {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let config = config.resolved();
        config.validate()?;
        let data = std::fs::read(&config.paths.data).map_err(|e| Error::io(&config.paths.data, e))?;
        let hashes = StageHashes::compute(&config, &data);
        let workspace = Workspace::new(&config.paths.workdir);
        Ok(Pipeline {
            config,
            workspace,
            hashes,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn hashes(&self) -> &StageHashes {
        &self.hashes
    }

    fn load_log(&self) -> Result<InteractionLog> {
        let path = &self.config.paths.data;
        InteractionLog::load(path, Format::from_path(path))
    }

    /// Parse the data, write the split and statistics.
    pub fn ingest(&self) -> Result<corpus::CorpusStats> {
        let log = self.load_log()?;
        let split = corpus::leave_one_out_split(&log);
        let stats = corpus::corpus_stats(&log);
        let dir = self.workspace.graphs();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        split.write_tsv(&log, &dir)?;
        for f in ["train.tsv", "valid.tsv", "test.tsv"] {
            write(&stamp_path(&dir.join(f)), format!("{}\n", self.hashes.ingest).as_bytes())?;
        }
        let body = serde_json::to_string_pretty(&stats).map_err(|e| Error::Serde(e.to_string()))?;
        write_stamped(&self.workspace.stats(), body.as_bytes(), &self.hashes.ingest)?;
        Ok(stats)
    }

    /// Log and split, after checking that ingest ran on the same data.
    pub fn load_split(&self) -> Result<(InteractionLog, SplitDataset)> {
        read_stamped(&self.workspace.graphs().join("train.tsv"), &self.hashes.ingest)?;
        let log = self.load_log()?;
        let split = corpus::leave_one_out_split(&log);
        Ok((log, split))
    }

    /// Dump the user, item and joint graphs.
    pub fn graphs(&self) -> Result<Vec<PathBuf>> {
        let (log, split) = self.load_split()?;
        let mode = self.config.index.co_interaction;
        let dir = self.workspace.graphs();
        let mut written = Vec::new();
        for (name, g) in [
            ("user_graph.tsv", graph::build_user_graph(&split, mode)),
            ("item_graph.tsv", graph::build_item_graph(&split)),
            ("user_item_graph.tsv", graph::build_user_item_graph(&split, mode)),
        ] {
            let path = dir.join(name);
            write_stamped(&path, g.to_tsv(&log).as_bytes(), &self.hashes.graphs)?;
            written.push(path);
        }
        Ok(written)
    }

    pub fn index(&self) -> Result<IndexPair> {
        let (log, split) = self.load_split()?;
        let pair = indexer::build_index(&log, &split, &self.config.index)?;
        write_stamped(&self.workspace.user_index(), pair.users.to_text()?.as_bytes(), &self.hashes.index)?;
        write_stamped(&self.workspace.item_index(), pair.items.to_text()?.as_bytes(), &self.hashes.index)?;
        Ok(pair)
    }

    pub fn load_index(&self, log: &InteractionLog) -> Result<IndexPair> {
        let load = |path: PathBuf, handles: &[String]| -> Result<IndexDictionary> {
            let d = IndexDictionary::parse(&read_stamped(&path, &self.hashes.index)?)?;
            if d.handles != handles {
                return Err(Error::Shape(format!(
                    "{} does not list the corpus entities in order",
                    path.display()
                )));
            }
            Ok(d)
        };
        Ok(IndexPair {
            users: load(self.workspace.user_index(), log.users())?,
            items: load(self.workspace.item_index(), log.items())?,
        })
    }

    fn vocabulary(&self) -> Vocabulary {
        Vocabulary::with_words(self.config.template.split_whitespace())
    }

    pub fn train(&self) -> Result<TrainReport> {
        let (log, split) = self.load_split()?;
        let index = self.load_index(&log)?;
        let mut model = Seq2SeqModel::new(self.config.model.clone(), self.vocabulary())?;
        let pairs = model::training_pairs(&split, &index.users, &index.items, &model, &self.config.template);
        let start = Instant::now();
        let report = model::train(&mut model, &pairs, &self.config.train)?;
        let wall = start.elapsed().as_secs_f64();
        let stamp = &self.hashes.train;
        write_stamped(&self.workspace.checkpoint(), model.to_json(Some(stamp))?.as_bytes(), stamp)?;
        write_stamped(&self.workspace.loss_curve(), report.loss_csv().as_bytes(), stamp)?;
        let log_entry = TrainLog {
            report: report.clone(),
            wall_time_secs: wall,
            param_count: model.num_params() as u64,
        };
        let body = serde_json::to_string_pretty(&log_entry).map_err(|e| Error::Serde(e.to_string()))?;
        write_stamped(&self.workspace.train_log(), body.as_bytes(), stamp)?;
        Ok(report)
    }

    pub fn load_model(&self) -> Result<Seq2SeqModel> {
        let text = read_stamped(&self.workspace.checkpoint(), &self.hashes.train)?;
        let (model, stamp) = Seq2SeqModel::from_json(&text)?;
        if stamp.as_deref() != Some(self.hashes.train.as_str()) {
            return Err(Error::StaleArtifact {
                path: self.workspace.checkpoint(),
                expected: self.hashes.train.clone(),
                found: stamp.unwrap_or_else(|| "<none>".into()),
            });
        }
        Ok(model)
    }

    /// Top-`topk` items for one user (by handle) or every user.
    pub fn recommend(&self, user: Option<&str>, topk: Option<usize>) -> Result<Vec<decode::UserRecommendations>> {
        let (log, split) = self.load_split()?;
        let index = self.load_index(&log)?;
        let model = self.load_model()?;
        let trie = IdTrie::build(&index.items)?;
        let users: Vec<usize> = match user {
            Some(h) => vec![index
                .users
                .position(h)
                .ok_or_else(|| Error::Config(format!("unknown user `{h}`")))?],
            None => (0..log.num_users()).collect(),
        };
        let topk = topk.unwrap_or(self.config.decode.topk);
        if topk == 0 {
            return Err(Error::Config("topk must be positive".into()));
        }
        let beam = BeamConfig {
            beam: self.config.decode.beam.max(topk),
            topk,
            length_penalty: self.config.decode.length_penalty,
        };
        let mut rows = Vec::with_capacity(users.len());
        for u in users {
            let prompt = model.prompt(&self.config.template, &index.users.ids[u]);
            let state = decode::SequenceScorer::prepare(&model, &prompt)?;
            let exclude: HashSet<usize> = if self.config.decode.filter_train {
                split.train[u].iter().copied().collect()
            } else {
                HashSet::new()
            };
            let recs = decode::recommend(&model, &state, &trie, &beam, &exclude, &mut DecodeStats::default())?;
            rows.push((
                log.users()[u].clone(),
                recs.into_iter().map(|r| (log.items()[r.item].clone(), r.logprob)).collect(),
            ));
        }
        write_stamped(
            &self.workspace.recommendations(),
            decode::recommendations_tsv(&rows).as_bytes(),
            &self.hashes.decode,
        )?;
        Ok(rows)
    }

    pub fn evaluate(&self) -> Result<RunSummary> {
        let (log, split) = self.load_split()?;
        let index = self.load_index(&log)?;
        let model = self.load_model()?;
        let train_log: TrainLog = serde_json::from_str(&read_stamped(&self.workspace.train_log(), &self.hashes.train)?)
            .map_err(|e| Error::Serde(e.to_string()))?;
        let trie = IdTrie::build(&index.items)?;
        let prompts: Vec<_> = index
            .users
            .ids
            .iter()
            .map(|id| model.prompt(&self.config.template, id))
            .collect();
        let start = Instant::now();
        let ev = eval::evaluate(&model, &prompts, &trie, &split, &self.config.eval_config())?;
        let eval_secs = start.elapsed().as_secs_f64();
        let efficiency = EfficiencyReport {
            epochs: train_log.report.losses.len(),
            param_count: model.num_params() as u64,
            param_count_t5: model::param_count(model.config(), model.vocab().accounting_size(), Accounting::T5Compatible),
            wall_time_secs: train_log.wall_time_secs + eval_secs,
        };
        let stamp = &self.hashes.decode;
        write_stamped(&self.workspace.metrics(), ev.report.to_text().as_bytes(), stamp)?;
        write_stamped(&self.workspace.efficiency(), efficiency.to_text().as_bytes(), stamp)?;
        let mut row = String::from(SWEEP_HEADER);
        row.push_str(&sweep_row(&self.config, Some((&ev.report, &efficiency))));
        write_stamped(&self.workspace.run_row(), row.as_bytes(), stamp)?;
        Ok(RunSummary {
            metrics: ev.report,
            efficiency,
            stats: ev.stats,
        })
    }

    /// ingest → index → train → evaluate.
    pub fn run_all(&self) -> Result<RunSummary> {
        self.ingest()?;
        self.index()?;
        self.train()?;
        self.evaluate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Feed-forward width.
    W,
    /// Clusters per level.
    N,
    /// Embedding size for graph indexing.
    E,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "w" => Ok(SweepAxis::W),
            "n" => Ok(SweepAxis::N),
            "e" => Ok(SweepAxis::E),
            _ => Err(Error::Config(format!("unknown sweep axis `{s}` (w, n, e)"))),
        }
    }
}

impl SweepAxis {
    fn name(self) -> &'static str {
        match self {
            SweepAxis::W => "w",
            SweepAxis::N => "n",
            SweepAxis::E => "e",
        }
    }

    fn apply(self, config: &mut RunConfig, value: usize) {
        match self {
            SweepAxis::W => config.model.w = value,
            SweepAxis::N => config.index.clusters = value,
            SweepAxis::E => config.index.embedding_size = value,
        }
    }
}

pub const SWEEP_HEADER: &str = "method,target,N,M,E,w,HR@5,NDCG@5,HR@10,NDCG@10,params,epochs,seconds\n";

/// One CSV row; metrics missing from the report (or a failed run) print `NA`.
pub fn sweep_row(config: &RunConfig, result: Option<(&MetricsReport, &EfficiencyReport)>) -> String {
    let ix = &config.index;
    let mut row = format!(
        "{},{},{},{},{},{}",
        ix.method.as_str(),
        ix.target.as_str(),
        ix.clusters,
        ix.max_cluster_size,
        ix.embedding_size,
        config.model.w
    );
    let metric = |m: Option<&f64>| m.map_or("NA".to_string(), |v| format!("{v:.6}"));
    match result {
        Some((m, e)) => {
            for k in [5, 10] {
                let _ = write!(row, ",{},{}", metric(m.hr.get(&k)), metric(m.ndcg.get(&k)));
            }
            let _ = writeln!(row, ",{},{},{:.3}", e.param_count, e.epochs, e.wall_time_secs);
        }
        None => row.push_str(",NA,NA,NA,NA,NA,NA,NA\n"),
    }
    row
}

/// Run the whole pipeline once per value in its own workdir subdirectory.
/// Failed runs become `NA` rows; the table is also written to `reports/`.
pub fn sweep(config: &RunConfig, axis: SweepAxis, values: &[usize]) -> Result<(String, Vec<Result<RunSummary>>)> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let base = Workspace::new(&config.paths.workdir);
    let mut table = String::from(SWEEP_HEADER);
    let mut outcomes = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = config.clone();
        axis.apply(&mut c, v);
        c.paths.workdir = base.root().join("sweep").join(format!("{}-{v}", axis.name()));
        let outcome = Pipeline::new(&c).and_then(|p| p.run_all());
        match &outcome {
            Ok(s) => table.push_str(&sweep_row(&c, Some((&s.metrics, &s.efficiency)))),
            Err(_) => table.push_str(&sweep_row(&c, None)),
        }
        outcomes.push(outcome);
    }
    write(
        &base.reports().join(format!("sweep_{}.csv", axis.name())),
        table.as_bytes(),
    )?;
    Ok((table, outcomes))
}
