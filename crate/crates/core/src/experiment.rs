//! Experiment driver: one JSON config, dotted-path overrides, and the
//! commands behind the CLI. Every command writes a `manifest.json` next to
//! its artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::{eval_windows, evaluate, EvalReport};
use crate::explain::{firing_report, min_max_normalize, to_array, ExplainReport, NormAxis};
use crate::fuzzy::ConsequentMode;
use crate::gradcheck::{run_gradcheck, GradCheckConfig, GradCheckReport};
use crate::network::{checkpoint, load_checkpoint, save_checkpoint, FeatureMode, FilterOrder, ModelConfig, ModelParams};
use crate::optim::{loso_run, trace_csv, train, FoldResult, PreparedData, Preprocess, TrainConfig};
use crate::signal::{generate_dataset, read_dataset, EpochedDataset, SynthesisConfig};

/// Structural model settings; sizes that follow from the data are filled in
/// by [`ModelSpec::resolve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub rules: usize,
    pub hidden: usize,
    pub dropout_rate: f32,
    pub consequent_mode: ConsequentMode,
    pub filter_order: FilterOrder,
    pub feature_mode: FeatureMode,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let d = ModelConfig::new(1, 1, 2);
        ModelSpec {
            rules: d.rules,
            hidden: d.hidden,
            dropout_rate: d.dropout_rate,
            consequent_mode: d.consequent_mode,
            filter_order: d.filter_order,
            feature_mode: d.feature_mode,
        }
    }
}

impl ModelSpec {
    pub fn resolve(&self, channels: usize, samples: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            channels,
            samples,
            classes,
            rules: self.rules,
            hidden: self.hidden,
            dropout_rate: self.dropout_rate,
            consequent_mode: self.consequent_mode,
            filter_order: self.filter_order,
            feature_mode: self.feature_mode,
        }
    }

    /// Model config for `data` cut into windows of `window_seconds`.
    pub fn for_data(&self, data: &PreparedData, window_seconds: f64) -> Result<ModelConfig> {
        let window = data.window_samples(window_seconds)?;
        let cfg = self.resolve(
            data.n_channels,
            data.feature_len(self.feature_mode, window),
            data.n_classes,
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    /// One model is trained and scored per window length.
    pub window_seconds: Vec<f64>,
    pub seed: u64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            window_seconds: vec![1.0],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSpec {
    pub channels: usize,
    pub samples: usize,
    pub classes: usize,
    pub rules: usize,
    pub hidden: usize,
    pub consequent_modes: Vec<ConsequentMode>,
    pub filter_order: FilterOrder,
    pub check: GradCheckConfig,
    pub seed: u64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        let m = crate::gradcheck::default_model_config();
        GradCheckSpec {
            channels: m.channels,
            samples: m.samples,
            classes: m.classes,
            rules: m.rules,
            hidden: m.hidden,
            consequent_modes: vec![ConsequentMode::ZeroOrder, ConsequentMode::FirstOrder],
            filter_order: m.filter_order,
            check: GradCheckConfig::default(),
            seed: 0,
        }
    }
}

impl GradCheckSpec {
    pub fn model_config(&self, mode: ConsequentMode) -> ModelConfig {
        let mut m = ModelConfig::new(self.channels, self.samples, self.classes);
        m.rules = self.rules;
        m.hidden = self.hidden;
        m.consequent_mode = mode;
        m.filter_order = self.filter_order;
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Path to an `SSVP` file. Exclusive with `synthesis`.
    pub dataset: Option<PathBuf>,
    pub synthesis: Option<SynthesisConfig>,
    pub preprocess: Preprocess,
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Subjects used by `train`; all subjects when absent.
    pub train_subjects: Option<Vec<usize>>,
    pub eval: EvalSpec,
    pub gradcheck: GradCheckSpec,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            synthesis: None,
            preprocess: Preprocess::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            train_subjects: None,
            eval: EvalSpec::default(),
            gradcheck: GradCheckSpec::default(),
            out_dir: PathBuf::from("out"),
        }
    }
}

/// Parses `a.b.c=value` into its path and a JSON value. Values that are not
/// valid JSON are taken as strings.
pub fn parse_override(spec: &str) -> Result<(String, Value)> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config("--set", format!("`{spec}` is not of the form path=value")))?;
    let path = path.trim();
    if path.is_empty() || path.split('.').any(str::is_empty) {
        return Err(Error::config("--set", format!("bad path in `{spec}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((path.to_string(), value))
}

/// Writes `value` at a dotted path, creating intermediate objects.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Default::default());
            } else {
                return Err(Error::config(
                    parts[..i].join("."),
                    "cannot set a field inside a non-object value",
                ));
            }
        }
        let map = node.as_object_mut().expect("object checked above");
        if i + 1 == parts.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert(Value::Null);
    }
    Ok(())
}

impl ExperimentConfig {
    /// File (if any) with overrides applied on top, then defaults for
    /// everything left unset.
    pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut root = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::config("config", format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for (k, v) in overrides {
            set_path(&mut root, k, v.clone())?;
        }
        let cfg: ExperimentConfig =
            serde_json::from_value(root).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.synthesis) {
            (Some(_), Some(_)) => {
                return Err(Error::config(
                    "dataset",
                    "give either a dataset path or a synthesis block, not both",
                ))
            }
            (None, None) => {}
            (None, Some(s)) => s.validate()?,
            (Some(_), None) => {}
        }
        self.train.validate()?;
        if self.eval.window_seconds.is_empty() {
            return Err(Error::config("eval.window_seconds", "at least one window length"));
        }
        for &w in &self.eval.window_seconds {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::config("eval.window_seconds", format!("invalid length {w}")));
            }
        }
        if let Some(s) = &self.synthesis {
            self.check_windows(s.duration)?;
        }
        if let Some((lo, hi)) = self.preprocess.bandpass {
            if !(lo > 0.0 && lo < hi) {
                return Err(Error::config("preprocess.bandpass", "need 0 < lo < hi"));
            }
        }
        Ok(())
    }

    /// Every evaluation window must fit inside a trial.
    pub fn check_windows(&self, trial_seconds: f64) -> Result<()> {
        for &w in &self.eval.window_seconds {
            if w > trial_seconds + 1e-9 {
                return Err(Error::config(
                    "eval.window_seconds",
                    format!("window of {w} s exceeds the {trial_seconds} s trials"),
                ));
            }
        }
        Ok(())
    }

    fn require_data_source(&self) -> Result<()> {
        if self.dataset.is_none() && self.synthesis.is_none() {
            return Err(Error::config("dataset", "a dataset path or a synthesis block is required"));
        }
        Ok(())
    }

    /// Reads the dataset file or synthesizes the recording in memory.
    pub fn load_dataset(&self) -> Result<EpochedDataset> {
        self.require_data_source()?;
        let ds = match (&self.dataset, &self.synthesis) {
            (Some(p), _) => read_dataset(p)?,
            (None, Some(s)) => generate_dataset(s)?,
            (None, None) => unreachable!("checked above"),
        };
        self.check_windows(ds.trial_seconds())?;
        Ok(ds)
    }

    pub fn prepare(&self) -> Result<PreparedData> {
        PreparedData::new(&self.load_dataset()?, self.preprocess)
    }

    /// SHA-256 of the resolved config's JSON encoding.
    /// Digest of the experiment definition. `out_dir` is excluded so a rerun
    /// elsewhere hashes the same.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("out_dir");
        }
        sha256_hex(&serde_json::to_vec(&v).expect("config serializes"))
    }

    fn seeds(&self) -> BTreeMap<String, u64> {
        let mut s = BTreeMap::new();
        s.insert("train".to_string(), self.train.seed);
        s.insert("eval".to_string(), self.eval.seed);
        s.insert("gradcheck".to_string(), self.gradcheck.seed);
        if let Some(syn) = &self.synthesis {
            s.insert("synthesis".to_string(), syn.seed);
        }
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: Vec<Artifact>,
}

/// Collects written files and their checksums for the manifest.
struct Outputs {
    root: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Outputs {
    fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Outputs {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    fn write(&mut self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(rel.as_ref());
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.artifacts.push(Artifact {
            path: rel.as_ref().to_string_lossy().replace('\\', "/"),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(path)
    }

    fn write_json<T: Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Contract(format!("serialization failed: {e}")))?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    fn finish(mut self, command: &str, cfg: &ExperimentConfig) -> Result<PathBuf> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256: cfg.hash(),
            config: cfg.clone(),
            seeds: cfg.seeds(),
            artifacts: std::mem::take(&mut self.artifacts),
        };
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Contract(format!("serialization failed: {e}")))?;
        text.push('\n');
        let path = self.root.join("manifest.json");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

/// On divergence, stores the last finite parameters as
/// `last_finite.ifzt` in `dir` before handing the error on.
fn preserve_last_finite(dir: &Path, e: Error) -> Error {
    if let Error::Diverged { last_finite, .. } = &e {
        let path = dir.join("last_finite.ifzt");
        if let Err(write_err) = fs::create_dir_all(dir)
            .map_err(|io| Error::io(dir, io))
            .and_then(|_| save_checkpoint(last_finite, &path))
        {
            return write_err;
        }
    }
    e
}

/// File-name tag of a window length, e.g. `1s` or `0.5s`.
pub fn window_tag(seconds: f64) -> String {
    format!("{seconds}s")
}

/// Writes the synthetic recording described by the config's synthesis block.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let syn = cfg
        .synthesis
        .as_ref()
        .ok_or_else(|| Error::config("synthesis", "gen needs a synthesis block"))?;
    let ds = generate_dataset(syn)?;
    let mut out = Outputs::new(&cfg.out_dir)?;
    let path = out.write("dataset.ssvp", &ds.to_bytes()?)?;
    out.finish("gen", cfg)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub subjects: Vec<usize>,
    pub window_seconds: f64,
    pub epochs_run: usize,
    pub steps: u64,
    pub final_loss: Option<f64>,
    pub param_count: usize,
}

/// Trains one model on `train_subjects` (default: all) at
/// `train.window_seconds`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    let data = cfg.prepare()?;
    let subjects = match &cfg.train_subjects {
        Some(s) => s.clone(),
        None => (0..data.n_subjects()).collect(),
    };
    let model_cfg = cfg.model.for_data(&data, cfg.train.window_seconds)?;
    let outcome = train(&data, &subjects, &model_cfg, &cfg.train)
        .map_err(|e| preserve_last_finite(&cfg.out_dir, e))?;
    let mut out = Outputs::new(&cfg.out_dir)?;
    out.write("checkpoint.ifzt", &checkpoint::to_bytes(&outcome.params)?)?;
    out.write("trace.csv", trace_csv(&outcome.trace).as_bytes())?;
    let summary = TrainSummary {
        subjects,
        window_seconds: cfg.train.window_seconds,
        epochs_run: outcome.epochs_run(),
        steps: outcome.steps,
        final_loss: outcome.trace.last().map(|t| t.mean_loss),
        param_count: crate::params::Parameters::param_count(&outcome.params),
    };
    out.write_json("train.json", &summary)?;
    out.finish("train", cfg)?;
    Ok(summary)
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub window_seconds: f64,
    pub t_selection: f64,
    pub folds: Vec<FoldResult>,
    pub accuracy_mean: f64,
    pub accuracy_sd: f64,
    /// Mean of the per-fold ITRs.
    pub itr_mean: f64,
    pub itr_sd: f64,
    /// ITR evaluated at the mean accuracy; differs from `itr_mean`.
    pub itr_at_mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoSummary {
    pub config_sha256: String,
    pub n_subjects: usize,
    pub n_classes: usize,
    pub windows: Vec<WindowSummary>,
}

/// Leave-one-subject-out over every configured window length.
pub fn cmd_loso(cfg: &ExperimentConfig, jobs: usize) -> Result<LosoSummary> {
    let data = cfg.prepare()?;
    let mut out = Outputs::new(&cfg.out_dir)?;
    let mut windows = Vec::new();
    for &w in &cfg.eval.window_seconds {
        let train_cfg = TrainConfig {
            window_seconds: w,
            ..cfg.train.clone()
        };
        let model_cfg = cfg.model.for_data(&data, w)?;
        let folds = loso_run(&data, &model_cfg, &train_cfg, cfg.eval.seed, jobs)
            .map_err(|e| preserve_last_finite(&cfg.out_dir, e))?;
        let tag = window_tag(w);
        for f in &folds {
            let dir = PathBuf::from(format!("fold_{}", f.result.held_out_subject));
            out.write(
                dir.join(format!("checkpoint_{tag}.ifzt")),
                &checkpoint::to_bytes(&f.training.params)?,
            )?;
            out.write(
                dir.join(format!("trace_{tag}.csv")),
                trace_csv(&f.training.trace).as_bytes(),
            )?;
            out.write_json(dir.join(format!("eval_{tag}.json")), &f.report)?;
        }
        let accs: Vec<f64> = folds.iter().map(|f| f.result.accuracy).collect();
        let itrs: Vec<f64> = folds.iter().map(|f| f.result.itr_bits_per_min).collect();
        let (accuracy_mean, accuracy_sd) = mean_sd(&accs);
        let (itr_mean, itr_sd) = mean_sd(&itrs);
        let t_selection = w + crate::eval::GAZE_SHIFT_SECONDS;
        windows.push(WindowSummary {
            window_seconds: w,
            t_selection,
            folds: folds.into_iter().map(|f| f.result).collect(),
            accuracy_mean,
            accuracy_sd,
            itr_mean,
            itr_sd,
            itr_at_mean_accuracy: crate::eval::itr(accuracy_mean, data.n_classes, t_selection)?,
        });
    }
    let summary = LosoSummary {
        config_sha256: cfg.hash(),
        n_subjects: data.n_subjects(),
        n_classes: data.n_classes,
        windows,
    };
    out.write_json("summary.json", &summary)?;
    out.finish("loso", cfg)?;
    Ok(summary)
}

/// Window length a checkpoint was trained for.
pub fn checkpoint_window_seconds(
    model: &ModelParams,
    data: &PreparedData,
    fallback: f64,
) -> f64 {
    match model.config.feature_mode {
        FeatureMode::TimeDomain => model.config.samples as f64 / data.fs,
        FeatureMode::Fft => fallback,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEval {
    pub subject: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub window_seconds: f64,
    pub seed: u64,
    pub subjects: Vec<SubjectEval>,
    pub accuracy_mean: f64,
    pub itr_mean: f64,
}

/// Scores a checkpoint on the fixed test windows of `subjects` (default: all).
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    subjects: Option<&[usize]>,
    window_seconds: Option<f64>,
) -> Result<EvalSummary> {
    let model = load_checkpoint(checkpoint)?;
    let data = cfg.prepare()?;
    let w = window_seconds
        .unwrap_or_else(|| checkpoint_window_seconds(&model, &data, cfg.train.window_seconds));
    let ids: Vec<usize> = match subjects {
        Some(s) => s.to_vec(),
        None => (0..data.n_subjects()).collect(),
    };
    let mut results = Vec::with_capacity(ids.len());
    for &s in &ids {
        let report = evaluate(&model, &data, s, w, cfg.eval.seed, cfg.train.test_windows_per_trial)?;
        results.push(SubjectEval { subject: s, report });
    }
    let accs: Vec<f64> = results.iter().map(|r| r.report.accuracy).collect();
    let itrs: Vec<f64> = results.iter().map(|r| r.report.itr).collect();
    let summary = EvalSummary {
        window_seconds: w,
        seed: cfg.eval.seed,
        subjects: results,
        accuracy_mean: mean_sd(&accs).0,
        itr_mean: mean_sd(&itrs).0,
    };
    let mut out = Outputs::new(&cfg.out_dir)?;
    out.write_json(format!("eval_{}.json", window_tag(w)), &summary)?;
    out.finish("eval", cfg)?;
    Ok(summary)
}

/// Which window of a trial to explain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowChoice {
    /// Index into the trial's fixed test windows under `eval.seed`.
    TestWindow(usize),
    /// Explicit start sample.
    Start(usize),
}

fn matrix_csv(rows: &[Vec<f64>], header: Option<&[String]>) -> String {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&h.join(","));
        out.push('\n');
    }
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn rule_header(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|r| format!("{prefix}{r}")).collect()
}

/// Full report for one window plus one CSV per matrix. `normalize` adds
/// display copies of the firing matrices scaled along the chosen axis.
pub fn cmd_explain(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    subject: usize,
    trial: usize,
    window: WindowChoice,
    normalize: Option<NormAxis>,
) -> Result<ExplainReport> {
    let model = load_checkpoint(checkpoint)?;
    let data = cfg.prepare()?;
    let w = checkpoint_window_seconds(&model, &data, cfg.train.window_seconds);
    let n = data.window_samples(w)?;
    let trials = data.subjects.get(subject).ok_or(Error::Index {
        name: "subject",
        index: subject,
        limit: data.n_subjects(),
    })?;
    if trial >= trials.len() {
        return Err(Error::Index {
            name: "trial",
            index: trial,
            limit: trials.len(),
        });
    }
    let start = match window {
        WindowChoice::Start(s) => s,
        WindowChoice::TestWindow(i) => {
            let per = cfg.train.test_windows_per_trial;
            if i >= per {
                return Err(Error::Index {
                    name: "window",
                    index: i,
                    limit: per,
                });
            }
            eval_windows(&data, subject, n, cfg.eval.seed, per)?[trial * per + i].start
        }
    };
    let x = data.features(subject, trial, start, n, model.config.feature_mode)?;
    let report = firing_report(&model, x.view(), data.fs, Some(data.label(subject, trial)))?;

    let mut out = Outputs::new(&cfg.out_dir)?;
    out.write_json("explain.json", &report)?;
    let r = model.config.rules;
    let header = rule_header("rule_", r);
    if let Some(m) = &report.spatial_firing {
        out.write("spatial_firing.csv", matrix_csv(m, Some(&header)).as_bytes())?;
    }
    if let Some(m) = &report.temporal_firing {
        out.write("temporal_firing.csv", matrix_csv(m, Some(&header)).as_bytes())?;
    }
    if let Some(m) = &report.recovered_spatial_centers {
        out.write("recovered_spatial_centers.csv", matrix_csv(m, None).as_bytes())?;
    }
    if let Some(m) = &report.recovered_temporal_centers {
        out.write("recovered_temporal_centers.csv", matrix_csv(m, None).as_bytes())?;
    }
    if let Some(s) = &report.rule_spectra {
        let freq_header: Vec<String> = s.frequencies.iter().map(|f| format!("{f}")).collect();
        out.write(
            "rule_spectra.csv",
            matrix_csv(&s.magnitudes, Some(&freq_header)).as_bytes(),
        )?;
    }
    if let Some(axis) = normalize {
        let suffix = match axis {
            NormAxis::Rules => "rules",
            NormAxis::Tokens => "tokens",
        };
        for (name, m) in [
            ("spatial_firing", &report.spatial_firing),
            ("temporal_firing", &report.temporal_firing),
        ] {
            if let Some(m) = m {
                let scaled = min_max_normalize(to_array(m).view(), axis);
                let rows: Vec<Vec<f64>> = scaled.outer_iter().map(|r| r.to_vec()).collect();
                out.write(
                    format!("{name}_minmax_{suffix}.csv"),
                    matrix_csv(&rows, Some(&header)).as_bytes(),
                )?;
            }
        }
    }
    out.finish("explain", cfg)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRun {
    pub consequent_mode: ConsequentMode,
    pub report: GradCheckReport,
}

/// Finite-difference suite for every configured consequent mode.
pub fn cmd_gradcheck(cfg: &ExperimentConfig) -> Result<Vec<GradCheckRun>> {
    let mut runs = Vec::new();
    for &mode in &cfg.gradcheck.consequent_modes {
        let report = run_gradcheck(
            &cfg.gradcheck.model_config(mode),
            &cfg.gradcheck.check,
            cfg.gradcheck.seed,
        )?;
        runs.push(GradCheckRun {
            consequent_mode: mode,
            report,
        });
    }
    let mut out = Outputs::new(&cfg.out_dir)?;
    out.write_json("gradcheck.json", &runs)?;
    out.finish("gradcheck", cfg)?;
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn overrides_take_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"train": {"max_epochs": 5, "warmup_epochs": 1}}"#).unwrap();
        let o = vec![parse_override("train.max_epochs=9").unwrap()];
        let cfg = ExperimentConfig::load(Some(&p), &o).unwrap();
        assert_eq!(cfg.train.max_epochs, 9);
        assert_eq!(cfg.train.warmup_epochs, 1);
        assert_eq!(cfg.train.batch_size, 256);
    }

    #[test]
    fn override_values() {
        assert_eq!(parse_override("a.b=3").unwrap(), ("a.b".into(), json!(3)));
        assert_eq!(parse_override("x=hello").unwrap().1, json!("hello"));
        assert_eq!(parse_override("x=[1.0,2]").unwrap().1, json!([1.0, 2]));
        assert!(parse_override("novalue").is_err());
        assert!(parse_override("a..b=1").is_err());
        let mut v = json!({"a": 1});
        assert!(set_path(&mut v, "a.b", json!(2)).is_err());
        set_path(&mut v, "c.d.e", json!(true)).unwrap();
        assert_eq!(v["c"]["d"]["e"], json!(true));
    }

    #[test]
    fn exactly_one_data_source() {
        let mut cfg = ExperimentConfig {
            dataset: Some("x.ssvp".into()),
            synthesis: Some(SynthesisConfig::four_target(2, 1, 0.0, 1)),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "dataset"));
        cfg.dataset = None;
        cfg.validate().unwrap();
        cfg.synthesis = None;
        assert!(cfg.load_dataset().is_err());
    }

    #[test]
    fn window_longer_than_trial() {
        let mut syn = SynthesisConfig::four_target(2, 1, 0.0, 1);
        syn.duration = 1.0;
        let cfg = ExperimentConfig {
            synthesis: Some(syn),
            eval: EvalSpec {
                window_seconds: vec![2.0],
                seed: 0,
            },
            ..Default::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(Error::Config { field, .. }) if field == "eval.window_seconds"
        ));
    }

    #[test]
    fn unknown_fields_rejected() {
        let o = vec![parse_override("train.max_epoch=3").unwrap()];
        assert!(matches!(ExperimentConfig::load(None, &o), Err(Error::Config { .. })));
    }

    #[test]
    fn infinite_snr_round_trips() {
        let mut syn = SynthesisConfig::four_target(1, 1, 0.0, 1);
        syn.snr_db = f64::INFINITY;
        let cfg = ExperimentConfig {
            synthesis: Some(syn),
            ..Default::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"inf\""));
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn summary_statistics() {
        let (m, s) = mean_sd(&[0.5, 0.75, 1.0]);
        assert!((m - 0.75).abs() < 1e-15);
        assert!((s - 0.25).abs() < 1e-15);
        assert_eq!(mean_sd(&[0.3]), (0.3, 0.0));
        assert_eq!(window_tag(1.0), "1s");
        assert_eq!(window_tag(0.5), "0.5s");
    }

    #[test]
    fn hash_tracks_config() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.train.seed = 0;
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
    }
}
