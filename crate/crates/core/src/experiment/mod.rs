//! End-to-end runs: train each method, generate properties from the test
//! split, verify them at every radius and aggregate the metrics.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bab::{bab_verify, BabConfig, Budget, RobustnessProperty, Verdict, VerdictStatus};
use crate::bounds::{stable_percent, AffineNet};
use crate::data::{gen_synthetic, load_mnist_idx, Dataset, Split, SyntheticKind};
use crate::network::{init_params, load_model, save_model, Network};
use crate::training::{accuracy, pgd_accuracy, train, write_history_csv, PgdSettings, Phase, TrainConfig};
use crate::{par, Error, Result};

mod report;

pub use report::{read_metrics_csv, report_render, write_metrics_csv, MetricsRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    /// IDX files; `*_per_class` keep the first samples of each class.
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        train_per_class: Option<usize>,
        #[serde(default)]
        test_per_class: Option<usize>,
    },
    Blobs { n_train: usize, n_test: usize, noise: f64, seed: u64 },
    Moons { n_train: usize, n_test: usize, noise: f64, seed: u64 },
}

impl DatasetSpec {
    /// MNIST IDX files in `dir` under their usual names.
    pub fn mnist_dir(dir: impl AsRef<Path>, train_per_class: Option<usize>, test_per_class: Option<usize>) -> Self {
        let dir = dir.as_ref();
        DatasetSpec::Mnist {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
            train_per_class,
            test_per_class,
        }
    }

    /// Loads `(train, test)`.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Mnist { train_images, train_labels, test_images, test_labels, train_per_class, test_per_class } => Ok((
                load_mnist_idx(train_images, train_labels, *train_per_class, Split::Train)?,
                load_mnist_idx(test_images, test_labels, *test_per_class, Split::Test)?,
            )),
            DatasetSpec::Blobs { n_train, n_test, noise, seed } => synthetic(SyntheticKind::Blobs, *n_train, *n_test, *noise, *seed),
            DatasetSpec::Moons { n_train, n_test, noise, seed } => synthetic(SyntheticKind::Moons, *n_train, *n_test, *noise, *seed),
        }
    }
}

fn synthetic(kind: SyntheticKind, n_train: usize, n_test: usize, noise: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    // The test split draws from an offset seed so the two splits differ.
    Ok((
        gen_synthetic(kind, n_train, noise, seed, Split::Train)?,
        gen_synthetic(kind, n_test, noise, seed.wrapping_add(1), Split::Test)?,
    ))
}

/// One trained (or loaded) network to evaluate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    /// Overrides the base training phases.
    #[serde(default)]
    pub phases: Option<Vec<Phase>>,
    /// Overrides the base NBC weight.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Evaluate this model file instead of training.
    #[serde(default)]
    pub model: Option<PathBuf>,
}

impl MethodSpec {
    pub fn trained(name: impl Into<String>, phases: Vec<Phase>, beta: Option<f64>) -> Self {
        Self { name: name.into(), phases: Some(phases), beta, model: None }
    }

    fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        if let Some(p) = &self.phases {
            cfg.phases = p.clone();
        }
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        cfg
    }
}

fn default_hidden() -> Vec<usize> {
    vec![64, 32]
}

fn default_k() -> usize {
    5
}

fn default_jobs() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Hidden widths of the fully connected ReLU network.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Empty means a single method named after the base config's phases.
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
    pub radii: Vec<f64>,
    #[serde(default)]
    pub budget: Budget,
    /// Properties per class.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub pgd: PgdSettings,
    #[serde(default)]
    pub bab: BabConfig,
    /// Verification workers.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() {
            return Err(Error::Config("radii must not be empty".into()));
        }
        if let Some(r) = self.radii.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
            return Err(Error::Config(format!("radius {r} must be finite and >= 0")));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        let mut names: Vec<&str> = self.methods.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("method names must be unique".into()));
        }
        self.budget.validate()?;
        for m in self.methods() {
            if m.model.is_none() {
                m.train_config(&self.train).validate()?;
            }
        }
        Ok(())
    }

    pub fn methods(&self) -> Vec<MethodSpec> {
        if !self.methods.is_empty() {
            return self.methods.clone();
        }
        let name = self.train.phases.iter().map(|p| p.loss.name()).collect::<Vec<_>>().join(">");
        vec![MethodSpec { name, phases: None, beta: None, model: None }]
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Verdict of one property at one radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyRecord {
    pub method: String,
    pub radius: f64,
    /// Index of the property in the shared list.
    pub property: usize,
    /// Index of `x0` in the test split.
    pub test_index: usize,
    pub label: usize,
    pub verdict: Verdict,
    /// Seconds around the verifier call only.
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub n_props: usize,
    pub records: Vec<PropertyRecord>,
}

/// `k` properties per class from the first test samples of each class,
/// including misclassified ones.
pub fn make_properties(test: &Dataset, k: usize, epsilon: f64, domain: [f64; 2]) -> Result<Vec<(usize, RobustnessProperty)>> {
    test.first_per_class(k)
        .into_iter()
        .map(|i| Ok((i, RobustnessProperty::new(test.input(i).to_vec(), epsilon, test.labels()[i], domain, test.classes())?)))
        .collect()
}

/// Verifies every property, `jobs` at a time, each search serial inside.
pub fn verify_all(net: &AffineNet, props: &[RobustnessProperty], budget: Budget, cfg: BabConfig, jobs: usize) -> Result<Vec<(Verdict, f64)>> {
    let run = || {
        par::map_slice(props, |p| {
            let t = Instant::now();
            let v = bab_verify(net, p, budget, cfg)?;
            Ok((v, round_ms(t.elapsed().as_secs_f64())))
        })
    };
    par::with_threads(jobs.max(1), run).into_iter().collect()
}

fn round_ms(s: f64) -> f64 {
    (s * 1000.0).round() / 1000.0
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Median of non-empty `v` (mean of the middle pair for even lengths).
pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { (s[m - 1] + s[m]) / 2.0 })
}

/// Aggregates one method/radius cell from its verdicts.
pub fn aggregate(method: &str, radius: f64, test_acc: f64, stable_pct: f64, pgd100_acc: f64, outcomes: &[(Verdict, f64)]) -> MetricsRow {
    let n = outcomes.len();
    let pct = |s: VerdictStatus| 100.0 * outcomes.iter().filter(|(v, _)| v.status == s).count() as f64 / n.max(1) as f64;
    let branches: Vec<f64> = outcomes.iter().map(|(v, _)| v.stats.branches_explored as f64).collect();
    MetricsRow {
        method: method.to_string(),
        radius,
        test_acc,
        unsat_pct: pct(VerdictStatus::Unsat),
        stable_pct,
        time_mean_s: mean(outcomes.iter().map(|(_, t)| *t)).unwrap_or(f64::NAN),
        time_ut_mean_s: mean(outcomes.iter().filter(|(v, _)| v.status != VerdictStatus::Sat).map(|(_, t)| *t)),
        pgd100_acc,
        branches_mean: mean(branches.iter().copied()).unwrap_or(f64::NAN),
        n_props: n,
        sat_pct: pct(VerdictStatus::Sat),
        unknown_pct: pct(VerdictStatus::Unknown),
        branches_median: median(&branches).unwrap_or(f64::NAN),
        error: None,
    }
}

fn failed_row(method: &str, radius: f64, n_props: usize, e: &Error) -> MetricsRow {
    MetricsRow {
        method: method.to_string(),
        radius,
        test_acc: f64::NAN,
        unsat_pct: f64::NAN,
        stable_pct: f64::NAN,
        time_mean_s: f64::NAN,
        time_ut_mean_s: None,
        pgd100_acc: f64::NAN,
        branches_mean: f64::NAN,
        n_props,
        sat_pct: f64::NAN,
        unknown_pct: f64::NAN,
        branches_median: f64::NAN,
        error: Some(e.to_string()),
    }
}

fn obtain_network(cfg: &ExperimentConfig, m: &MethodSpec, train_set: &Dataset, test: &Dataset) -> Result<Network> {
    let out = &cfg.out_dir;
    if let Some(path) = &m.model {
        return load_model(path);
    }
    let tcfg = m.train_config(&cfg.train);
    let net = init_params(&Network::mlp(train_set.features(), &cfg.hidden, train_set.classes())?, tcfg.seed);
    let (net, history) = train(&net, train_set, Some(test), &tcfg)?;
    let models = out.join("models");
    std::fs::create_dir_all(&models).map_err(|e| Error::io(&models, e))?;
    save_model(&net, models.join(format!("{}.json", m.name)))?;
    write_history_csv(&history, out.join(format!("history_{}.csv", m.name)))?;
    Ok(net)
}

fn evaluate_method(
    cfg: &ExperimentConfig,
    m: &MethodSpec,
    net: &Network,
    test: &Dataset,
    props: &[(usize, RobustnessProperty)],
    records: &mut Vec<PropertyRecord>,
) -> Vec<MetricsRow> {
    let affine = match AffineNet::from_network(net) {
        Ok(a) => a,
        Err(e) => return cfg.radii.iter().map(|&r| failed_row(&m.name, r, props.len(), &e)).collect(),
    };
    let test_acc = match accuracy(net, test) {
        Ok(a) => a,
        Err(e) => return cfg.radii.iter().map(|&r| failed_row(&m.name, r, props.len(), &e)).collect(),
    };
    let mut rows = Vec::new();
    for &radius in &cfg.radii {
        let mut cell = || -> Result<MetricsRow> {
            let at: Vec<RobustnessProperty> = props.iter().map(|(_, p)| p.with_epsilon(radius)).collect();
            let stable = stable_percent(&affine, &at)?;
            let pgd = pgd_accuracy(net, test, radius, cfg.pgd, cfg.train.domain, cfg.train.seed)?;
            let outcomes = verify_all(&affine, &at, cfg.budget, cfg.bab, cfg.jobs)?;
            let dir = cfg.out_dir.join("verdicts");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (i, ((test_index, p), (v, secs))) in props.iter().zip(&outcomes).enumerate() {
                v.save(dir.join(format!("{}_eps{radius}_p{i:03}.json", m.name)))?;
                records.push(PropertyRecord {
                    method: m.name.clone(),
                    radius,
                    property: i,
                    test_index: *test_index,
                    label: p.label,
                    verdict: v.clone(),
                    seconds: *secs,
                });
            }
            Ok(aggregate(&m.name, radius, test_acc, stable, pgd, &outcomes))
        };
        rows.push(cell().unwrap_or_else(|e| {
            log::error!("{} at radius {radius}: {e}", m.name);
            failed_row(&m.name, radius, props.len(), &e)
        }));
    }
    rows
}

/// Runs every method and radius, writing `metrics.csv`, `metrics.json`,
/// `report.txt`, per-property verdicts and the trained models.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (train_set, test) = cfg.dataset.load()?;
    let props = make_properties(&test, cfg.k, 0.0, cfg.train.domain)?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    for m in cfg.methods() {
        log::info!("method {}", m.name);
        match obtain_network(cfg, &m, &train_set, &test) {
            Ok(net) => rows.extend(evaluate_method(cfg, &m, &net, &test, &props, &mut records)),
            Err(e) => {
                log::error!("method {}: {e}", m.name);
                rows.extend(cfg.radii.iter().map(|&r| failed_row(&m.name, r, props.len(), &e)));
            }
        }
    }
    let report = MetricsReport { rows, n_props: props.len(), records };
    write_metrics_csv(&report.rows, out.join("metrics.csv"))?;
    let json = out.join("metrics.json");
    std::fs::write(&json, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&json, e))?;
    let txt = out.join("report.txt");
    std::fs::write(&txt, report_render(&report.rows)).map_err(|e| Error::io(&txt, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests;
