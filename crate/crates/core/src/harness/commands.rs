use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write as _};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::checks::{self, Criterion, GradCheck, LosslessCheck};
use super::config::ExperimentConfig;
use crate::chunker::{build_hierarchy, checkpoint, BuildStatus, Level, LevelStats};
use crate::diagnostics::{gradient_norm_by_lag, GradientReport};
use crate::distiller::{self, distill, make_targets, AugmentedRnn};
use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::provenance::Provenance;
use crate::rnn::checkpoint as rnn_ck;
use crate::rnn::{Activation, RnnParams};
use crate::supervised::{
    baseline_param_count, baseline_rnn_classifier, parity_hidden, train_classifier, train_head_on_codes,
    ClassifierHead, EpochMetrics, LabeledCorpus,
};
use crate::taskgen::{generate, load_corpus, save_corpus, TaskSpec};

pub const LOCK_FILE: &str = ".hc.lock";
const RECHECK_DIR: &str = ".recheck";
const LOSSLESS_SEQUENCES: usize = 100;
const GRADCHECK_NETS: usize = 20;

/// File names under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed-{seed}"))
    }

    pub fn corpus(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("corpus.txt")
    }

    pub fn hierarchy(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("hierarchy")
    }

    pub fn pretrain_log(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("pretrain_log.csv")
    }

    pub fn compression(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("compression.csv")
    }

    pub fn pretrain_json(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("pretrain.json")
    }

    pub fn head(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("classifier").join("head.json")
    }

    pub fn top(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("classifier").join("top.json")
    }

    pub fn classify_csv(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("classify.csv")
    }

    pub fn classify_json(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("classify.json")
    }

    pub fn distilled(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("distilled.json")
    }

    pub fn distill_csv(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("distill.csv")
    }

    pub fn distill_json(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("distill.json")
    }

    pub fn diagnose_dir(&self) -> PathBuf {
        self.root.join("diagnose")
    }

    pub fn repro_csv(&self) -> PathBuf {
        self.root.join("repro.csv")
    }

    pub fn repro_json(&self) -> PathBuf {
        self.root.join("repro.json")
    }
}

/// Held while a command writes into an output directory. A second command
/// on the same directory fails with [`Error::Locked`] instead of
/// interleaving its files.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<OutputLock> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(OutputLock { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn provenance(cfg: &ExperimentConfig, seed: u64) -> Provenance {
    Provenance::new(cfg.hash(), seed)
}

fn task_spec(cfg: &ExperimentConfig, seed: u64) -> TaskSpec {
    TaskSpec {
        seed: Rng::new(seed).derive("task").seed(),
        ..cfg.task.clone()
    }
}

fn start(cfg: &ExperimentConfig) -> Result<(Layout, OutputLock)> {
    cfg.validate()?;
    let lock = OutputLock::acquire(&cfg.out_dir)?;
    Ok((Layout::new(&cfg.out_dir), lock))
}

fn run_gen(cfg: &ExperimentConfig, layout: &Layout, seed: u64) -> Result<PathBuf> {
    let corpus = generate(&task_spec(cfg, seed))?;
    let path = layout.corpus(seed);
    fs::create_dir_all(layout.seed_dir(seed))?;
    save_corpus(&corpus, &path, Some(&provenance(cfg, seed)))?;
    Ok(path)
}

/// Writes `seed-<S>/corpus.txt` for every configured seed.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let (layout, _lock) = start(cfg)?;
    cfg.seeds.iter().map(|&s| run_gen(cfg, &layout, s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub provenance: Provenance,
    pub status: BuildStatus,
    /// One entry per level input plus the top level's own reduction.
    pub stats: Vec<LevelStats>,
    /// Mean level-1 input length over mean raw length.
    pub level1_ratio: f64,
    pub epochs_run: Vec<usize>,
    pub stopped_early: Vec<bool>,
}

fn run_pretrain(cfg: &ExperimentConfig, layout: &Layout, seed: u64) -> Result<PretrainSummary> {
    let corpus = load_corpus(&layout.corpus(seed))?;
    let prov = provenance(cfg, seed);
    let out = build_hierarchy(&corpus.sequences, &cfg.hierarchy, &Rng::new(seed).derive("hierarchy"))?;
    let stats = out.hierarchy.compression_stats(&corpus.sequences)?;
    checkpoint::save(&out.hierarchy, &stats, Some(&prov), &layout.hierarchy(seed))?;

    let mut log_csv = format!("{}\nlevel,epoch,loss,event_rate\n", prov.comment_line());
    for (k, log) in out.logs.iter().enumerate() {
        for e in 0..log.epochs_run() {
            writeln!(log_csv, "{k},{e},{:e},{:e}", log.loss[e], log.event_rate[e]).unwrap();
        }
    }
    fs::write(layout.pretrain_log(seed), log_csv)?;

    let mut comp_csv = format!("{}\nlevel,mean_length,ratio,event_rate\n", prov.comment_line());
    for s in &stats {
        writeln!(comp_csv, "{},{:e},{:e},{:e}", s.level, s.mean_length, s.ratio, s.event_rate).unwrap();
    }
    fs::write(layout.compression(seed), comp_csv)?;

    let summary = PretrainSummary {
        provenance: prov,
        status: out.hierarchy.status,
        level1_ratio: stats[1].mean_length / stats[0].mean_length,
        stats,
        epochs_run: out.logs.iter().map(|l| l.epochs_run()).collect(),
        stopped_early: out.logs.iter().map(|l| l.stopped_early).collect(),
    };
    write_json(&layout.pretrain_json(seed), &summary)?;
    Ok(summary)
}

/// Builds and checkpoints a hierarchy per seed from its corpus.
pub fn cmd_pretrain(cfg: &ExperimentConfig) -> Result<Vec<PretrainSummary>> {
    let (layout, _lock) = start(cfg)?;
    cfg.seeds.iter().map(|&s| run_pretrain(cfg, &layout, s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parity {
    /// All level predictors plus the classifier head.
    pub hierarchy_params: usize,
    pub baseline_params: usize,
    pub baseline_hidden: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifySummary {
    pub provenance: Provenance,
    pub parity: Parity,
    pub split_hash: String,
    pub hierarchy_accuracy: f64,
    pub baseline_accuracy: f64,
    pub baseline_diverged_at: Option<usize>,
    pub hierarchy_curve: Vec<EpochMetrics>,
    pub baseline_curve: Vec<EpochMetrics>,
}

#[derive(Serialize, Deserialize)]
struct HeadFile {
    provenance: Provenance,
    head: ClassifierHead,
}

fn curve_rows(out: &mut String, run_id: &str, condition: &str, seed: u64, curve: &[EpochMetrics]) {
    for m in curve {
        writeln!(out, "{run_id},{condition},{seed},{},train,{:e},{}", m.epoch, m.train_loss, m.train_accuracy).unwrap();
        writeln!(out, "{run_id},{condition},{seed},{},test,{:e},{}", m.epoch, m.test_loss, m.test_accuracy).unwrap();
    }
}

fn run_classify(cfg: &ExperimentConfig, layout: &Layout, seed: u64) -> Result<ClassifySummary> {
    let corpus = load_corpus(&layout.corpus(seed))?;
    let (hierarchy, _) = checkpoint::load(&layout.hierarchy(seed))?;
    let prov = provenance(cfg, seed);
    let root = Rng::new(seed);
    let head = ClassifierHead::new(corpus.n_classes, hierarchy.top().hidden_size(), &mut root.derive("head"));
    let run = train_classifier(&hierarchy, head, &corpus, &cfg.classifier, &root.derive("classify"))?;

    let budget = hierarchy.levels.iter().map(|l| l.predictor.num_params()).sum::<usize>() + run.head.num_params();
    let (alphabet, classes) = (corpus.alphabet_size(), corpus.n_classes);
    let hidden = parity_hidden(budget, alphabet, classes);
    let parity = Parity {
        hierarchy_params: budget,
        baseline_params: baseline_param_count(hidden, alphabet, classes),
        baseline_hidden: hidden,
    };
    if parity.baseline_params.abs_diff(budget) * 10 > budget {
        return Err(Error::Config(format!(
            "no baseline within 10% of {budget} parameters (closest has {})",
            parity.baseline_params
        )));
    }
    let baseline = baseline_rnn_classifier(&corpus, hidden, &cfg.classifier, &root.derive("classify"))?;

    write_json(
        &layout.head(seed),
        &HeadFile {
            provenance: prov.clone(),
            head: run.head.clone(),
        },
    )?;
    rnn_ck::save_with_provenance(&run.top.predictor, Some(&prov), &layout.top(seed))?;

    let run_id = format!("{}-{seed}", &prov.config_hash[..12]);
    let mut csv = format!("{}\nrun_id,condition,seed,epoch,split,loss,accuracy\n", prov.comment_line());
    curve_rows(&mut csv, &run_id, "hierarchy", seed, &run.curve);
    curve_rows(&mut csv, &run_id, "baseline", seed, &baseline.curve);
    fs::write(layout.classify_csv(seed), csv)?;

    let summary = ClassifySummary {
        provenance: prov,
        parity,
        split_hash: run.split.partition_hash(),
        hierarchy_accuracy: run.final_test_accuracy(),
        baseline_accuracy: baseline.final_test_accuracy(),
        baseline_diverged_at: baseline.diverged_at,
        hierarchy_curve: run.curve,
        baseline_curve: baseline.curve,
    };
    write_json(&layout.classify_json(seed), &summary)?;
    Ok(summary)
}

/// Trains the top-code classifier and the parameter-matched plain RNN on
/// each seed's corpus and hierarchy.
pub fn cmd_classify(cfg: &ExperimentConfig) -> Result<Vec<ClassifySummary>> {
    let (layout, _lock) = start(cfg)?;
    cfg.seeds.iter().map(|&s| run_classify(cfg, &layout, s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillSummary {
    pub provenance: Provenance,
    pub lower_level: usize,
    pub teacher_level: usize,
    pub targets: usize,
    pub imitation_mse_before: f64,
    pub imitation_mse: f64,
    /// Test accuracy of a head trained on the distilled codes.
    pub distilled_accuracy: f64,
    /// Test accuracy of the top-code classifier from `hc classify`.
    pub hierarchy_accuracy: f64,
    pub accuracy_drop: f64,
    pub distilled_curve: Vec<EpochMetrics>,
}

fn run_distill(cfg: &ExperimentConfig, layout: &Layout, seed: u64) -> Result<DistillSummary> {
    let corpus: LabeledCorpus = load_corpus(&layout.corpus(seed))?;
    let (mut hierarchy, _) = checkpoint::load(&layout.hierarchy(seed))?;
    let top = rnn_ck::load(&layout.top(seed))?;
    let classified: ClassifySummary = read_json(&layout.classify_json(seed))?;
    let depth = hierarchy.depth();
    if depth < 2 {
        return Err(Error::Config("distillation needs a hierarchy of at least two levels".into()));
    }
    // the fine-tuned top predictor is the teacher
    let old = hierarchy.top();
    hierarchy.levels[depth - 1] = Level::from_parts(old.index, top, old.rule, old.codec)?;
    let lower = depth - 2;
    let (inputs, targets) = make_targets(&hierarchy, lower, &corpus.sequences)?;

    let root = Rng::new(seed);
    let prov = provenance(cfg, seed);
    let aug = AugmentedRnn::from_level(&hierarchy.levels[lower], targets.hidden_size, &root.derive("distill"));
    let mse_before = aug.imitation_mse(&inputs, &targets)?;
    let (trained, log) = distill(&aug, &inputs, &targets, &cfg.distill, &mut root.derive("distill-train"))?;
    let mse = trained.imitation_mse(&inputs, &targets)?;
    distiller::save(&trained, cfg.distill.lambda, &targets, Some(&prov), &layout.distilled(seed))?;

    let codes: Vec<Vec<f64>> = inputs.par_iter().map(|x| trained.distilled_code(x)).collect::<Result<_>>()?;
    let (_, curve, _) =
        train_head_on_codes(&codes, &corpus.labels, corpus.n_classes, &cfg.classifier, &root.derive("classify"))?;
    let distilled_accuracy = curve.last().map_or(0.0, |m| m.test_accuracy);

    let mut csv = format!("{}\nepoch,prediction_loss,imitation_mse,event_rate\n", prov.comment_line());
    for e in 0..log.epochs_run() {
        writeln!(csv, "{e},{:e},{:e},{:e}", log.loss[e], log.aux_loss[e], log.event_rate[e]).unwrap();
    }
    fs::write(layout.distill_csv(seed), csv)?;

    let summary = DistillSummary {
        provenance: prov,
        lower_level: lower,
        teacher_level: targets.teacher_level,
        targets: targets.count(),
        imitation_mse_before: mse_before,
        imitation_mse: mse,
        distilled_accuracy,
        hierarchy_accuracy: classified.hierarchy_accuracy,
        accuracy_drop: classified.hierarchy_accuracy - distilled_accuracy,
        distilled_curve: curve,
    };
    write_json(&layout.distill_json(seed), &summary)?;
    Ok(summary)
}

/// Collapses the top level into the one below it, per seed. Needs the
/// outputs of `pretrain` and `classify`.
pub fn cmd_distill(cfg: &ExperimentConfig) -> Result<Vec<DistillSummary>> {
    let (layout, _lock) = start(cfg)?;
    cfg.seeds.iter().map(|&s| run_distill(cfg, &layout, s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseRow {
    pub scale: f64,
    pub net: usize,
    /// `None` when the table was cut short by overflow before the second lag.
    pub decay_ratio: Option<f64>,
    pub exploded: bool,
    pub first_explosion_lag: Option<usize>,
    pub first_non_finite_lag: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseSummary {
    pub provenance: Provenance,
    pub ratio_lags: (usize, usize),
    pub rows: Vec<DiagnoseRow>,
}

impl DiagnoseSummary {
    fn at(&self, scale: f64) -> impl Iterator<Item = &DiagnoseRow> {
        self.rows.iter().filter(move |r| r.scale == scale)
    }

    /// Mean decay ratio over the nets at `scale`; NaN if any is missing.
    pub fn mean_ratio(&self, scale: f64) -> f64 {
        let v: Vec<f64> = self.at(scale).map(|r| r.decay_ratio.unwrap_or(f64::NAN)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Latest first-explosion lag over the nets at `scale`; `None` if some
    /// net never exploded.
    pub fn latest_explosion(&self, scale: f64) -> Option<usize> {
        self.at(scale).map(|r| r.first_explosion_lag).try_fold(0, |acc, l| Some(acc.max(l?)))
    }
}

#[derive(Serialize)]
struct NetReport<'a> {
    provenance: &'a Provenance,
    scale: f64,
    net: usize,
    report: &'a GradientReport,
}

fn run_diagnose(cfg: &ExperimentConfig, layout: &Layout) -> Result<DiagnoseSummary> {
    let seed = cfg.seeds[0];
    let root = Rng::new(seed);
    let prov = provenance(cfg, seed);
    let d = &cfg.diagnostics;
    let a = cfg.task.alphabet_size;
    let mut rows = Vec::new();
    for &scale in &d.recurrent_scales {
        let dir = layout.diagnose_dir().join(format!("scale-{scale}"));
        fs::create_dir_all(&dir)?;
        for i in 0..d.n_nets {
            let mut params = RnnParams::init_uniform(
                a,
                d.hidden,
                a,
                Activation::Tanh,
                d.init_range,
                &mut root.derive(&format!("diagnose-net-{i}")),
            );
            params.w_rec.scale(scale);
            let report = gradient_norm_by_lag(&params, &d.gradient, &root.derive(&format!("diagnose-probe-{i}")))?;
            fs::write(dir.join(format!("net-{i}.csv")), report.to_csv(&prov))?;
            write_json(
                &dir.join(format!("net-{i}.json")),
                &NetReport {
                    provenance: &prov,
                    scale,
                    net: i,
                    report: &report,
                },
            )?;
            rows.push(DiagnoseRow {
                scale,
                net: i,
                decay_ratio: report.decay_ratio(d.ratio_lags.0, d.ratio_lags.1),
                exploded: report.exploded,
                first_explosion_lag: report.first_explosion_lag,
                first_non_finite_lag: report.first_non_finite_lag,
            });
        }
    }
    let opt = |v: Option<usize>| v.map_or(String::new(), |x| x.to_string());
    let mut csv = format!(
        "{}\nscale,net,decay_ratio,exploded,first_explosion_lag,first_non_finite_lag\n",
        prov.comment_line()
    );
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            r.scale,
            r.net,
            r.decay_ratio.map_or(String::new(), |x| format!("{x:e}")),
            r.exploded as u8,
            opt(r.first_explosion_lag),
            opt(r.first_non_finite_lag)
        )
        .unwrap();
    }
    fs::write(layout.diagnose_dir().join("summary.csv"), csv)?;
    let summary = DiagnoseSummary {
        provenance: prov,
        ratio_lags: d.ratio_lags,
        rows,
    };
    write_json(&layout.diagnose_dir().join("summary.json"), &summary)?;
    Ok(summary)
}

/// Gradient-norm-by-lag tables for random plain nets at every configured
/// recurrent weight scale. Seeded from the first configured seed.
pub fn cmd_diagnose(cfg: &ExperimentConfig) -> Result<DiagnoseSummary> {
    let (layout, _lock) = start(cfg)?;
    run_diagnose(cfg, &layout)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub pretrain: PretrainSummary,
    pub classify: ClassifySummary,
    pub distill: DistillSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproReport {
    pub provenance: Provenance,
    pub criteria: Vec<Criterion>,
    pub gradients: GradCheck,
    pub lossless: LosslessCheck,
    pub diagnose: DiagnoseSummary,
    pub seeds: Vec<SeedRun>,
    /// Files that differed when the first seed was run a second time.
    pub recheck_mismatches: Vec<String>,
}

impl ReproReport {
    pub fn all_pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    pub fn table(&self) -> String {
        self.criteria.iter().map(|c| c.line() + "\n").collect()
    }
}

fn run_seed(cfg: &ExperimentConfig, layout: &Layout, seed: u64) -> Result<SeedRun> {
    run_gen(cfg, layout, seed)?;
    Ok(SeedRun {
        seed,
        pretrain: run_pretrain(cfg, layout, seed)?,
        classify: run_classify(cfg, layout, seed)?,
        distill: run_distill(cfg, layout, seed)?,
    })
}

fn collect_files(dir: &Path, rel: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let rel = rel.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            collect_files(&entry.path(), &rel, out)?;
        } else {
            out.insert(rel, fs::read(entry.path())?);
        }
    }
    Ok(())
}

/// Relative paths whose bytes differ between two directory trees, including
/// files present in only one of them.
pub fn tree_differences(a: &Path, b: &Path) -> Result<Vec<String>> {
    let (mut fa, mut fb) = (BTreeMap::new(), BTreeMap::new());
    collect_files(a, Path::new(""), &mut fa)?;
    collect_files(b, Path::new(""), &mut fb)?;
    let mut keys: Vec<&PathBuf> = fa.keys().chain(fb.keys()).collect();
    keys.sort();
    keys.dedup();
    Ok(keys
        .into_iter()
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect())
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

/// The whole pipeline for every seed, the standalone checks, and the
/// acceptance table, written to `repro.csv` and `repro.json`. The first
/// seed is run a second time into a scratch directory to check that it
/// reproduces byte for byte.
pub fn cmd_repro(cfg: &ExperimentConfig) -> Result<ReproReport> {
    let (layout, _lock) = start(cfg)?;
    let first = cfg.seeds[0];
    let root = Rng::new(first);
    let prov = provenance(cfg, first);

    let seeds: Vec<SeedRun> = cfg.seeds.par_iter().map(|&s| run_seed(cfg, &layout, s)).collect::<Result<_>>()?;
    let gradients = checks::check_gradients(GRADCHECK_NETS, &root.derive("gradcheck"))?;
    let (hierarchy, _) = checkpoint::load(&layout.hierarchy(first))?;
    let corpus = load_corpus(&layout.corpus(first))?;
    let n = corpus.len().min(LOSSLESS_SEQUENCES);
    let lossless = checks::check_losslessness(&hierarchy, &corpus.sequences[..n], &root.derive("lossless"))?;
    let diagnose = run_diagnose(cfg, &layout)?;

    let recheck = Layout::new(layout.root.join(RECHECK_DIR));
    if recheck.root.exists() {
        fs::remove_dir_all(&recheck.root)?;
    }
    run_seed(cfg, &recheck, first)?;
    let recheck_mismatches = tree_differences(&layout.seed_dir(first), &recheck.seed_dir(first))?;
    fs::remove_dir_all(&recheck.root)?;

    let ratios: Vec<f64> = seeds.iter().map(|s| s.pretrain.level1_ratio).collect();
    let hier: Vec<f64> = seeds.iter().map(|s| s.classify.hierarchy_accuracy).collect();
    let base: Vec<f64> = seeds.iter().map(|s| s.classify.baseline_accuracy).collect();
    let mses: Vec<f64> = seeds.iter().map(|s| s.distill.imitation_mse).collect();
    let distilled: Vec<f64> = seeds.iter().map(|s| s.distill.distilled_accuracy).collect();
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let (max_ratio, med_hier, med_base) = (max(&ratios), checks::median(&hier), checks::median(&base));
    let (max_mse, med_distilled) = (max(&mses), checks::median(&distilled));
    let drop = med_hier - med_distilled;

    let scales = &cfg.diagnostics.recurrent_scales;
    let small = scales.iter().copied().fold(f64::INFINITY, f64::min);
    let large = scales.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let vanish = diagnose.mean_ratio(small);
    let explode = diagnose.latest_explosion(large);
    let (from, to) = cfg.diagnostics.ratio_lags;

    let criteria = vec![
        Criterion::new(
            1,
            "gradient check",
            format!(
                "max relative error {:.2e} over {} nets (<= {} params; <= {} steps)",
                gradients.max_rel_error, gradients.nets, gradients.max_params, gradients.max_len
            ),
            "< 1e-4",
            gradients.max_rel_error < checks::GRAD_REL_TOL && gradients.max_params <= 100 && gradients.max_len <= 20,
        ),
        Criterion::new(
            2,
            "losslessness",
            format!("{} failures in {} cases over {} sequences", lossless.failures, lossless.cases, lossless.sequences),
            "0 failures",
            lossless.failures == 0,
        ),
        Criterion::new(
            3,
            "compression",
            format!("level-1 length ratio per seed {} (max {max_ratio:.3})", fmt_list(&ratios)),
            "max <= 0.2",
            max_ratio <= checks::COMPRESSION_MAX_RATIO,
        ),
        Criterion::new(
            4,
            "credit assignment",
            format!(
                "median test accuracy hierarchy {med_hier:.3} ({}) baseline {med_base:.3} ({})",
                fmt_list(&hier),
                fmt_list(&base)
            ),
            "hierarchy >= 0.90 and baseline <= 0.60",
            med_hier >= checks::HIERARCHY_MIN_ACCURACY && med_base <= checks::BASELINE_MAX_ACCURACY,
        ),
        Criterion::new(
            5,
            "vanishing gradients",
            format!(
                "mean norm ratio lag {to}/lag {from} at scale {small}: {vanish:.2e}; latest explosion at scale {large}: {}",
                explode.map_or("never".to_string(), |l| format!("lag {l}"))
            ),
            "ratio < 1e-6 and every net explodes before lag 100",
            vanish < checks::VANISHING_MAX_RATIO && explode.is_some_and(|l| l < checks::EXPLOSION_BEFORE_LAG),
        ),
        Criterion::new(
            6,
            "distillation",
            format!(
                "imitation mse per seed {} (max {max_mse:.3} median {:.3}); median distilled accuracy {med_distilled:.3} (drop {drop:.3})",
                fmt_list(&mses),
                checks::median(&mses)
            ),
            "mse < 0.1 on every seed and drop <= 0.05",
            max_mse < checks::IMITATION_MAX_MSE && drop <= checks::DISTILL_MAX_DROP,
        ),
        Criterion::new(
            7,
            "determinism",
            if recheck_mismatches.is_empty() {
                format!("seed {first} rerun identical")
            } else {
                format!("seed {first} rerun differs in {}", recheck_mismatches.join(" "))
            },
            "byte-identical outputs",
            recheck_mismatches.is_empty(),
        ),
    ];

    let mut csv = format!("{}\nid,name,value,threshold,pass\n", prov.comment_line());
    for c in &criteria {
        writeln!(csv, "{},{},\"{}\",\"{}\",{}", c.id, c.name, c.value, c.threshold, c.pass as u8).unwrap();
    }
    fs::write(layout.repro_csv(), csv)?;
    let report = ReproReport {
        provenance: prov,
        criteria,
        gradients,
        lossless,
        diagnose,
        seeds,
        recheck_mismatches,
    };
    write_json(&layout.repro_json(), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::SurpriseRule;
    use crate::taskgen::TaskKind;
    use crate::train::TrainConfig;

    fn tiny(out: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.task.kind = TaskKind::LongLag;
        c.task.length = 120;
        c.task.n_sequences = 40;
        c.hierarchy.depth = 2;
        c.hierarchy.hidden_sizes = vec![8, 6];
        c.hierarchy.surprise = SurpriseRule::ProbThreshold { tau: 0.7 };
        c.hierarchy.train = vec![TrainConfig {
            epochs: 3,
            lr: 0.3,
            max_sequences: Some(8),
            ..TrainConfig::default()
        }];
        c.classifier.epochs = 2;
        c.distill.train.epochs = 2;
        c.diagnostics.n_nets = 2;
        c.diagnostics.gradient.seq_len = 20;
        c.diagnostics.gradient.n_samples = 2;
        c.diagnostics.ratio_lags = (1, 10);
        c.seeds = vec![4];
        c.out_dir = out.to_path_buf();
        c
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        assert!(matches!(OutputLock::acquire(dir.path()), Err(Error::Locked(_))));
        drop(lock);
        OutputLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn commands_chain_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let layout = Layout::new(dir.path());
        let missing = cmd_classify(&cfg).unwrap_err();
        assert!(matches!(&missing, Error::MissingArtifact(p) if p.ends_with("corpus.txt")), "{missing}");
        cmd_gen(&cfg).unwrap();
        let missing = cmd_classify(&cfg).unwrap_err();
        assert!(matches!(&missing, Error::MissingArtifact(p) if p.ends_with("manifest.json")), "{missing}");
        assert!(matches!(cmd_distill(&cfg), Err(Error::MissingArtifact(_))));

        let p = cmd_pretrain(&cfg).unwrap();
        assert_eq!(p[0].stats.len(), 3);
        let c = cmd_classify(&cfg).unwrap();
        let parity = &c[0].parity;
        assert!(parity.baseline_params.abs_diff(parity.hierarchy_params) * 10 <= parity.hierarchy_params);
        let d = cmd_distill(&cfg).unwrap();
        assert_eq!((d[0].lower_level, d[0].teacher_level), (0, 1));
        assert!(!layout.root.join(LOCK_FILE).exists());

        let hash = cfg.hash();
        for path in [layout.classify_csv(4), layout.compression(4), layout.distill_csv(4), layout.corpus(4)] {
            let text = fs::read_to_string(&path).unwrap();
            assert!(text.contains(&hash), "{}", path.display());
        }
        let csv = fs::read_to_string(layout.classify_csv(4)).unwrap();
        // header, column names, two conditions x two epochs x two splits
        assert_eq!(csv.lines().count(), 2 + 8);
    }

    #[test]
    fn diagnose_writes_one_table_per_net_and_scale() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let s = cmd_diagnose(&cfg).unwrap();
        assert_eq!(s.rows.len(), 4);
        for scale in ["scale-1", "scale-8"] {
            for i in 0..2 {
                let csv = dir.path().join("diagnose").join(scale).join(format!("net-{i}.csv"));
                assert!(fs::read_to_string(csv).unwrap().lines().nth(1).unwrap().starts_with("lag,"));
            }
        }
        assert!(s.mean_ratio(1.0) < 1.0);
    }

    #[test]
    fn tree_differences_reports_changed_and_missing_files() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        for d in [a.path(), b.path()] {
            fs::create_dir_all(d.join("x")).unwrap();
            fs::write(d.join("x/same.csv"), "1").unwrap();
        }
        assert!(tree_differences(a.path(), b.path()).unwrap().is_empty());
        fs::write(a.path().join("x/same.csv"), "2").unwrap();
        fs::write(b.path().join("extra.csv"), "").unwrap();
        assert_eq!(tree_differences(a.path(), b.path()).unwrap(), vec!["extra.csv", "x/same.csv"]);
    }
}
