use std::collections::HashMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::CliError;
use crate::crnn::{self, CrnnConfig, CrnnParams};
use crate::dataio::{self, Dataset, Split, VoiMode};
use crate::features::{self, FeatureMatrix};
use crate::plg::{self, PseudoLabelSet};
use crate::teacher::{self, EpochRecord, MeanTeacherState, PseudoKinds, TrainConfig, TrainData};

/// A dataset with its features and the matching network shape.
pub struct Prepared {
    pub dataset: Dataset,
    pub features: Vec<FeatureMatrix>,
    pub model: CrnnConfig,
}

pub fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset, CliError> {
    match &cfg.dataset_dir {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(CliError::Config(format!("dataset_dir: {} does not exist", dir.display())));
            }
            Ok(dataio::load_dataset_dir(dir)?)
        }
        None => {
            let mut synth = cfg.synth.clone();
            if cfg.dataset_per_seed {
                synth.seed = synth.seed.wrapping_add(seed);
            }
            Ok(dataio::synth_dataset(&synth)?.dataset)
        }
    }
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared, CliError> {
    let dataset = load_dataset(cfg, seed)?;
    if let Some(c) = dataset.clips.iter().find(|c| c.sample_rate != cfg.features.sample_rate) {
        return Err(CliError::Config(format!(
            "features.sample_rate: {} but clip {} is {} Hz",
            cfg.features.sample_rate, c.id, c.sample_rate
        )));
    }
    let features = dataset
        .clips
        .par_iter()
        .map(|c| features::log_mel(&c.samples, &cfg.features))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let model = cfg.model.crnn(cfg.features.n_mels, dataset.classes.len());
    model.validate().map_err(|e| CliError::Config(format!("model: {e}")))?;
    Ok(Prepared { dataset, features, model })
}

/// Switches that separate the experiment variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Variant {
    pub mean_teacher: bool,
    pub pseudo: PseudoKinds,
    /// `None` keeps the mixed-share batches.
    pub voi: Option<VoiMode>,
}

impl Variant {
    const fn new(mean_teacher: bool, upw: bool, ups: bool, wps: bool) -> Self {
        Variant { mean_teacher, pseudo: PseudoKinds { upw, ups, wps }, voi: None }
    }

    pub const CRNN: Variant = Variant::new(false, false, false, false);
    pub const MT: Variant = Variant::new(true, false, false, false);
    pub const PLG: Variant = Variant::new(false, true, true, true);
    pub const MT_PLG: Variant = Variant::new(true, true, true, true);

    pub fn include_unlabeled(&self) -> bool {
        self.mean_teacher || self.pseudo.any()
    }

    /// `base` with only this variant's switches applied.
    pub fn train_config(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            max_consistency_weight: if self.mean_teacher { base.max_consistency_weight } else { 0.0 },
            voi_mode: self.voi.or(base.voi_mode),
            seed,
            ..base.clone()
        }
    }

    pub fn slug(&self) -> String {
        let mut s = String::from(if self.mean_teacher { "mt" } else { "crnn" });
        for (on, tag) in [(self.pseudo.ups, "ups"), (self.pseudo.wps, "wps"), (self.pseudo.upw, "upw")] {
            if on {
                s.push('_');
                s.push_str(tag);
            }
        }
        if let Some(v) = self.voi {
            s.push('_');
            s.push_str(&v.name().to_lowercase());
        }
        s
    }
}

pub fn ablation1_variants() -> Vec<(&'static str, Variant)> {
    vec![("CRNN", Variant::CRNN), ("CRNN+MT", Variant::MT), ("CRNN+PLG", Variant::PLG), ("CRNN+MT+PLG", Variant::MT_PLG)]
}

pub fn ablation2_variants() -> Vec<(&'static str, Variant)> {
    vec![
        ("baseline", Variant::MT),
        ("+UPW", Variant::new(true, true, false, false)),
        ("+WPS", Variant::new(true, false, false, true)),
        ("+UPS", Variant::new(true, false, true, false)),
        ("+UPS+WPS", Variant::new(true, false, true, true)),
        ("+UPS+WPS+UPW", Variant::MT_PLG),
    ]
}

pub fn voi_variants() -> Vec<(&'static str, Variant)> {
    VoiMode::ALL.iter().map(|&m| (m.name(), Variant { voi: Some(m), ..Variant::MT_PLG })).collect()
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    /// Final-epoch validation EB-F1 in percent.
    pub eb_f1: f64,
    pub history: Vec<EpochRecord>,
    pub params: CrnnParams,
}

pub const HISTORY_HEADER: &str = "epoch,j1_real,j1_pseudo,j2_strong,j2_weak,total,val_eb_f1";

pub fn history_row(r: &EpochRecord) -> String {
    let l = &r.loss;
    let f1 = r.val_eb_f1.map(|v| format!("{v:.6}")).unwrap_or_default();
    format!("{},{:.8},{:.8},{:.8},{:.8},{:.8},{}", r.epoch, l.j1_real, l.j1_pseudo, l.j2_strong, l.j2_weak, l.total, f1)
}

/// Opens `path` and writes the header; rows are appended as epochs finish.
pub struct HistoryWriter {
    file: Option<File>,
    error: Option<std::io::Error>,
}

impl HistoryWriter {
    pub fn create(path: Option<&Path>) -> Result<Self, CliError> {
        let file = match path {
            Some(p) => {
                if let Some(dir) = p.parent() {
                    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
                }
                let mut f = File::create(p).map_err(|e| CliError::io(p, e))?;
                writeln!(f, "{HISTORY_HEADER}").map_err(|e| CliError::io(p, e))?;
                Some(f)
            }
            None => None,
        };
        Ok(HistoryWriter { file, error: None })
    }

    pub fn push(&mut self, r: &EpochRecord) {
        if let Some(f) = &mut self.file {
            if let Err(e) = writeln!(f, "{}", history_row(r)).and_then(|_| f.flush()) {
                self.error.get_or_insert(e);
            }
        }
    }
}

/// Trains one model. History is streamed to `history_path` when given.
pub fn train_once(
    prep: &Prepared,
    variant: &Variant,
    base: &TrainConfig,
    seed: u64,
    pseudo: Option<&PseudoLabelSet>,
    history_path: Option<&Path>,
) -> Result<RunOutcome, CliError> {
    let data = TrainData::build(
        &prep.dataset,
        &prep.features,
        &prep.model,
        pseudo,
        variant.pseudo,
        variant.include_unlabeled(),
    )?;
    let cfg = variant.train_config(base, seed);
    let state = MeanTeacherState::new(crnn::init_params(&prep.model, seed)?);
    let mut writer = HistoryWriter::create(history_path)?;
    let (state, history) = teacher::train(state, &data, &cfg, |r| writer.push(r))?;
    if let (Some(e), Some(p)) = (writer.error, history_path) {
        return Err(CliError::io(p, e));
    }
    let eb_f1 = history.last().and_then(|r| r.val_eb_f1).unwrap_or(0.0) * 100.0;
    Ok(RunOutcome { eb_f1, history, params: state.student })
}

pub fn generate_pseudo(prep: &Prepared, model: &CrnnParams, checkpoint_id: &str, cfg: &ExperimentConfig) -> Result<PseudoLabelSet, CliError> {
    let pick = |split: Split| -> Vec<(String, &FeatureMatrix)> {
        prep.dataset
            .clips
            .iter()
            .zip(&prep.features)
            .filter(|(c, _)| c.split == split)
            .map(|(c, f)| (c.id.clone(), f))
            .collect()
    };
    Ok(plg::generate_all(
        model,
        checkpoint_id,
        &pick(Split::Unlabeled),
        &pick(Split::Weak),
        &prep.dataset.weak,
        &prep.dataset.classes,
        &cfg.plg,
    )?)
}

/// Runs variants over seeds, sharing datasets, the pseudo-label model
/// and any run that several reports need.
pub struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: Option<PathBuf>,
    prepared: HashMap<u64, Rc<Prepared>>,
    runs: HashMap<(Variant, u64), RunOutcome>,
    pseudo: HashMap<u64, Rc<PseudoLabelSet>>,
    external: Option<(CrnnParams, String)>,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a ExperimentConfig, out: Option<PathBuf>) -> Result<Self, CliError> {
        let external = match &cfg.checkpoint {
            Some(p) => {
                let ck = crnn::load_checkpoint(p)?;
                Some((ck.params, ck.id))
            }
            None => None,
        };
        Ok(Runner { cfg, out, prepared: HashMap::new(), runs: HashMap::new(), pseudo: HashMap::new(), external })
    }

    fn prepared(&mut self, seed: u64) -> Result<Rc<Prepared>, CliError> {
        let key = if self.cfg.dataset_per_seed { seed } else { 0 };
        if let Some(p) = self.prepared.get(&key) {
            return Ok(p.clone());
        }
        let p = Rc::new(prepare(self.cfg, seed)?);
        self.prepared.insert(key, p.clone());
        Ok(p)
    }

    fn pseudo_for(&mut self, seed: u64) -> Result<Rc<PseudoLabelSet>, CliError> {
        if let Some(p) = self.pseudo.get(&seed) {
            return Ok(p.clone());
        }
        let prep = self.prepared(seed)?;
        let set = match &self.external {
            Some((params, id)) => generate_pseudo(&prep, params, id, self.cfg)?,
            None => {
                let mt = self.run(Variant::MT, seed)?;
                let id = crnn::Checkpoint::from_params(mt.params.clone()).id;
                generate_pseudo(&prep, &mt.params, &id, self.cfg)?
            }
        };
        if let Some(out) = &self.out {
            plg::save_pseudo_labels(&out.join("pseudo").join(format!("seed{seed}")), &set)?;
        }
        let set = Rc::new(set);
        self.pseudo.insert(seed, set.clone());
        Ok(set)
    }

    pub fn run(&mut self, variant: Variant, seed: u64) -> Result<RunOutcome, CliError> {
        if let Some(r) = self.runs.get(&(variant, seed)) {
            return Ok(r.clone());
        }
        let pseudo = if variant.pseudo.any() { Some(self.pseudo_for(seed)?) } else { None };
        let prep = self.prepared(seed)?;
        let run_dir = self.out.as_ref().map(|o| o.join("runs").join(format!("{}_seed{seed}", variant.slug())));
        let history = run_dir.as_ref().map(|d| d.join("history.csv"));
        log::info!("training {} seed {seed}", variant.slug());
        let outcome = train_once(&prep, &variant, &self.cfg.train, seed, pseudo.as_deref(), history.as_deref())?;
        if let Some(d) = &run_dir {
            crnn::save_checkpoint(&d.join("student.ckpt"), &outcome.params)?;
        }
        self.runs.insert((variant, seed), outcome.clone());
        Ok(outcome)
    }

    pub fn report(
        &mut self,
        title: &str,
        variants: &[(&str, Variant)],
        seeds: &[u64],
        footer: Vec<String>,
    ) -> Result<AblationReport, CliError> {
        let mut rows = Vec::new();
        for (name, v) in variants {
            let mut scores = Vec::new();
            for &s in seeds {
                scores.push((s, self.run(*v, s)?.eb_f1));
            }
            let median = median(&scores.iter().map(|x| x.1).collect::<Vec<_>>());
            rows.push(ReportRow { variant: name.to_string(), scores, median });
        }
        Ok(AblationReport { title: title.to_string(), rows, footer })
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub variant: String,
    pub scores: Vec<(u64, f64)>,
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub title: String,
    pub rows: Vec<ReportRow>,
    pub footer: Vec<String>,
}

impl AblationReport {
    pub fn median_of(&self, variant: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == variant).map(|r| r.median)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant,seed,eb_f1,median\n");
        for r in &self.rows {
            for (seed, f1) in &r.scores {
                s.push_str(&format!("{},{},{:.4},{:.4}\n", r.variant, seed, f1, r.median));
            }
        }
        for f in &self.footer {
            s.push_str(&format!("# {f}\n"));
        }
        s
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{}\n{:<16} {:>10}  per-seed EB-F1 (%)\n", self.title, "variant", "median");
        for r in &self.rows {
            let per: Vec<String> = r.scores.iter().map(|(_, f)| format!("{f:.2}")).collect();
            s.push_str(&format!("{:<16} {:>10.2}  {}\n", r.variant, r.median, per.join(" ")));
        }
        for f in &self.footer {
            s.push_str(&format!("  {f}\n"));
        }
        s
    }
}

pub fn ablation1_footer() -> Vec<String> {
    vec!["full-scale reference EB-F1 (%), not reproducible here: CRNN 28.14, CRNN+MT 32.39, CRNN+PLG 30.04, CRNN+MT+PLG 33.93".into()]
}

pub fn ablation2_footer() -> Vec<String> {
    vec!["full-scale reference EB-F1 (%), not reproducible here: baseline 32.39, +UPW 30.06, +WPS 32.15, +UPS 32.42, +UPS+WPS 33.52, +UPS+WPS+UPW 33.93".into()]
}

pub fn voi_footer() -> Vec<String> {
    vec!["full-scale reference: random ordering scored best with each of the three pseudo-label models".into()]
}
