//! Command-line experiment runner.

pub mod config;
pub mod experiment;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Serialize;

pub use config::{ExperimentConfig, Mode};
use experiment::{AblationReport, Runner, Variant};

use crate::crnn::{self, CrnnError};
use crate::dataio::{self, DataError};
use crate::evalkit::{self, CollarParams, EvalError};
use crate::plg::{self, PlgError};
use crate::teacher::{TrainError, PseudoKinds};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        }
    )*};
}
runtime_from!(TrainError, CrnnError, DataError, EvalError, PlgError);

#[derive(Debug, Parser)]
#[command(name = "couple-sed", version, about = "Mean Teacher + pseudo-label SED experiments")]
pub struct Args {
    #[arg(value_enum)]
    pub mode: Mode,
    /// TOML experiment config.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed list with a single seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Summary<'a> {
    mode: String,
    config_sha256: String,
    seeds: &'a [u64],
    medians: BTreeMap<String, f64>,
}

/// Reads and validates the config. The seed comes from `--seed`, then
/// `CL_SEED`, then the file.
pub fn load_config(args: &Args) -> Result<(ExperimentConfig, String), CliError> {
    let bytes = fs::read(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Config(format!("{}: not UTF-8", args.config.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    cfg.resolve_paths(args.config.parent().unwrap_or(Path::new(".")));
    let env_seed = match std::env::var("CL_SEED") {
        Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| CliError::Config(format!("CL_SEED: not an integer: {v:?}")))?),
        Err(_) => None,
    };
    if let Some(s) = args.seed.or(env_seed) {
        cfg.seeds = vec![s];
    }
    cfg.check(args.mode).map_err(CliError::Config)?;
    Ok((cfg, config::sha256_hex(&bytes)))
}

pub fn run(args: &Args) -> Result<(), CliError> {
    let (cfg, hash) = load_config(args)?;
    let out = &args.out;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut medians = BTreeMap::new();
    match args.mode {
        Mode::Score => score(&cfg, out)?,
        Mode::Synth => {
            let ds = experiment::load_dataset(&cfg, cfg.seeds[0])?;
            let dir = out.join("dataset");
            dataio::save_dataset_dir(&dir, &ds)?;
            println!("wrote {} clips to {}", ds.clips.len(), dir.display());
        }
        Mode::Plg => {
            let ck = crnn::load_checkpoint(cfg.checkpoint.as_ref().expect("checked"))?;
            let prep = experiment::prepare(&cfg, cfg.seeds[0])?;
            if ck.params.config() != &prep.model {
                return Err(CliError::Config("checkpoint: network shape does not match [model] and [features]".into()));
            }
            let set = experiment::generate_pseudo(&prep, &ck.params, &ck.id, &cfg)?;
            let dir = out.join("pseudo");
            plg::save_pseudo_labels(&dir, &set)?;
            println!("pseudo labels from checkpoint {} written to {}", ck.id, dir.display());
        }
        Mode::Train => {
            let seed = cfg.seeds[0];
            let prep = experiment::prepare(&cfg, seed)?;
            let pseudo = match &cfg.pseudo_dir {
                Some(d) => Some(plg::load_pseudo_labels(d)?),
                None => None,
            };
            let kinds = if pseudo.is_some() { cfg.pseudo } else { PseudoKinds::default() };
            let variant = Variant { mean_teacher: cfg.train.uses_teacher(), pseudo: kinds, voi: cfg.train.voi_mode };
            let outcome = experiment::train_once(
                &prep,
                &variant,
                &cfg.train,
                seed,
                pseudo.as_ref(),
                Some(&out.join("history.csv")),
            )?;
            let id = crnn::save_checkpoint(&out.join("checkpoint.ckpt"), &outcome.params)?;
            println!("checkpoint {id}: final validation EB-F1 {:.2}%", outcome.eb_f1);
            medians.insert("train".to_string(), outcome.eb_f1);
        }
        Mode::Ablation1 | Mode::Ablation2 | Mode::Voi => {
            let mut runner = Runner::new(&cfg, Some(out.clone()))?;
            let report: AblationReport = match args.mode {
                Mode::Ablation1 => runner.report(
                    "ablation1",
                    &experiment::ablation1_variants(),
                    &cfg.seeds,
                    experiment::ablation1_footer(),
                )?,
                Mode::Ablation2 => runner.report(
                    "ablation2",
                    &experiment::ablation2_variants(),
                    &cfg.seeds,
                    experiment::ablation2_footer(),
                )?,
                _ => runner.report("voi", &experiment::voi_variants(), &cfg.seeds, experiment::voi_footer())?,
            };
            let path = out.join(format!("{}.csv", args.mode));
            fs::write(&path, report.to_csv()).map_err(|e| CliError::io(&path, e))?;
            print!("{}", report.to_table());
            for r in &report.rows {
                medians.insert(r.variant.clone(), r.median);
            }
        }
    }
    let summary = Summary { mode: args.mode.to_string(), config_sha256: hash, seeds: &cfg.seeds, medians };
    let path = out.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(())
}

fn score(cfg: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let (r, e) = (cfg.score.reference.as_ref().expect("checked"), cfg.score.estimate.as_ref().expect("checked"));
    let reference = dataio::load_strong(r)?;
    let estimate = dataio::load_strong(e)?;
    let mut classes: Vec<String> =
        reference.values().chain(estimate.values()).flatten().map(|ev| ev.class_name.clone()).collect();
    classes.sort();
    classes.dedup();
    if classes.is_empty() {
        return Err(CliError::Runtime("no events in either file".into()));
    }
    let report = evalkit::eb_f1(&reference, &estimate, &CollarParams::default(), &classes)?;
    let csv = report.to_csv();
    print!("{csv}\n{}", report.to_table());
    let path = out.join("score.csv");
    fs::write(&path, csv).map_err(|e| CliError::io(&path, e))
}
