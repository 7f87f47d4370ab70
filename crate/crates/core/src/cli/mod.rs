//! The `splitproof` command line.
//!
//! Every command writes its fully resolved parameters to
//! `<out>.config.json` next to its main output. Failures print one JSON
//! object on standard error and exit with status 1; `audit` exits with 2
//! when it finds leakage.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::cam::CamVariant;
use crate::manifest::{ClassLabel, SplitPlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_LEAK: i32 = 2;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "SPLITPROOF_THREADS";

#[derive(Debug, Parser)]
#[command(name = "splitproof", version, about = "Patient-level split auditing and CAM interpretability scoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse LIDC XML reports into a JSON Lines manifest.
    Parse(ParseArgs),
    /// Assign manifest records to train/validation/test folds.
    Split(SplitArgs),
    /// Check a fold assignment for patients spanning several folds.
    Audit(AuditArgs),
    /// Draw a Monte Carlo cross-validation schedule.
    Mccv(MccvArgs),
    /// Build a heat map from exported features and gradients.
    Cam(CamArgs),
    /// Score heat maps against nodule masks.
    Score(ScoreArgs),
    /// Blend a heat map over a grayscale image.
    Overlay(OverlayArgs),
    /// Run the synthetic fair/unfair experiment over several seeds.
    Toy(ToyArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ParseArgs {
    /// Directory of `.xml` reports (not searched recursively).
    #[arg(long)]
    pub xml_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON object mapping scan id to slice z positions in slice order.
    /// Without it each scan's slices are its distinct annotated z positions.
    #[arg(long)]
    pub slice_map: Option<PathBuf>,
    /// When given, every referenced slice image must exist under it.
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Minimum number of scored reads per nodule.
    #[arg(long, default_value_t = 3)]
    pub min_readers: usize,
    /// Centroid distance (pixels) under which reads are the same nodule.
    #[arg(long, default_value_t = crate::annotations::DEFAULT_MATCH_TOLERANCE_PX)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitModeArg {
    Fair,
    Unfair,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum)]
    pub mode: SplitModeArg,
    /// `train,validation,test` or `train,test`.
    #[arg(long, conflicts_with = "counts", required_unless_present = "counts")]
    pub fractions: Option<String>,
    /// Per-class record counts, e.g. `benign=969/410/136,malignant=2940/1241/414`.
    #[arg(long)]
    pub counts: Option<String>,
    #[arg(long)]
    pub seed: u64,
    /// Assignment CSV; the sidecar goes to `<out>.sidecar.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AuditArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub assignment: PathBuf,
    /// Defaults to `<assignment>.sidecar.json`.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    /// Report JSON; printed to standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MccvArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated patient ids, or `@FILE` with one id per line.
    #[arg(long)]
    pub test_patients: String,
    #[arg(long, default_value_t = 0.2)]
    pub fraction: f64,
    #[arg(long)]
    pub epochs: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CamArgs {
    /// `FTNSR1` container of shape [C, H, W].
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub grads: PathBuf,
    #[arg(long, default_value = "relu-sum")]
    #[serde(serialize_with = "display")]
    pub variant: CamVariant,
    /// Output width; defaults to the feature map width.
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// `.png` for an 8-bit image, anything else for an `FTNSR1` container.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    /// Holds `<record_id>.png` or `<record_id>.ftnsr` heat maps.
    #[arg(long)]
    pub heatmaps: PathBuf,
    /// Holds `<record_id>.png` masks, or the records' `mask_path`s.
    #[arg(long)]
    pub masks: PathBuf,
    /// Manifest whose records are scored.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "model")]
    pub model_tag: String,
    /// CAM variant that produced the heat maps, recorded in the sidecar.
    #[arg(long)]
    #[serde(serialize_with = "display_opt")]
    pub variant: Option<CamVariant>,
    /// Report CSV; aggregates go to `<out>.sidecar.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct OverlayArgs {
    #[arg(long)]
    pub heatmap: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 0.4)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ToyModeArg {
    Fair,
    Unfair,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct ToyArgs {
    /// Setup JSON (`config`, `hyper`, `split`); the bundled defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ToyModeArg,
    /// First seed of the sweep.
    #[arg(long)]
    pub seed: u64,
    /// Number of consecutive seeds.
    #[arg(long, default_value_t = 5)]
    pub runs: u64,
    /// Overrides the training epochs of the setup.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Results CSV; the pass/fail summary goes to `<out>.sidecar.json`.
    #[arg(long)]
    pub out: PathBuf,
}

fn display<T: fmt::Display, S: serde::Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn display_opt<T: fmt::Display, S: serde::Serializer>(v: &Option<T>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.collect_str(v),
        None => s.serialize_none(),
    }
}

/// A failed command, reported as one JSON object on standard error.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    pub path: Option<PathBuf>,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl fmt::Display) -> Self {
        Self {
            kind,
            message: message.to_string(),
            path: None,
        }
    }

    pub fn at(mut self, path: &Path) -> Self {
        self.path = Some(path.to_path_buf());
        self
    }

    pub fn to_json(&self) -> String {
        let mut v = json!({ "error": self.kind, "message": self.message });
        if let Some(p) = &self.path {
            v["path"] = json!(p.display().to_string());
        }
        v.to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.path {
            Some(p) => write!(f, "{}: {} ({})", self.kind, self.message, p.display()),
            None => write!(f, "{}: {}", self.kind, self.message),
        }
    }
}

impl std::error::Error for CliError {}

/// Parses `0.7,0.15,0.15` (three-way) or `0.8,0.2` (two-way).
pub fn parse_fractions(text: &str) -> Result<SplitPlan, CliError> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::new("usage", format!("bad --fractions {text:?}: {e}")))?;
    match parts.as_slice() {
        &[train, validation, test] => Ok(SplitPlan::fractions(train, validation, test)),
        &[train, test] => Ok(SplitPlan::TwoWay { train, test }),
        _ => Err(CliError::new("usage", format!("--fractions needs 2 or 3 values, got {text:?}"))),
    }
}

/// Parses `benign=969/410/136,malignant=2940/1241/414`.
pub fn parse_counts(text: &str) -> Result<SplitPlan, CliError> {
    let bad = |why: String| CliError::new("usage", format!("bad --counts {text:?}: {why}"));
    let mut counts = std::collections::BTreeMap::new();
    for entry in text.split(',') {
        let (name, values) = entry.split_once('=').ok_or_else(|| bad(format!("{entry:?} lacks '='")))?;
        let label = match name.trim() {
            "benign" => ClassLabel::Benign,
            "malignant" => ClassLabel::Malignant,
            other => return Err(bad(format!("unknown class {other:?}"))),
        };
        let nums: Vec<usize> = values
            .split('/')
            .map(|v| v.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| bad(e.to_string()))?;
        let triple: [usize; 3] = nums
            .try_into()
            .map_err(|_| bad(format!("{name} needs train/validation/test")))?;
        if counts.insert(label, triple).is_some() {
            return Err(bad(format!("{name} given twice")));
        }
    }
    Ok(SplitPlan::Counts(counts))
}

/// `<path>.<suffix>`, keeping the original extension.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::new("usage", format!("{THREADS_ENV}={raw:?} is not a positive integer")))?;
    // a pool may already exist when the library is driven in-process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs one command and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            eprintln!("{}", CliError::new("usage", e.to_string().trim_end()).to_json());
            return EXIT_INPUT;
        }
    };
    match configure_threads().and_then(|()| commands::dispatch(&cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            EXIT_INPUT
        }
    }
}
