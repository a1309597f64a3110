//! Batch command-line front end.
//!
//! Exit codes: 0 on success, 1 for domain errors (reported as JSON on
//! stderr), 2 for usage errors.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use ndarray::Axis;
use serde::Serialize;

use crate::dpselect::{default_cap, DpFormula};
use crate::eval::{emit_report, evaluate_features, Protocol};
use crate::features::{extract_dataset, read_csv, write_binary, write_csv, DescriptorConfig, FeatureMatrix};
use crate::patchio::{density_slice, load_manifest, write_manifest, Dataset, DensitySel};
use crate::pbdct::DEFAULT_KEEP_FRACTION;
use crate::pipeline::{classify_features, fit_stage, load_bundle, mix_seed, save_bundle, train_pipeline, Stage, TrainOptions};
use crate::svm::{KernelSpec, SvmParams};
use crate::{synth, Error};

pub const THREADS_ENV: &str = "TEXDESC_THREADS";

#[derive(Debug, Parser)]
#[command(name = "texdesc", version, about = "Texture descriptors and two-stage SVM classification of mammogram patches")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute a feature matrix for every patch in a manifest.
    Extract(ExtractArgs),
    /// Rank features by DP and run the prefix search for one stage.
    Select(SelectArgs),
    /// Train a two-stage bundle for one density slice.
    Train(TrainArgs),
    /// Classify patches with a trained bundle.
    Classify(ClassifyArgs),
    /// Run repeated two-fold cross-validation and write a report.
    Evaluate(EvaluateArgs),
    /// Write a seeded synthetic dataset with its manifest.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DescriptorArg {
    Hog,
    Hot,
    Pbdct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Linear,
    Rbf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormulaArg {
    Welch,
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Suite,
    NormalAbnormal,
    BenignMalignant,
    NoiseLabels,
}

/// A single σ or an inclusive integer range `a..b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSpec(pub Vec<f64>);

fn parse_sigma(s: &str) -> Result<SigmaSpec, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|_| format!("bad range start {a:?}"))?;
        let b: u32 = b.trim().parse().map_err(|_| format!("bad range end {b:?}"))?;
        if a == 0 || a > b {
            return Err(format!("range {s:?} must satisfy 1 <= a <= b"));
        }
        return Ok(SigmaSpec((a..=b).map(f64::from).collect()));
    }
    let v: f64 = s.trim().parse().map_err(|_| format!("bad sigma {s:?}"))?;
    if !(v.is_finite() && v > 0.0) {
        return Err(format!("sigma must be positive, got {s}"));
    }
    Ok(SigmaSpec(vec![v]))
}

/// Repeat seeds parsed from `a..b` (inclusive) or a comma list.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedList(pub Vec<u64>);

fn parse_seed_list(s: &str) -> Result<SeedList, String> {
    parse_seeds(s).map(SeedList)
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed {a:?}"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad seed {b:?}"))?;
        if a > b {
            return Err(format!("empty seed range {s:?}"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse::<u64>().map_err(|_| format!("bad seed {t:?}")))
        .collect()
}

fn parse_density(s: &str) -> Result<DensitySel, String> {
    s.parse::<DensitySel>().map_err(|t| format!("unknown density {t:?}"))
}

#[derive(Debug, Args)]
pub struct DescriptorOpts {
    /// Descriptor family.
    #[arg(long, value_enum)]
    pub descriptor: DescriptorArg,
    /// Gabor scale for hot: a value or an inclusive integer range like 1..5.
    #[arg(long, value_parser = parse_sigma)]
    pub sigma: Option<SigmaSpec>,
    /// Fraction of DCT coefficients kept by the pbdct band mask.
    #[arg(long)]
    pub keep_fraction: Option<f64>,
    /// Skip TS-CLAHE (min-max normalization still runs).
    #[arg(long)]
    pub no_enhance: bool,
}

#[derive(Debug, Args)]
pub struct FitOpts {
    /// Largest feature prefix tried by the selection search.
    #[arg(long)]
    pub cap: Option<usize>,
    /// SVM kernel.
    #[arg(long, value_enum, default_value = "linear")]
    pub kernel: KernelArg,
    /// RBF width; defaults to 1/feature_count.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// SVM box constraint.
    #[arg(long = "svm-c", default_value_t = 1.0)]
    pub svm_c: f64,
    /// DP statistic variant.
    #[arg(long, value_enum, default_value = "welch")]
    pub dp_formula: FormulaArg,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[command(flatten)]
    pub descriptor: DescriptorOpts,
    /// Manifest CSV (`id,path,density,label`).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output matrix; `.bin` writes the binary layout, anything else CSV.
    /// With a σ range, `_sigma<v>` is inserted before the extension.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub descriptor: DescriptorOpts,
    #[command(flatten)]
    pub fit: FitOpts,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Precomputed feature CSV whose ids cover the manifest.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Density slice.
    #[arg(long, value_parser = parse_density, default_value = "all")]
    pub density: DensitySel,
    /// Stage: 1 (normal vs abnormal) or 2 (benign vs malignant).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub stage: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON with the ranking and the chosen subset.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub descriptor: DescriptorOpts,
    #[command(flatten)]
    pub fit: FitOpts,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = parse_density, default_value = "all")]
    pub density: DensitySel,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output bundle file.
    #[arg(long)]
    pub bundle: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Trained bundle file.
    #[arg(long)]
    pub bundle: PathBuf,
    /// Manifest of patches to classify; density and label columns are ignored.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub descriptor: DescriptorOpts,
    #[command(flatten)]
    pub fit: FitOpts,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Comma-separated density cells.
    #[arg(long, value_parser = parse_density, value_delimiter = ',', default_value = "d,e,f,g,all")]
    pub density: Vec<DensitySel>,
    /// Repeat seeds: an inclusive range `a..b` or a comma list.
    #[arg(long, value_parser = parse_seed_list, default_value = "0..9")]
    pub seeds: SeedList,
    /// Report directory; a σ range writes one `sigma_<v>` subdirectory each.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "suite")]
    pub kind: SynthKind,
    /// Patches per class (ignored by the suite).
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for images and `manifest.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

enum Failure {
    Usage(clap::Error),
    Domain(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Domain(e)
    }
}

fn usage(kind: ErrorKind, msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(Cli::command().error(kind, msg))
}

fn sigma_tag(s: f64) -> String {
    if s.fract() == 0.0 {
        format!("{}", s as i64)
    } else {
        format!("{s}")
    }
}

impl DescriptorOpts {
    /// One config per σ (a single config for hog and pbdct).
    fn configs(&self) -> Result<Vec<(Option<f64>, DescriptorConfig)>, Failure> {
        let enhance = !self.no_enhance;
        if self.descriptor != DescriptorArg::Hot && self.sigma.is_some() {
            return Err(usage(ErrorKind::ArgumentConflict, "--sigma only applies to --descriptor hot"));
        }
        if self.descriptor != DescriptorArg::Pbdct && self.keep_fraction.is_some() {
            return Err(usage(
                ErrorKind::ArgumentConflict,
                "--keep-fraction only applies to --descriptor pbdct",
            ));
        }
        Ok(match self.descriptor {
            DescriptorArg::Hog => vec![(None, DescriptorConfig::hog().with_enhance(enhance))],
            DescriptorArg::Hot => {
                let sigmas = self.sigma.as_ref().ok_or_else(|| {
                    usage(ErrorKind::MissingRequiredArgument, "--descriptor hot requires --sigma")
                })?;
                sigmas
                    .0
                    .iter()
                    .map(|&s| (Some(s), DescriptorConfig::hot(s).with_enhance(enhance)))
                    .collect()
            }
            DescriptorArg::Pbdct => {
                let k = self.keep_fraction.unwrap_or(DEFAULT_KEEP_FRACTION);
                vec![(None, DescriptorConfig::pbdct(k).with_enhance(enhance))]
            }
        })
    }

    fn single(&self) -> Result<DescriptorConfig, Failure> {
        let mut cfgs = self.configs()?;
        if cfgs.len() != 1 {
            return Err(usage(ErrorKind::InvalidValue, "this command takes a single --sigma value"));
        }
        Ok(cfgs.remove(0).1)
    }
}

impl FitOpts {
    fn options(&self) -> TrainOptions {
        let kernel = match self.kernel {
            KernelArg::Linear => KernelSpec::Linear,
            KernelArg::Rbf => KernelSpec::Rbf { gamma: self.gamma },
        };
        TrainOptions {
            svm: SvmParams {
                kernel,
                c: self.svm_c,
                ..SvmParams::default()
            },
            cap: self.cap,
            dp_formula: match self.dp_formula {
                FormulaArg::Welch => DpFormula::Welch,
                FormulaArg::Printed => DpFormula::PrintedDifference,
            },
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}{suffix}"),
    };
    path.with_file_name(name)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> crate::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn cmd_extract(a: &ExtractArgs) -> Result<(), Failure> {
    let cfgs = a.descriptor.configs()?;
    let ds = load_manifest(&a.manifest)?;
    let sweep = cfgs.len() > 1;
    for (sigma, cfg) in cfgs {
        let m = extract_dataset(&ds, &cfg)?;
        let out = match sigma {
            Some(s) if sweep => with_suffix(&a.out, &format!("_sigma{}", sigma_tag(s))),
            _ => a.out.clone(),
        };
        if out.extension().is_some_and(|e| e == "bin") {
            write_binary(&m.values, &out)?;
        } else {
            write_csv(&m, &out)?;
        }
    }
    Ok(())
}

/// Features for `ds` in record order, from a CSV when given.
fn features_for(ds: &Dataset, cfg: &DescriptorConfig, csv: Option<&Path>) -> crate::Result<FeatureMatrix> {
    let Some(path) = csv else {
        return extract_dataset(ds, cfg);
    };
    let m = read_csv(path)?;
    if m.params_digest != cfg.digest() && !m.params_digest.is_empty() {
        return Err(Error::Config(format!(
            "feature file digest {} does not match descriptor digest {}",
            m.params_digest,
            cfg.digest()
        )));
    }
    let pos: HashMap<&str, usize> = m.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let rows = ds
        .iter()
        .map(|r| {
            pos.get(r.id.as_str())
                .copied()
                .ok_or_else(|| Error::Manifest(format!("id {:?} missing from feature file", r.id)))
        })
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(FeatureMatrix {
        ids: ds.iter().map(|r| r.id.clone()).collect(),
        values: m.values.select(Axis(0), &rows),
        params_digest: m.params_digest,
    })
}

#[derive(Serialize)]
struct SelectionOutput {
    config_digest: String,
    density: DensitySel,
    stage: Stage,
    seed: u64,
    cap: usize,
    chosen_size: usize,
    selected_indices: Vec<usize>,
    inner_accuracy_curve: Vec<(usize, f64)>,
}

fn cmd_select(a: &SelectArgs) -> Result<(), Failure> {
    let cfg = a.descriptor.single()?;
    let opts = a.fit.options();
    let ds = density_slice(&load_manifest(&a.manifest)?, a.density);
    let stage = if a.stage == 1 { Stage::NormalAbnormal } else { Stage::BenignMalignant };
    let m = features_for(&ds, &cfg, a.features.as_deref())?;
    let (rows, labels): (Vec<usize>, Vec<bool>) = ds
        .iter()
        .enumerate()
        .filter_map(|(i, r)| stage.target(r.label).map(|t| (i, t)))
        .unzip();
    let x = m.values.select(Axis(0), &rows);
    let fit = fit_stage(x.view(), &labels, &opts, mix_seed(a.seed, u64::from(stage.number())))?;
    let out = SelectionOutput {
        config_digest: cfg.digest(),
        density: a.density,
        stage,
        seed: a.seed,
        cap: opts.cap.map_or_else(|| default_cap(x.ncols()), |c| c.min(x.ncols())),
        chosen_size: fit.search.chosen_size,
        selected_indices: fit.search.selected_indices,
        inner_accuracy_curve: fit.search.inner_accuracy_curve,
    };
    write_json(&out, &a.out)?;
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<(), Failure> {
    let cfg = a.descriptor.single()?;
    let ds = load_manifest(&a.manifest)?;
    let bundle = train_pipeline(&ds, a.density, &cfg, &a.fit.options(), a.seed)?;
    for w in &bundle.warnings {
        eprintln!("{}", serde_json::json!({ "warning": w }));
    }
    save_bundle(&bundle, &a.bundle)?;
    Ok(())
}

fn cmd_classify(a: &ClassifyArgs) -> Result<(), Failure> {
    let bundle = load_bundle(&a.bundle)?;
    let ds = load_manifest(&a.manifest)?;
    let m = extract_dataset(&ds, &bundle.stage1.descriptor_config)?;
    let mut out = String::from("id,label,stage1_score,stage2_score\n");
    for (r, row) in ds.iter().zip(m.values.rows()) {
        let fv = crate::features::FeatureVector::new(
            row.to_vec(),
            bundle.stage1.descriptor_config.descriptor.tag(),
            m.params_digest.clone(),
        );
        let c = classify_features(&bundle, &fv)?;
        let s2 = c.stage2_score.map(|s| format!("{s:?}")).unwrap_or_default();
        out.push_str(&format!("{},{},{:?},{}\n", r.id, c.label.as_str(), c.stage1_score, s2));
    }
    match &a.out {
        Some(path) => std::fs::write(path, out).map_err(|e| Error::io(path, e))?,
        None => std::io::stdout()
            .write_all(out.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))?,
    }
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<bool, Failure> {
    let cfgs = a.descriptor.configs()?;
    let ds = load_manifest(&a.manifest)?;
    let protocol = Protocol {
        seeds: a.seeds.0.clone(),
        train: a.fit.options(),
    };
    let sweep = cfgs.len() > 1;
    let mut clean = true;
    for (sigma, cfg) in cfgs {
        let dir = match sigma {
            Some(s) if sweep => a.report.join(format!("sigma_{}", sigma_tag(s))),
            _ => a.report.clone(),
        };
        let features = extract_dataset(&ds, &cfg)?;
        let report = evaluate_features(&ds, &features, &cfg, &a.density, &protocol);
        emit_report(&report, &dir)?;
        for cell in report.cells.iter().filter(|c| c.status == crate::eval::CellStatus::Error) {
            eprintln!(
                "{}",
                serde_json::json!({ "cell_error": {
                    "density": cell.density.as_str(),
                    "stage": cell.stage.number(),
                    "reason": cell.reason,
                }})
            );
        }
        clean &= !report.has_errors();
    }
    Ok(clean)
}

fn cmd_synth(a: &SynthArgs) -> Result<(), Failure> {
    let ds = match a.kind {
        SynthKind::Suite => synth::suite(a.seed)?,
        SynthKind::NormalAbnormal => synth::normal_abnormal_set(a.count, a.seed)?,
        SynthKind::BenignMalignant => synth::benign_malignant_set(a.count, a.seed)?,
        SynthKind::NoiseLabels => synth::noise_label_set(a.count, a.seed)?,
    };
    write_manifest(&ds, &a.out)?;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<bool, Failure> {
    match &cli.command {
        Command::Extract(a) => cmd_extract(a).map(|()| true),
        Command::Select(a) => cmd_select(a).map(|()| true),
        Command::Train(a) => cmd_train(a).map(|()| true),
        Command::Classify(a) => cmd_classify(a).map(|()| true),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Synth(a) => cmd_synth(a).map(|()| true),
    }
}

fn threads() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads() {
        builder = builder.num_threads(n);
    }
    let outcome = match builder.build() {
        Ok(pool) => pool.install(|| dispatch(&cli)),
        Err(_) => dispatch(&cli),
    };
    match outcome {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(Failure::Usage(e)) => {
            let _ = e.print();
            2
        }
        Err(Failure::Domain(e)) => {
            eprintln!(
                "{}",
                serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } })
            );
            1
        }
    }
}
