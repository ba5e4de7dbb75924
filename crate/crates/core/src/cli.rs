//! The `velopick` command line.
//!
//! Exit codes: 0 success, 1 bad arguments or configuration, 2 unreadable or
//! inconsistent data, 3 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use log::info;
use serde::Serialize;
use serde_json::Value;

use crate::dataset::{read_dataset, Dataset, Split};
use crate::enhance::{enhance_grid, multiscale_stack, PARAMETER_GRID};
use crate::error::{Error, Result};
use crate::features::{entry_pack, make_sample, reference_curve, SgsSettings};
use crate::grid::{TimeAxis, VelocityAxis, VelocityCurve};
use crate::io;
use crate::mifn::{Aggregation, Mifn, MifnConfig, Variant};
use crate::pick::{qc, vmae, velocity_field, PickConfig};
use crate::pipeline::{self, ablate, pick_entries, pick_map, predict, write_ablation, AblationConfig, SynthConfig};
use crate::sgs::{self, read_pack, write_pack};
use crate::spectrum::{semblance, DEFAULT_WINDOW_HALF};
use crate::synth::LayerModel;
use crate::train::{train_dataset, write_history, TrainConfig};

pub const EXIT_ARGS: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "velopick", version, about = "Automatic stacking-velocity picking on CMP gathers")]
pub struct Cli {
    /// JSON object of flag values; flags given on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate lines of CMP gathers with spectra and truth labels.
    Synth(SynthArgs),
    /// Semblance velocity spectrum of one gather.
    Spectrum(SpectrumArgs),
    /// Enhanced observations of a spectrum.
    Enhance(EnhanceArgs),
    /// Stacked gather slices around one cdp of a line.
    Sgs(SgsArgs),
    /// Train the segmentation network on a dataset.
    Train(TrainArgs),
    /// Segment spectra and pick velocity curves.
    Pick(PickArgs),
    /// Stack power and stacked sections under picked curves.
    Qc(QcArgs),
    /// Velocity field image of a line's curves.
    Velfield(VelfieldArgs),
    /// Train and score the full network and its ablations on synthetic data.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    /// Layer model JSON: `[[t_base, v_int], ...]` or a full model object.
    #[arg(long)]
    pub layers: Option<PathBuf>,
    #[arg(long, default_value_t = 21)]
    pub ncdp: usize,
    /// Signal-to-noise ratio in dB; noise-free when omitted.
    #[arg(long, allow_negative_numbers = true)]
    pub snr_db: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fractional velocity change per cdp.
    #[arg(long, default_value_t = 0.002)]
    pub drift: f64,
    #[arg(long, default_value_t = 1)]
    pub train_lines: u32,
    #[arg(long, default_value_t = 0)]
    pub val_lines: u32,
    #[arg(long, default_value_t = 0)]
    pub test_lines: u32,
    #[command(flatten)]
    pub axes: AxisArgs,
    #[arg(long)]
    pub out: PathBuf,
}

/// Spectrum grid; times in seconds, velocities in m/s.
#[derive(Debug, Clone, Args)]
pub struct AxisArgs {
    #[arg(long, default_value_t = 0.0)]
    pub tmin: f64,
    #[arg(long, default_value_t = 0.0156)]
    pub dt: f64,
    #[arg(long, default_value_t = 64)]
    pub nt: usize,
    #[arg(long, default_value_t = 1500.0)]
    pub vmin: f64,
    #[arg(long, default_value_t = 50.0)]
    pub dv: f64,
    #[arg(long, default_value_t = 40)]
    pub nv: usize,
    /// Semblance window half-length in gather samples.
    #[arg(long, default_value_t = DEFAULT_WINDOW_HALF)]
    pub window_half: usize,
}

impl AxisArgs {
    fn axes(&self) -> Result<(TimeAxis, VelocityAxis)> {
        Ok((TimeAxis::new(self.tmin, self.dt, self.nt)?, VelocityAxis::new(self.vmin, self.dv, self.nv)?))
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub gather: PathBuf,
    #[command(flatten)]
    pub axes: AxisArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Grey-scale preview.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
#[command(group = clap::ArgGroup::new("rows").required(true).args(["row", "all"]))]
pub struct EnhanceArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Parameter row 0 to 8.
    #[arg(long)]
    pub row: Option<usize>,
    #[arg(long)]
    pub all: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SgsOptions {
    /// Neighbourhood width in cdps.
    #[arg(long, default_value_t = sgs::DEFAULT_K)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.9,1.0,1.1,1.2")]
    pub percent: Vec<f64>,
}

impl SgsOptions {
    fn settings(&self) -> SgsSettings {
        SgsSettings {
            k: self.k,
            percentages: self.percent.clone(),
            coarse_rows: None,
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SgsArgs {
    /// Dataset directory holding the line.
    #[arg(long)]
    pub line: PathBuf,
    /// Line number inside the dataset; the first line when omitted.
    #[arg(long)]
    pub line_id: Option<u32>,
    #[arg(long)]
    pub cdp: u32,
    #[command(flatten)]
    pub sgs: SgsOptions,
    /// Reference curve CSV; otherwise the mean training label or a
    /// constant-velocity scan.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
#[command(group = clap::ArgGroup::new("ablation").args(["no_sfe", "no_sgs"]))]
pub struct VariantArgs {
    /// Original spectrum and SGS channel only.
    #[arg(long)]
    pub no_sfe: bool,
    /// Spectrum channels only.
    #[arg(long)]
    pub no_sgs: bool,
}

impl VariantArgs {
    fn variant(&self) -> Variant {
        match (self.no_sfe, self.no_sgs) {
            (true, _) => Variant::NoSfe,
            (_, true) => Variant::NoSgs,
            _ => Variant::Full,
        }
    }

    fn any(&self) -> bool {
        self.no_sfe || self.no_sgs
    }
}

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value_t = 16)]
    pub base: usize,
    #[arg(long, default_value_t = 16)]
    pub sgs_channels: usize,
    /// Merge of per-curve SGS maps: `sum` or `mean`.
    #[arg(long, default_value = "sum", value_parser = parse_aggregation)]
    pub aggregation: Aggregation,
}

fn parse_aggregation(s: &str) -> std::result::Result<Aggregation, String> {
    match s {
        "sum" => Ok(Aggregation::Sum),
        "mean" => Ok(Aggregation::Mean),
        _ => Err(format!("unknown aggregation `{s}` (sum or mean)")),
    }
}

impl NetArgs {
    fn config(&self, variant: Variant) -> MifnConfig {
        MifnConfig {
            height: self.height,
            width: self.width,
            depth: self.depth,
            base_channels: self.base,
            sgs_channels: self.sgs_channels,
            aggregation: self.aggregation,
            variant,
            ..MifnConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 15)]
    pub validate_every: usize,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl OptimArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch,
            lr: self.lr,
            max_iterations: self.max_iter,
            validate_every: self.validate_every,
            patience: self.patience,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Pretrained weights to fine-tune.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Loss history CSV; next to the weights when omitted.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub variant: VariantArgs,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub sgs: SgsOptions,
}

#[derive(Debug, Clone, Args)]
pub struct PickOptions {
    /// Regression span at each end in seconds.
    #[arg(long)]
    pub tt: Option<f64>,
    /// Two-point end extrapolation.
    #[arg(long)]
    pub naive: bool,
}

impl PickOptions {
    fn config(&self) -> PickConfig {
        PickConfig {
            t_t: self.tt,
            naive_extrapolation: self.naive,
            ..PickConfig::default()
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["spec", "data"]))]
pub struct PickArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// One spectrum; written out as a segmentation map.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// SGS pack for `--spec`.
    #[arg(long, requires = "spec")]
    pub sgs: Option<PathBuf>,
    /// Segmentation map output for `--spec`.
    #[arg(long, requires = "spec")]
    pub out: Option<PathBuf>,
    /// Picked curve CSV for `--spec`.
    #[arg(long, requires = "spec")]
    pub curve: Option<PathBuf>,
    /// Dataset whose entries are all picked.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Restrict `--data` to one split.
    #[arg(long, requires = "data", value_parser = parse_split)]
    pub split: Option<Split>,
    /// Output directory of curves and maps for `--data`.
    #[arg(long, requires = "data")]
    pub curves: Option<PathBuf>,
    #[command(flatten)]
    pub variant: VariantArgs,
    #[command(flatten)]
    pub pick: PickOptions,
    #[command(flatten)]
    pub sgs_opts: SgsOptions,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "validation" => Ok(Split::Validation),
        "test" => Ok(Split::Test),
        _ => Err(format!("unknown split `{s}` (train, validation or test)")),
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct QcArgs {
    /// Dataset directory with the gathers.
    #[arg(long)]
    pub line: PathBuf,
    /// Directory of picked curves named like the dataset entries.
    #[arg(long)]
    pub curves: PathBuf,
    #[arg(long)]
    pub line_id: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct VelfieldArgs {
    /// Dataset directory giving the time axis and entry names.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub curves: PathBuf,
    #[arg(long)]
    pub line_id: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct AblateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 25)]
    pub ncdp: usize,
    #[arg(long, default_value_t = 7)]
    pub train_lines: u32,
    #[arg(long, default_value_t = 1)]
    pub val_lines: u32,
    #[arg(long, default_value_t = 2)]
    pub test_lines: u32,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value_t = 8)]
    pub base: usize,
    #[arg(long, default_value_t = 8)]
    pub sgs_channels: usize,
    #[command(flatten)]
    pub optim: OptimArgs,
}

/// Parses and runs one invocation, returning the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match merge_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("velopick: {e}");
            return EXIT_ARGS;
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ARGS } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("velopick: --threads must be at least 1");
            return EXIT_ARGS;
        }
        // a second call in one process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("velopick: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_ARGS,
        Error::InvalidCurve(_)
        | Error::Domain(_)
        | Error::Shape(_)
        | Error::Format(_)
        | Error::MissingFile(_)
        | Error::Json(_)
        | Error::Csv(_) => EXIT_DATA,
        Error::EmptyPick | Error::Io(_) | Error::Net(_) => EXIT_RUNTIME,
    }
}

/// Removes `--config FILE` and splices the file's flags in right after the
/// subcommand, so that flags typed later on the command line override them.
pub fn merge_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut path = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy().into_owned();
        if s == "--config" {
            let p = it.next().ok_or_else(|| Error::Config("--config needs a file".into()))?;
            path = Some(PathBuf::from(p));
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = path else { return Ok(rest) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("config {} is not valid JSON: {e}", path.display())))?;
    let Value::Object(map) = value else {
        return Err(Error::Config(format!("config {} must hold a JSON object", path.display())));
    };
    let mut injected = Vec::new();
    for (key, v) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            Value::Bool(true) => injected.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                let joined: Vec<String> = items.iter().map(scalar).collect::<Result<_>>()?;
                injected.push(format!("{flag}={}", joined.join(",")));
            }
            other => injected.push(format!("{flag}={}", scalar(&other)?)),
        }
    }
    let mut sub = None;
    let mut i = 1;
    while i < rest.len() {
        let s = rest[i].to_string_lossy();
        if s == "--threads" {
            i += 2;
        } else if s.starts_with('-') {
            i += 1;
        } else {
            sub = Some(i + 1);
            break;
        }
    }
    let sub = sub.ok_or_else(|| Error::Config("no subcommand given".into()))?;
    rest.splice(sub..sub, injected.into_iter().map(OsString::from));
    Ok(rest)
}

fn scalar(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(Error::Config(format!("config value {v} is not a scalar"))),
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Spectrum(a) => spectrum(a),
        Command::Enhance(a) => enhance(a),
        Command::Sgs(a) => sgs_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Pick(a) => pick_cmd(a),
        Command::Qc(a) => qc_cmd(a),
        Command::Velfield(a) => velfield(a),
        Command::Ablate(a) => ablate_cmd(a),
    }
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum LayersFile {
    Pairs(Vec<(f64, f64)>),
    Model(LayerModel),
}

fn read_layers(path: &Path) -> Result<LayerModel> {
    match io::read_json::<LayersFile>(path)? {
        LayersFile::Pairs(p) => LayerModel::from_layers(&p),
        LayersFile::Model(m) => {
            m.validate()?;
            Ok(m)
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::desk();
    let (taxis, vaxis) = a.axes.axes()?;
    cfg.taxis = taxis;
    cfg.vaxis = vaxis;
    cfg.window_half = a.axes.window_half;
    cfg.line.n_cdp = a.ncdp;
    cfg.line.drift = a.drift;
    cfg.snr_db = a.snr_db;
    cfg.random = crate::synth::RandomModelParams::for_axes(0.12 * taxis.t_end(), 0.92 * taxis.t_end(), &vaxis);
    if let Some(p) = &a.layers {
        cfg.model = Some(read_layers(p)?);
    }
    if a.train_lines + a.val_lines + a.test_lines == 0 {
        return Err(Error::Config("at least one line is required".into()));
    }
    let plan = pipeline::line_plan(a.train_lines, a.val_lines, a.test_lines);
    let ds = pipeline::synth_dataset(&a.out, &cfg, &plan, a.seed)?;
    io::write_json(a.out.join("synth.json"), &cfg)?;
    info!("wrote {} entries to {}", ds.len(), a.out.display());
    Ok(())
}

fn spectrum(a: SpectrumArgs) -> Result<()> {
    let gather = io::read_gather(&a.gather)?;
    let (taxis, vaxis) = a.axes.axes()?;
    let spec = semblance(&gather, &taxis, &vaxis, a.axes.window_half)?;
    io::write_spectrum(&a.out, &spec)?;
    if let Some(p) = &a.pgm {
        io::write_pgm(p, &spec.values, 0.0, 1.0)?;
    }
    Ok(())
}

fn enhance(a: EnhanceArgs) -> Result<()> {
    let spec = io::read_spectrum(&a.spec)?;
    let rows: Vec<usize> = match a.row {
        Some(r) if r < PARAMETER_GRID.len() => vec![r],
        Some(r) => return Err(Error::Config(format!("row {r} outside 0..{}", PARAMETER_GRID.len()))),
        None => (0..PARAMETER_GRID.len()).collect(),
    };
    let grids = if a.all {
        multiscale_stack(&spec)[1..].to_vec()
    } else {
        vec![enhance_grid(&spec.values, &PARAMETER_GRID[rows[0]])?]
    };
    for (r, g) in rows.iter().zip(&grids) {
        io::write_grid(a.out.join(format!("row{r}.vpk")), g)?;
        io::write_pgm(a.out.join(format!("row{r}.pgm")), g, 0.0, 1.0)?;
    }
    io::write_pgm(a.out.join("original.pgm"), &spec.values, 0.0, 1.0)?;
    Ok(())
}

fn pick_line(ds: &Dataset, line_id: Option<u32>) -> Result<u32> {
    let lines = ds.lines();
    match line_id {
        Some(l) if lines.contains(&l) => Ok(l),
        Some(l) => Err(Error::Config(format!("dataset has no line {l}; lines are {lines:?}"))),
        None => lines.first().copied().ok_or_else(|| Error::Format("dataset has no entries".into())),
    }
}

fn line_gathers(ds: &Dataset, line: u32) -> Result<std::collections::BTreeMap<usize, crate::spectrum::CmpGather>> {
    ds.line_entries(line).into_iter().map(|i| Ok((i, ds.gather(i)?))).collect()
}

fn sgs_cmd(a: SgsArgs) -> Result<()> {
    let ds = read_dataset(&a.line)?;
    let line = pick_line(&ds, a.line_id)?;
    let i = ds
        .find(line, a.cdp)
        .ok_or_else(|| Error::Config(format!("line {line} has no cdp {}", a.cdp)))?;
    let reference = match &a.reference {
        Some(p) => Some(io::read_curve(p)?),
        None => reference_curve(&ds)?,
    };
    let pack = entry_pack(&ds, &line_gathers(&ds, line)?, i, reference.as_ref(), &a.sgs.settings())?;
    write_pack(&a.out, &pack)
}

fn history_path(out: &Path) -> PathBuf {
    out.with_extension("loss.csv")
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    let init = match &a.init {
        Some(p) => {
            let pre = Mifn::<f32>::load(p)?;
            if a.variant.any() && pre.config.variant != a.variant.variant() {
                return Err(Error::Config(format!(
                    "--init weights are {:?}, flags ask for {:?}",
                    pre.config.variant,
                    a.variant.variant()
                )));
            }
            Some((pre.config, pre.state()))
        }
        None => None,
    };
    let net_config = match &init {
        Some((cfg, _)) => *cfg,
        None => a.net.config(a.variant.variant()),
    };
    let outcome = train_dataset(
        &ds,
        net_config,
        &a.optim.config(),
        &a.sgs.settings(),
        init.as_ref().map(|(_, s)| s.as_slice()),
    )?;
    outcome.net.save(&a.out)?;
    write_history(a.history.clone().unwrap_or_else(|| history_path(&a.out)), &outcome.history)?;
    info!(
        "best validation bce {:.5} at iteration {} of {}",
        outcome.best_val, outcome.best_iter, outcome.iterations
    );
    Ok(())
}

fn check_variant(net: &Mifn<f32>, v: &VariantArgs) -> Result<()> {
    if v.any() && net.config.variant != v.variant() {
        return Err(Error::Config(format!(
            "model was trained as {:?}, flags ask for {:?}",
            net.config.variant,
            v.variant()
        )));
    }
    Ok(())
}

fn entry_stem(ds: &Dataset, i: usize) -> String {
    let e = ds.entry(i);
    format!("L{:03}_C{:04}", e.line, e.cdp)
}

fn pick_cmd(a: PickArgs) -> Result<()> {
    let net = Mifn::<f32>::load(&a.model)?;
    check_variant(&net, &a.variant)?;
    let cfg = a.pick.config();
    if let Some(spec_path) = &a.spec {
        let spec = io::read_spectrum(spec_path)?;
        let pack = match (&a.sgs, net.config.variant.uses_sgs()) {
            (Some(p), true) => Some(read_pack(p)?),
            (None, true) => return Err(Error::Config("this model needs --sgs".into())),
            (_, false) => None,
        };
        let sample = make_sample(&spec, pack.as_ref(), None, None, (net.config.height, net.config.width))?;
        let probs = predict(&net, std::slice::from_ref(&sample), 1)?.remove(0);
        let seg = probs.resized(spec.taxis.n_t, spec.vaxis.n_v);
        if let Some(out) = &a.out {
            io::write_grid(out, &seg)?;
        }
        if let Some(c) = &a.curve {
            io::write_curve(c, &pick_map(&probs, &spec.taxis, &spec.vaxis, &cfg)?)?;
        }
        return Ok(());
    }
    let data = a.data.as_ref().expect("clap requires --spec or --data");
    let out = a
        .curves
        .as_ref()
        .ok_or_else(|| Error::Config("--data needs --curves for its output".into()))?;
    let ds = read_dataset(data)?;
    let indices: Vec<usize> = match a.split {
        Some(s) => ds.split_entries(s),
        None => (0..ds.len()).collect(),
    };
    let reference = reference_curve(&ds)?;
    let picks = pick_entries(&ds, &net, &indices, reference.as_ref(), &a.sgs_opts.settings(), &cfg)?;
    for ((&i, map), curve) in picks.indices.iter().zip(&picks.maps).zip(&picks.curves) {
        let stem = entry_stem(&ds, i);
        io::write_curve(out.join(format!("{stem}.csv")), curve)?;
        io::write_grid(out.join(format!("{stem}.seg.vpk")), &map.resized(ds.manifest.taxis.n_t, ds.manifest.vaxis.n_v))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct QcSummary {
    line: u32,
    cdps: usize,
    total_power: f64,
    truth_power: Option<f64>,
    power_ratio: Option<f64>,
    vmae_mps: Option<f64>,
}

fn qc_cmd(a: QcArgs) -> Result<()> {
    let ds = read_dataset(&a.line)?;
    let lines = match a.line_id {
        Some(l) => vec![pick_line(&ds, Some(l))?],
        None => ds.lines(),
    };
    let mut summaries = Vec::new();
    let mut metrics = csv::Writer::from_writer(Vec::new());
    metrics.write_record(["line", "cdp", "stack_power", "truth_power", "vmae_mps"])?;
    for line in lines {
        let idx = ds.line_entries(line);
        let gathers = idx.iter().map(|&i| ds.gather(i)).collect::<Result<Vec<_>>>()?;
        let curves = idx
            .iter()
            .map(|&i| io::read_curve(a.curves.join(format!("{}.csv", entry_stem(&ds, i)))))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<_> = gathers.iter().collect();
        let report = qc(&refs, &curves)?;
        let labels: Option<Vec<VelocityCurve>> = idx
            .iter()
            .map(|&i| ds.has_label(i).then(|| ds.label(i)))
            .collect::<Option<Result<Vec<_>>>>()
            .transpose()?;
        let truth = labels.as_ref().map(|l| qc(&refs, l)).transpose()?;
        let column_power = |g: &crate::grid::Grid2D, c: usize| g.column(c).iter().map(|v| (*v as f64).powi(2)).sum::<f64>();
        for (c, &i) in idx.iter().enumerate() {
            let own = column_power(&report.section, c);
            let truth_power = truth.as_ref().map(|t| column_power(&t.section, c));
            let err = labels.as_ref().map(|l| vmae(&curves[c], &l[c], &ds.manifest.taxis));
            metrics.write_record([
                line.to_string(),
                ds.entry(i).cdp.to_string(),
                own.to_string(),
                truth_power.map_or(String::new(), |p| p.to_string()),
                err.map_or(String::new(), |v| v.to_string()),
            ])?;
        }
        let vmae_mps = labels.as_ref().map(|l| {
            curves.iter().zip(l).map(|(c, m)| vmae(c, m, &ds.manifest.taxis)).sum::<f64>() / curves.len() as f64
        });
        io::write_pgm_auto(a.out.join(format!("L{line:03}_stack.pgm")), &report.section)?;
        io::write_grid(a.out.join(format!("L{line:03}_stack.vpk")), &report.section)?;
        if let Some(t) = &truth {
            io::write_pgm_auto(a.out.join(format!("L{line:03}_truth_stack.pgm")), &t.section)?;
        }
        let truth_power = truth.as_ref().map(|t| t.total_power());
        summaries.push(QcSummary {
            line,
            cdps: idx.len(),
            total_power: report.total_power(),
            power_ratio: truth_power.filter(|p| *p > 0.0).map(|p| report.total_power() / p),
            truth_power,
            vmae_mps,
        });
    }
    std::fs::create_dir_all(&a.out)?;
    let bytes = metrics.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    std::fs::write(a.out.join("metrics.csv"), bytes)?;
    io::write_json(a.out.join("summary.json"), &summaries)
}

fn velfield(a: VelfieldArgs) -> Result<()> {
    let ds = read_dataset(&a.data)?;
    let line = pick_line(&ds, a.line_id)?;
    let curves = ds
        .line_entries(line)
        .into_iter()
        .map(|i| io::read_curve(a.curves.join(format!("{}.csv", entry_stem(&ds, i)))))
        .collect::<Result<Vec<_>>>()?;
    let field = velocity_field(&curves, &ds.manifest.taxis)?;
    let (v0, v1) = (ds.manifest.vaxis.v_min as f32, ds.manifest.vaxis.v_max() as f32);
    io::write_grid(a.out.join(format!("L{line:03}_velocity.vpk")), &field)?;
    io::write_pgm(a.out.join(format!("L{line:03}_velocity.pgm")), &field, v0, v1)
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    let mut synth = SynthConfig::desk();
    synth.snr_db = Some(a.snr_db);
    synth.line.n_cdp = a.ncdp;
    let cfg = AblationConfig {
        synth,
        train_lines: a.train_lines,
        val_lines: a.val_lines,
        test_lines: a.test_lines,
        net: MifnConfig {
            height: a.height,
            width: a.width,
            depth: a.depth,
            base_channels: a.base,
            sgs_channels: a.sgs_channels,
            ..MifnConfig::default()
        },
        train: a.optim.config(),
        settings: SgsSettings::default(),
        pick: PickConfig::default(),
    };
    let rows = ablate(a.out.join("data"), &cfg)?;
    io::write_json(a.out.join("ablation.json"), &cfg)?;
    write_ablation(a.out.join("ablation.csv"), &rows)
}
