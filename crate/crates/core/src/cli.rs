//! Command-line interface. Every subcommand is a thin wrapper over library
//! calls.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::benchkit::{
    evaluate_run, load_manifest, render_csv, render_rows_csv, render_table, BenchmarkKind, CommandScorer, Metric,
    ScorerRegistry,
};
use crate::core_model::{ImagePlane, MaskKind, MaskPlane, PipelineConfig, Placement};
use crate::error::{Error, Result};
use crate::integrator::{load_model, read_triplet_manifest, save_model, IntegratorVariant, MlpProfile, TrainConfig};
use crate::pipeline::{compose_detailed, fallback_integrator, open_backbone, BackboneKind, CompositionJob};
use crate::service::{RunArtifacts, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "xcompose", version, about = "Training-free cross-domain image composition")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Composite a foreground object into a background.
    Compose(ComposeArgs),
    /// Train the feature integrator on a triplet manifest.
    TrainMlp(TrainArgs),
    /// Score a directory of results against a benchmark manifest.
    Eval(EvalArgs),
    /// Run the HTTP job service.
    Serve(ServeArgs),
    /// Print the default pipeline configuration as JSON.
    Presets,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    #[arg(long)]
    pub bg: PathBuf,
    #[arg(long)]
    pub fg: PathBuf,
    #[arg(long)]
    pub fg_mask: PathBuf,
    /// Rectangular destination mask; the placement defaults to fitting the
    /// foreground into it.
    #[arg(long)]
    pub bg_box: Option<PathBuf>,
    /// `x,y,scale` in background pixels.
    #[arg(long)]
    pub place: Option<String>,
    #[arg(long)]
    pub prompt: Option<String>,
    /// Inversion and reconstruction steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub inject_steps: Option<usize>,
    #[arg(long)]
    pub lambda_init: Option<f32>,
    #[arg(long)]
    pub lambda_diff: Option<f32>,
    #[arg(long)]
    pub dilation: Option<i64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "toy")]
    pub backbone: String,
    /// Trained integrator; the additive fallback is used otherwise.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub no_image_clip: bool,
    #[arg(long)]
    pub no_init_blend: bool,
    #[arg(long)]
    pub no_inversion: bool,
    #[arg(long)]
    pub full_diffusion: bool,
    /// Result image; the trace and blend preview are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub preview: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSONL triplet manifest.
    #[arg(long)]
    pub triplets: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub val_split: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Regress toward the residual `f_c + f_s - f_l` (default).
    #[arg(long, conflicts_with = "direct")]
    pub residual: bool,
    /// Regress toward `f_l` directly.
    #[arg(long)]
    pub direct: bool,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_model: PathBuf,
    /// Defaults to `<out-model>.loss.csv`.
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `<sample id>.png` results.
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long, default_value = "ours")]
    pub method: String,
    /// External scorer as `metric=program`; the program gets image paths
    /// (and the prompt for CLIP-T) and prints one number.
    #[arg(long = "scorer")]
    pub scorers: Vec<String>,
    /// Warn when the manifest size differs from `baseline` (95) or
    /// `extended` (367).
    #[arg(long)]
    pub expect: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub rows_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Overrides XCOMPOSE_WORKERS.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Overrides XCOMPOSE_QUEUE_LIMIT.
    #[arg(long)]
    pub queue_limit: Option<usize>,
    /// Overrides XCOMPOSE_DATA_DIR.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, default_value = "toy")]
    pub backbone: String,
    /// Overrides XCOMPOSE_MODEL.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

/// 2 for invalid arguments or inputs, 3 when the backbone cannot be opened,
/// 1 for anything else.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::InvalidArgument(_) | Error::RejectedInput(_) | Error::ModelFormat(_) => 2,
        Error::BackboneUnavailable(_) => 3,
        _ => 1,
    }
}

fn input<T>(path: &Path, what: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ (Error::InvalidArgument(_) | Error::RejectedInput(_)) => e,
        other => Error::invalid(format!("{what} {}: {other}", path.display())),
    })
}

impl ComposeArgs {
    pub fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig {
            seed: self.seed,
            ..PipelineConfig::default()
        };
        if let Some(s) = self.steps {
            cfg.steps_invert = s;
            cfg.steps_denoise = s;
        }
        if let Some(k) = self.inject_steps {
            cfg.inject_steps = k;
        }
        if let Some(l) = self.lambda_init {
            cfg.lambda_init = l;
        }
        if let Some(l) = self.lambda_diff {
            cfg.lambda_diffusion = l;
        }
        if let Some(r) = self.dilation {
            cfg.dilation_radius_px = r;
        }
        cfg.ablation.use_image_clip = !self.no_image_clip;
        cfg.ablation.use_init_blend = !self.no_init_blend;
        cfg.ablation.use_inversion = !self.no_inversion;
        cfg.ablation.full_diffusion = self.full_diffusion;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads the inputs into a job.
    pub fn job(&self) -> Result<CompositionJob> {
        let bg = input(&self.bg, "background", ImagePlane::load(&self.bg))?;
        let fg = input(&self.fg, "foreground", ImagePlane::load(&self.fg))?;
        let fg_mask = input(&self.fg_mask, "foreground mask", MaskPlane::load(&self.fg_mask, MaskKind::FgObject))?;
        let bg_box = self
            .bg_box
            .as_ref()
            .map(|p| input(p, "background box", MaskPlane::load(p, MaskKind::BgBox)))
            .transpose()?;
        let placement = match (&self.place, &bg_box) {
            (Some(p), _) => Placement::parse(p)?,
            (None, Some(b)) => {
                let rect = b.bounding_box().ok_or_else(|| Error::invalid("background box mask is empty"))?;
                Placement::fit_to_box(fg.dims(), rect)?
            }
            (None, None) => Placement::default(),
        };
        let mut job = CompositionJob::new(bg, fg, fg_mask, placement).with_cfg(self.config()?);
        if let Some(b) = bg_box {
            job = job.with_bg_box(b);
        }
        if let Some(p) = &self.prompt {
            job = job.with_prompt(p.clone());
        }
        Ok(job)
    }

    pub fn artifacts(&self) -> RunArtifacts {
        let mut a = RunArtifacts::beside(&self.out);
        if let Some(t) = &self.trace {
            a.trace = t.clone();
        }
        if let Some(p) = &self.preview {
            a.preview = p.clone();
        }
        a
    }
}

pub fn run_compose(args: &ComposeArgs) -> Result<RunArtifacts> {
    let kind: BackboneKind = args.backbone.parse()?;
    let job = args.job()?;
    let mut backbone = open_backbone(kind, 0)?;
    let model = match &args.model {
        Some(p) => input(p, "model", load_model(p))?,
        None => fallback_integrator(backbone.profile())?,
    };
    let output = compose_detailed(&job, backbone.as_mut(), &model)?;
    let artifacts = args.artifacts();
    artifacts.write(&output)?;
    println!(
        "wrote {} ({} denoiser calls, trace {}, preview {})",
        artifacts.result.display(),
        output.trace.denoiser_calls(),
        artifacts.trace.display(),
        artifacts.preview.display()
    );
    Ok(artifacts)
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            patience: self.patience,
            val_fraction: self.val_split,
            variant: if self.direct { IntegratorVariant::Direct } else { IntegratorVariant::Residual },
            seed: self.seed,
            max_steps: self.max_steps,
            ..TrainConfig::default()
        }
    }

    pub fn loss_curve_path(&self) -> PathBuf {
        self.loss_curve.clone().unwrap_or_else(|| {
            let mut s = self.out_model.as_os_str().to_owned();
            s.push(".loss.csv");
            PathBuf::from(s)
        })
    }
}

pub fn run_train(args: &TrainArgs) -> Result<()> {
    let records = input(&args.triplets, "triplet manifest", read_triplet_manifest(&args.triplets))?;
    if records.is_empty() {
        return Err(Error::invalid("triplet manifest is empty"));
    }
    let triplets: Vec<_> = records.into_iter().map(|r| r.triplet).collect();
    let (tokens, dim) = triplets[0].f_c.shape();
    let mut profile = MlpProfile::for_shape(tokens, dim)?;
    if let Some(h) = args.hidden {
        profile = MlpProfile::new(tokens, dim, h, profile.activation)?;
    }
    let cfg = args.config();
    let report = match crate::integrator::train_integrator(&triplets, profile, &cfg) {
        Err(Error::TrainingDiverged { epoch, last_stable }) => {
            save_model(&last_stable, &args.out_model)?;
            return Err(Error::Numerical {
                context: format!("training epoch {epoch}"),
                detail: format!("loss diverged; last stable weights saved to {}", args.out_model.display()),
            });
        }
        other => other?,
    };
    save_model(&report.model, &args.out_model)?;
    let curve = args.loss_curve_path();
    report.write_loss_curve(&curve)?;
    println!(
        "best epoch {} of {}; train loss {:.6e}; val loss {}; model {}; loss curve {}",
        report.best_epoch,
        report.history.len(),
        report.final_train_loss,
        report.final_val_loss.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "n/a".into()),
        args.out_model.display(),
        curve.display()
    );
    Ok(())
}

fn parse_scorer(spec: &str) -> Result<CommandScorer> {
    let (metric, program) = spec
        .split_once('=')
        .ok_or_else(|| Error::invalid(format!("scorer {spec:?} is not metric=program")))?;
    let metric = Metric::parse(metric.trim())?;
    if Metric::POOLED.contains(&metric) {
        return Err(Error::invalid(format!("{} is a pool metric and cannot use a command scorer", metric.name())));
    }
    let mut parts = program.split_whitespace();
    let program = parts.next().ok_or_else(|| Error::invalid(format!("scorer {spec:?} has no program")))?;
    Ok(CommandScorer {
        metric,
        program: program.into(),
        args: parts.map(String::from).collect(),
    })
}

pub fn run_eval(args: &EvalArgs) -> Result<()> {
    let manifest = input(&args.manifest, "manifest", load_manifest(&args.manifest))?;
    for e in &manifest.errors {
        log::warn!("manifest line {}: {}", e.line, e.message);
    }
    if let Some(kind) = &args.expect {
        let kind = match kind.as_str() {
            "baseline" => BenchmarkKind::Baseline,
            "extended" => BenchmarkKind::Extended,
            other => return Err(Error::invalid(format!("unknown benchmark {other:?}"))),
        };
        manifest.check_count(kind);
    }
    let mut registry = ScorerRegistry::psnr_only();
    for s in &args.scorers {
        registry = registry.with(parse_scorer(s)?);
    }
    let report = evaluate_run(&args.results, &manifest, &registry, &args.method)?;
    print!("{}", render_table(std::slice::from_ref(&report)));
    println!(
        "{} scored, {} missing, {} failed, {} malformed manifest rows; config {}",
        report.rows.len(),
        report.missing.len(),
        report.failed.len(),
        manifest.errors.len(),
        &report.config_hash[..12]
    );
    if let Some(p) = &args.out {
        report.save_json(p)?;
    }
    if let Some(p) = &args.csv {
        std::fs::write(p, render_csv(std::slice::from_ref(&report)))?;
    }
    if let Some(p) = &args.rows_csv {
        std::fs::write(p, render_rows_csv(&report))?;
    }
    Ok(())
}

pub fn serve_config(args: &ServeArgs) -> Result<ServiceConfig> {
    let mut cfg = ServiceConfig::from_env()?;
    cfg.backbone = args.backbone.parse()?;
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(q) = args.queue_limit {
        cfg.queue_limit = q;
    }
    if let Some(d) = &args.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(m) = &args.model {
        cfg.model_path = Some(m.clone());
    }
    Ok(cfg)
}

fn run_serve(args: &ServeArgs) -> Result<()> {
    let cfg = serve_config(args)?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(crate::service::serve(cfg, args.addr))
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Compose(a) => run_compose(a).map(|_| ()),
        Command::TrainMlp(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Serve(a) => run_serve(a),
        Command::Presets => {
            println!("{}", serde_json::to_string_pretty(&PipelineConfig::default())?);
            Ok(())
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
