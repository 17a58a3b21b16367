//! `lsk`: plan search, cost reports, forward passes with mask export,
//! gradient checks, toy training and selection analysis.
//!
//! Exit codes: 0 success, 1 domain failure, 2 usage error.

use std::fs::{self, File};
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use lsk_core::analysis::{analyze, load_dataset, mean_delta, write_diff_csv, write_mask_dir, write_rc_csv};
use lsk_core::gradcheck::{self, Fault, TOLERANCE};
use lsk_core::io::{collect_weights, read_backbone_file, read_image, read_tensor, write_tensor_file, write_weights_file};
use lsk_core::train::{toy_train, ToyConfig};
use lsk_core::{
    cost_backbone, cost_plan, enumerate_plans, Backbone, BackboneConfig, CostReport, DecompositionPlan, PoolingSet,
    SelectionMode, Tensor4, Variant,
};

/// File names written by `analyze`.
const RC_CSV: &str = "rc.csv";
const DIFF_CSV: &str = "selection_diff.csv";

#[derive(Parser)]
#[command(name = "lsk", version, about = "Large selective kernel backbone toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List decomposition plans reaching a receptive field, cheapest first.
    Plan(PlanArgs),
    /// Check one decomposition plan and print its receptive-field trace.
    Validate(ValidateArgs),
    /// Parameter and compute report for a backbone variant.
    Count(CountArgs),
    /// Run the backbone on one input and export features and masks.
    Forward(ForwardArgs),
    /// Finite-difference checks of the backward passes.
    Gradcheck(GradcheckArgs),
    /// Fit an LSK module and a linear head to a few random targets.
    TrainToy(TrainArgs),
    /// Compute R_c and selection differences from exported masks.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Kv,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    target_rf: usize,
    #[arg(long, default_value_t = 3)]
    max_stages: usize,
    /// Largest kernel size considered [default: the target RF]
    #[arg(long)]
    max_k: Option<usize>,
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Spatial size used for the MAC columns.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct ValidateArgs {
    /// Plan such as `(5,1)->(7,3)` or `5,1;7,3`.
    plan: String,
    #[arg(long, default_value_t = 64)]
    channels: usize,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "T")]
    variant: Variant,
    /// Four comma-separated FFN expansion ratios.
    #[arg(long, value_delimiter = ',')]
    ffn_ratios: Option<Vec<f64>>,
    #[arg(long)]
    plan: Option<DecompositionPlan>,
    #[arg(long, default_value = "spatial")]
    mode: SelectionMode,
    #[arg(long, default_value = "avg,max")]
    pool: PoolingSet,
}

impl ModelArgs {
    fn config(&self) -> Result<BackboneConfig> {
        let mut cfg = BackboneConfig::preset(self.variant);
        if let Some(r) = &self.ffn_ratios {
            if r.len() != cfg.ffn_ratios.len() || r.iter().any(|&v| !(v > 0.0)) {
                return Err(usage(format!("--ffn-ratios needs four positive values, got {r:?}")));
            }
            cfg.ffn_ratios.copy_from_slice(r);
        }
        if let Some(p) = &self.plan {
            cfg.plan = p.clone();
        }
        cfg.mode = self.mode;
        cfg.pooling = self.pool;
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct CountArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1024)]
    h: usize,
    #[arg(long, default_value_t = 1024)]
    w: usize,
    /// Breakdown depth below the backbone total.
    #[arg(long, default_value_t = 2)]
    depth: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct ForwardArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// LSKW weight file, or `random`.
    #[arg(long)]
    weights: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// LSKT tensor or binary PGM/PPM image.
    #[arg(long)]
    input: PathBuf,
    /// Directory for per-block masks (and features unless `--out` is given).
    #[arg(long)]
    export_masks: Option<PathBuf>,
    /// Directory for stage features.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the weights that were used, as LSKW.
    #[arg(long)]
    save_weights: Option<PathBuf>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("which").required(true).args(["op", "all"])))]
struct GradcheckArgs {
    #[arg(long)]
    op: Option<String>,
    #[arg(long)]
    all: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Perturb the first backward result by this relative amount.
    #[arg(long, hide = true)]
    inject_fault: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = ToyConfig::default().steps)]
    steps: usize,
    #[arg(long, default_value_t = ToyConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = ToyConfig::default().seed)]
    seed: u64,
    /// Print the loss every this many steps.
    #[arg(long, default_value_t = 50)]
    every: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// One sub-directory of masks per image.
    #[arg(long)]
    masks: PathBuf,
    /// `<image>.txt` annotation files.
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Bad flag values detected after parsing; exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Plan(a) => plan(a),
        Command::Validate(a) => validate(a),
        Command::Count(a) => count(a),
        Command::Forward(a) => forward(a),
        Command::Gradcheck(a) => run_gradcheck(a),
        Command::TrainToy(a) => train(a),
        Command::Analyze(a) => run_analyze(a),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("LSK_THREADS") else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| usage(format!("LSK_THREADS must be a non-negative integer, got {raw:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn rf_trace(p: &DecompositionPlan) -> String {
    p.rf_per_stage().iter().map(usize::to_string).collect::<Vec<_>>().join("->")
}

fn plan(a: PlanArgs) -> Result<ExitCode> {
    let max_k = a.max_k.unwrap_or(a.target_rf);
    let plans = enumerate_plans(a.target_rf, a.max_stages, max_k);
    if plans.is_empty() {
        bail!(
            "no plan reaches receptive field {} with at most {} stages and kernels up to {}",
            a.target_rf,
            a.max_stages,
            max_k
        );
    }
    let c = lsk_core::plan::RANKING_CHANNELS;
    if let Format::Text = a.format {
        println!(
            "{} plan(s) for RF {}; costs of the LSK module at c={c}, branch width {}, {}x{}",
            plans.len(),
            a.target_rf,
            c / 2,
            a.size,
            a.size
        );
        println!("{:>4}  {:<28} {:<16} {:>10} {:>14} {:>14}", "rank", "plan", "rf", "params", "macs", "flops");
    }
    for (i, p) in plans.iter().take(a.top).enumerate() {
        let r = cost_plan(p, c, c / 2, a.size, a.size);
        match a.format {
            Format::Text => println!(
                "{:>4}  {:<28} {:<16} {:>10} {:>14} {:>14}",
                i + 1,
                p.to_string(),
                rf_trace(p),
                r.params,
                r.macs,
                r.flops
            ),
            Format::Kv => println!(
                "rank={} plan={} rf={} params={} macs={} flops={}",
                i + 1,
                p,
                rf_trace(p),
                r.params,
                r.macs,
                r.flops
            ),
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(a: ValidateArgs) -> Result<ExitCode> {
    let p: DecompositionPlan = a.plan.parse()?;
    let r = cost_plan(&p, a.channels, a.channels / 2, 1, 1);
    println!("plan {p}: valid");
    println!("receptive field per stage: {}", rf_trace(&p));
    println!("params at c={}: {}", a.channels, r.params);
    Ok(ExitCode::SUCCESS)
}

fn print_report(r: &CostReport, depth: usize, format: Format) {
    match format {
        Format::Text => print!("{}", r.to_text(depth)),
        Format::Kv => print!("{}", r.to_kv(depth)),
    }
}

fn count(a: CountArgs) -> Result<ExitCode> {
    let cfg = a.model.config()?;
    if a.h == 0 || a.w == 0 {
        return Err(usage("--h and --w must be positive"));
    }
    let r = cost_backbone(&cfg, a.h, a.w);
    if let Format::Text = a.format {
        println!("LSKNet-{} at {}x{}", a.model.variant, a.h, a.w);
    }
    print_report(&r, a.depth, a.format);
    Ok(ExitCode::SUCCESS)
}

fn read_input(path: &Path) -> Result<Tensor4<f32>> {
    let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut magic = [0u8; 2];
    r.read_exact(&mut magic)
        .with_context(|| format!("{}: file too short", path.display()))?;
    let mut r = (&magic[..]).chain(r);
    let t = if magic == *b"P5" || magic == *b"P6" {
        read_image(&mut r)
    } else {
        read_tensor(&mut r)
    };
    t.with_context(|| format!("reading {}", path.display()))
}

fn forward(a: ForwardArgs) -> Result<ExitCode> {
    let cfg = a.model.config()?;
    let net = if a.weights == "random" {
        Backbone::<f32>::init(cfg, a.seed)?
    } else {
        read_backbone_file(&a.weights, cfg).with_context(|| format!("loading weights {}", a.weights))?
    };
    let x = read_input(&a.input)?;
    let out = net.forward(&x)?;

    if let Some(path) = &a.save_weights {
        write_weights_file(path, &collect_weights(&net))?;
    }
    let feature_dir = a.out.as_ref().or(a.export_masks.as_ref());
    if let Some(dir) = feature_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, f) in out.features.iter().enumerate() {
            write_tensor_file(dir.join(format!("stage{}.lskt", i + 1)), f)?;
            println!("stage{} {}", i + 1, f.shape());
        }
    }
    match &a.export_masks {
        Some(dir) if !out.record.is_empty() => {
            let files = write_mask_dir(dir, &out.record)?;
            println!("{} mask file(s) from {} block(s) in {}", files.len() - 1, out.record.len(), dir.display());
        }
        Some(_) => println!("selection mode {} produces no masks", a.model.mode),
        None => {}
    }
    if feature_dir.is_none() {
        for (i, f) in out.features.iter().enumerate() {
            println!("stage{} {} sum {:.6e}", i + 1, f.shape(), f.sum());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let fault = a.inject_fault.map(Fault::ScaleFirst);
    let results = match &a.op {
        Some(op) => vec![gradcheck::run_op(op, a.seed, fault).map_err(|e| usage(e.to_string()))?],
        None => gradcheck::run_all(a.seed, fault),
    };
    let mut failed = 0;
    for r in &results {
        println!("{r}");
        if !r.passed() {
            failed += 1;
            eprintln!("FAILED {}: relative error {:.3e} at {}", r.op, r.max_rel_err, r.worst);
        }
    }
    if failed > 0 {
        eprintln!("{failed} of {} check(s) exceeded {TOLERANCE:e}", results.len());
        return Ok(ExitCode::FAILURE);
    }
    println!("all {} check(s) below {TOLERANCE:e}", results.len());
    Ok(ExitCode::SUCCESS)
}

const TRAIN_TARGET: f64 = 1e-2;

fn train(a: TrainArgs) -> Result<ExitCode> {
    let cfg = ToyConfig {
        steps: a.steps,
        lr: a.lr,
        seed: a.seed,
        ..ToyConfig::default()
    };
    let report = toy_train(&cfg)?;
    let every = a.every.max(1);
    for (step, loss) in report.losses.iter().enumerate() {
        if step % every == 0 || step == report.losses.len() - 1 {
            println!("step {step:>5} loss {loss:.6e}");
        }
    }
    let last = report.final_loss();
    if last < TRAIN_TARGET {
        println!("final loss {last:.3e} < {TRAIN_TARGET:e}");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("final loss {last:.3e} did not reach {TRAIN_TARGET:e}");
        Ok(ExitCode::FAILURE)
    }
}

fn run_analyze(a: AnalyzeArgs) -> Result<ExitCode> {
    let data = load_dataset(&a.masks, &a.annotations)?;
    for name in &data.unmatched_annotations {
        eprintln!("warning: annotations for {name} have no mask directory");
    }
    if data.malformed_lines > 0 || data.degenerate_boxes > 0 {
        eprintln!(
            "warning: skipped {} malformed line(s) and {} zero-area box(es)",
            data.malformed_lines, data.degenerate_boxes
        );
    }
    let report = analyze(&data.samples)?;
    for n in &report.notices {
        eprintln!("note: {n}");
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_rc_csv(File::create(a.out.join(RC_CSV))?, &report.stats)?;
    write_diff_csv(File::create(a.out.join(DIFF_CSV))?, &report.diffs)?;

    println!("{} image(s), {} categor(ies)", data.samples.len(), report.stats.len());
    for s in &report.stats {
        let diffs: Vec<_> = report.diffs.iter().filter(|d| d.category == s.category).cloned().collect();
        println!(
            "{:<24} r_c {:.6e} (norm {:.3})  mean delta {:+.4}  images {}",
            s.category,
            s.r_c_raw,
            s.r_c_normalized,
            mean_delta(&diffs),
            s.image_count
        );
    }
    println!("wrote {} and {}", a.out.join(RC_CSV).display(), a.out.join(DIFF_CSV).display());
    Ok(ExitCode::SUCCESS)
}
