//! Command-line front end: upsample files, run gradient checks, benchmark,
//! dump offsets and train the toy tasks.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lda_aqu::gradcheck::{self, CheckOptions, InstanceSpec};
use lda_aqu::trainer::{self, TaskKind, ToyTask, TrainOptions};
use lda_aqu::upsamplers::{self, QueryUpsample, ValueProjection};
use lda_aqu::{
    flops, init_weights, io, InitScheme, LdaAquWeights, PaddingMode, ProjectionMode, Rng, Shape,
    Tensor, UpsampleConfig, UpsamplerKind,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Threshold for the gradient check suite.
pub const GRADCHECK_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "lda-aqu",
    version,
    about = "Local deformable attention upsampling"
)]
pub struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Upsample an image (PGM/PPM) or tensor file.
    Upsample {
        input: PathBuf,
        #[command(flatten)]
        config: CliConfig,
    },
    /// Check every analytic gradient against central differences.
    Gradcheck {
        #[command(flatten)]
        config: CliConfig,
        /// Scale analytic gradients by 1.01 (harness self-test).
        #[arg(long, hide = true)]
        corrupt_backward: bool,
    },
    /// Time the deformable forward pass over a size sweep.
    Bench {
        #[command(flatten)]
        config: CliConfig,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, value_delimiter = ',', default_values_t = [16, 32, 64, 128])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
    /// Write stencil points, offsets and attention weights as CSV.
    Offsets {
        input: PathBuf,
        #[command(flatten)]
        config: CliConfig,
        /// Keep queries whose coordinates are multiples of this.
        #[arg(long, default_value_t = 8)]
        stride: usize,
    },
    /// Train on a toy regression task; writes the loss trace and weights.
    TrainToy {
        #[command(flatten)]
        config: CliConfig,
        #[arg(long, value_enum, default_value_t = TaskArg::Bilinear)]
        task: TaskArg,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = trainer::DEFAULT_LR)]
        lr: f64,
        #[command(flatten)]
        toy: ToyArgs,
        /// Where to save the trained weights (default: `<out>.ldaw`).
        #[arg(long)]
        save_weights: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Nearest,
    Bilinear,
    LaAqu,
    LdaAqu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProjArg {
    Paper,
    AlignCorners,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PaddingArg {
    Zeros,
    Border,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QueryUpArg {
    Bilinear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ValueArg {
    Identity,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Bilinear,
    Shifted,
}

/// Flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct CliConfig {
    #[arg(long, default_value_t = 2.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 3)]
    pub ku: usize,
    #[arg(long, default_value_t = 3)]
    pub ke: usize,
    #[arg(long, default_value_t = 11.0)]
    pub theta: f64,
    #[arg(long, default_value_t = 2)]
    pub groups: usize,
    #[arg(long, default_value_t = 4)]
    pub reduction: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::LdaAqu)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = ProjArg::AlignCorners)]
    pub proj: ProjArg,
    #[arg(long, value_enum, default_value_t = PaddingArg::Zeros)]
    pub padding: PaddingArg,
    #[arg(long = "query-up", value_enum, default_value_t = QueryUpArg::Bilinear)]
    pub query_up: QueryUpArg,
    /// Value projection.
    #[arg(long, value_enum, default_value_t = ValueArg::Identity)]
    pub value: ValueArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weights file; drawn from `--seed` when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Toy task size.
#[derive(Debug, Clone, Copy, Args)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long = "toy-channels", default_value_t = 8)]
    pub channels: usize,
    #[arg(long, default_value_t = 8)]
    pub size: usize,
}

impl CliConfig {
    pub fn upsample_config(&self) -> UpsampleConfig {
        UpsampleConfig {
            alpha: self.scale,
            k_u: self.ku,
            k_e: self.ke,
            theta: self.theta,
            groups: self.groups,
            reduction: self.reduction,
            projection_mode: match self.proj {
                ProjArg::Paper => ProjectionMode::PaperExact,
                ProjArg::AlignCorners => ProjectionMode::AlignCorners,
            },
            padding: match self.padding {
                PaddingArg::Zeros => PaddingMode::Zeros,
                PaddingArg::Border => PaddingMode::Border,
            },
            query_upsample: match self.query_up {
                QueryUpArg::Bilinear => QueryUpsample::Bilinear,
                QueryUpArg::Nearest => QueryUpsample::Nearest,
            },
            value_projection: match self.value {
                ValueArg::Identity => ValueProjection::Identity,
                ValueArg::Learned => ValueProjection::Learned,
            },
            ..UpsampleConfig::default()
        }
    }

    pub fn kind(&self) -> UpsamplerKind {
        match self.mode {
            ModeArg::Nearest => UpsamplerKind::Nearest,
            ModeArg::Bilinear => UpsamplerKind::Bilinear,
            ModeArg::LaAqu => UpsamplerKind::LaAqu,
            ModeArg::LdaAqu => UpsamplerKind::LdaAqu,
        }
    }

    fn out(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("--out is required".into()))
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable input, invalid configuration.
    Usage(String),
    /// A check or training run failed.
    Failure(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Failure(m) => f.write_str(m),
        }
    }
}

impl From<lda_aqu::Error> for CliError {
    fn from(e: lda_aqu::Error) -> Self {
        match e {
            lda_aqu::Error::Divergence { .. } => CliError::Failure(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code. Output goes to `stdout`; errors to standard error.
pub fn run<I, T>(args: I, stdout: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| dispatch(cli.command, stdout)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command, out: &mut (dyn Write + Send)) -> CliResult {
    match command {
        Command::Upsample { input, config } => cmd_upsample(&input, &config, out),
        Command::Gradcheck {
            config,
            corrupt_backward,
        } => cmd_gradcheck(&config, corrupt_backward, out),
        Command::Bench {
            config,
            channels,
            sizes,
            repeats,
        } => cmd_bench(&config, channels, &sizes, repeats, out),
        Command::Offsets {
            input,
            config,
            stride,
        } => cmd_offsets(&input, &config, stride, out),
        Command::TrainToy {
            config,
            task,
            steps,
            lr,
            toy,
            save_weights,
        } => cmd_train_toy(&config, task, steps, lr, toy, save_weights.as_deref(), out),
    }
}

fn say(out: &mut (dyn Write + Send), text: impl AsRef<str>) -> CliResult {
    writeln!(out, "{}", text.as_ref()).map_err(|e| CliError::Usage(format!("stdout: {e}")))
}

/// Input files are tensors (`LDAT` magic) or binary PGM/PPM images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    Tensor,
    Image,
}

pub fn read_input(path: &Path) -> CliResult<(Tensor, InputKind)> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if bytes.starts_with(io::TENSOR_MAGIC) {
        Ok((io::decode_tensor(&bytes)?, InputKind::Tensor))
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        Ok((io::decode_image(&bytes)?, InputKind::Image))
    } else {
        Err(CliError::Usage(format!(
            "{}: not a tensor file or binary PGM/PPM image",
            path.display()
        )))
    }
}

/// The operator needs `C` divisible by `reduction * groups`; three-channel
/// images cannot meet the defaults, so both are clamped to 1.
fn fit_config_to_image(config: &mut UpsampleConfig, out: &mut (dyn Write + Send)) -> CliResult {
    if config.reduction != 1 || config.groups != 1 {
        say(
            out,
            format!(
                "notice: image input, clamping reduction {} -> 1 and groups {} -> 1",
                config.reduction, config.groups
            ),
        )?;
        config.reduction = 1;
        config.groups = 1;
    }
    Ok(())
}

/// Loads `--weights` (checked against `config`) or draws them from `--seed`.
pub fn resolve_weights(
    cli: &CliConfig,
    config: &UpsampleConfig,
    channels: usize,
) -> CliResult<LdaAquWeights> {
    let weights = match &cli.weights {
        Some(path) => io::load_weights(path, config)?,
        None => init_weights(
            config,
            channels,
            &mut Rng::seed(cli.seed),
            InitScheme::XavierUniform,
        )?,
    };
    if weights.channels != channels {
        return Err(CliError::Usage(format!(
            "weights are for {} channels, input has {channels}",
            weights.channels
        )));
    }
    Ok(weights)
}

fn flops_lines(config: &UpsampleConfig, s: Shape) -> String {
    let f = flops(config, s.h, s.w, s.c);
    format!(
        "model FLOPs (per image, query upsampling excluded): projection {} interaction {} offset_prediction {} total {}",
        f.projection, f.interaction, f.offset_prediction, f.total
    )
}

fn prepare(
    input: &Path,
    cli: &CliConfig,
    out: &mut (dyn Write + Send),
) -> CliResult<(Tensor, InputKind, UpsampleConfig)> {
    let (x, kind) = read_input(input)?;
    let mut config = cli.upsample_config();
    let attention = matches!(cli.mode, ModeArg::LaAqu | ModeArg::LdaAqu);
    if kind == InputKind::Image && attention {
        fit_config_to_image(&mut config, out)?;
    }
    if attention {
        config.validate_for(x.shape().c)?;
    } else {
        config.validate()?;
    }
    Ok((x, kind, config))
}

pub fn cmd_upsample(input: &Path, cli: &CliConfig, out: &mut (dyn Write + Send)) -> CliResult {
    let dest = cli.out()?;
    let (x, kind, config) = prepare(input, cli, out)?;
    let weights = match cli.mode {
        ModeArg::LaAqu | ModeArg::LdaAqu => Some(resolve_weights(cli, &config, x.shape().c)?),
        _ => None,
    };
    let y = upsamplers::upsample(cli.kind(), &x, weights.as_ref(), &config)?;
    match kind {
        InputKind::Image => io::write_image(dest, &y)?,
        InputKind::Tensor => io::write_tensor(dest, &y.clone().with_dtype(x.dtype()))?,
    }
    say(
        out,
        format!("{:?}: {} -> {}", cli.mode, x.shape(), y.shape()),
    )?;
    say(out, flops_lines(&config, x.shape()))?;
    Ok(())
}

pub fn cmd_gradcheck(
    cli: &CliConfig,
    corrupt_backward: bool,
    out: &mut (dyn Write + Send),
) -> CliResult {
    let config = cli.upsample_config();
    config.validate()?;
    let spec = InstanceSpec::for_config(config, cli.seed);
    let opts = CheckOptions { corrupt_backward };
    let reports = gradcheck::check_all(&spec, GRADCHECK_THRESHOLD, opts)?;
    say(out, io::grad_report_table(&reports).trim_end())?;
    if let Some(path) = &cli.out {
        io::write_grad_report(path, &reports)?;
    }
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| {
            r.params
                .iter()
                .filter(|p| !p.passed)
                .map(move |p| format!("{}.{} ({:.3e})", r.op, p.name, p.max_rel_error))
        })
        .collect();
    if failed.is_empty() {
        say(
            out,
            format!("all {} ops pass at {GRADCHECK_THRESHOLD:e}", reports.len()),
        )
    } else {
        Err(CliError::Failure(format!(
            "gradient check failed: {}",
            failed.join(", ")
        )))
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub side: usize,
    pub tokens: usize,
    pub flops: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub rows: Vec<BenchRow>,
    pub flops_exponent: f64,
    pub time_exponent: f64,
}

/// Times the deformable forward on one thread, keeping the fastest of
/// `repeats` runs per size.
pub fn bench_sweep(
    config: &UpsampleConfig,
    channels: usize,
    sizes: &[usize],
    repeats: usize,
    seed: u64,
) -> CliResult<BenchResult> {
    config.validate_for(channels)?;
    if sizes.len() < 2 || repeats == 0 {
        return Err(CliError::Usage(
            "bench needs at least two sizes and one repeat".into(),
        ));
    }
    let mut rng = Rng::seed(seed);
    let weights = init_weights(
        config,
        channels,
        &mut rng,
        InitScheme::RandomOffsets { bound: 0.05 },
    )?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &side in sizes {
        let x = Tensor::uniform(Shape::new(1, channels, side, side), -1.0, 1.0, &mut rng);
        // One untimed warm-up run.
        pool.install(|| upsamplers::lda_aqu_upsample(&x, &weights, config))?;
        let mut best = f64::INFINITY;
        for _ in 0..repeats {
            let t = Instant::now();
            let y = pool.install(|| upsamplers::lda_aqu_upsample(&x, &weights, config))?;
            best = best.min(t.elapsed().as_secs_f64());
            std::hint::black_box(y);
        }
        rows.push(BenchRow {
            side,
            tokens: side * side,
            flops: flops(config, side, side, channels).total,
            seconds: best,
        });
    }
    let tokens: Vec<f64> = rows.iter().map(|r| r.tokens as f64).collect();
    let f: Vec<f64> = rows.iter().map(|r| r.flops).collect();
    let t: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
    Ok(BenchResult {
        flops_exponent: loglog_slope(&tokens, &f),
        time_exponent: loglog_slope(&tokens, &t),
        rows,
    })
}

pub fn cmd_bench(
    cli: &CliConfig,
    channels: usize,
    sizes: &[usize],
    repeats: usize,
    out: &mut (dyn Write + Send),
) -> CliResult {
    let config = cli.upsample_config();
    let result = bench_sweep(&config, channels, sizes, repeats, cli.seed)?;
    let mut table = format!(
        "{:>6} {:>8} {:>16} {:>12}\n",
        "H=W", "tokens", "model_flops", "seconds"
    );
    table.push_str("(model FLOPs exclude query upsampling)\n");
    for r in &result.rows {
        table.push_str(&format!(
            "{:>6} {:>8} {:>16} {:>12.6}\n",
            r.side, r.tokens, r.flops, r.seconds
        ));
    }
    table.push_str(&format!(
        "fitted exponent vs tokens: flops {:.4}, wall time {:.4}",
        result.flops_exponent, result.time_exponent
    ));
    say(out, &table)?;
    if let Some(path) = &cli.out {
        let mut csv = String::from("side,tokens,model_flops,seconds\n");
        for r in &result.rows {
            csv.push_str(&format!(
                "{},{},{},{:?}\n",
                r.side, r.tokens, r.flops, r.seconds
            ));
        }
        std::fs::write(path, csv)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn cmd_offsets(
    input: &Path,
    cli: &CliConfig,
    stride: usize,
    out: &mut (dyn Write + Send),
) -> CliResult {
    if cli.mode != ModeArg::LdaAqu {
        return Err(CliError::Usage("offsets requires --mode lda-aqu".into()));
    }
    let dest = cli.out()?;
    let (x, _, config) = prepare(input, cli, out)?;
    let weights = resolve_weights(cli, &config, x.shape().c)?;
    let res = upsamplers::lda_aqu_upsample(&x, &weights, &config)?;
    let rows = io::write_offset_dump(dest, &res.grid, &res.attention, stride)?;
    say(
        out,
        format!(
            "wrote {rows} rows ({}x{} queries at stride {stride}, {} groups, {} points); max |offset| {}",
            res.grid.out_h / stride.max(1),
            res.grid.out_w / stride.max(1),
            config.groups,
            config.stencil_points(),
            res.grid.max_abs_offset()
        ),
    )
}

/// The task `train-toy` builds for these flags.
pub fn toy_task(cli: &CliConfig, task: TaskArg, toy: ToyArgs) -> CliResult<ToyTask> {
    let config = cli.upsample_config();
    let kind = match task {
        TaskArg::Bilinear => TaskKind::BilinearTarget,
        TaskArg::Shifted => TaskKind::ShiftedTarget,
    };
    Ok(trainer::make_task_with(
        kind,
        toy.batch,
        toy.channels,
        toy.size,
        toy.size,
        config.alpha,
        config.projection_mode,
        config.padding,
        &mut Rng::seed(cli.seed),
    )?)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train_toy(
    cli: &CliConfig,
    task: TaskArg,
    steps: usize,
    lr: f64,
    toy: ToyArgs,
    save_weights: Option<&Path>,
    out: &mut (dyn Write + Send),
) -> CliResult {
    let freeze_offsets = match cli.mode {
        ModeArg::LdaAqu => false,
        ModeArg::LaAqu => true,
        _ => {
            return Err(CliError::Usage(
                "train-toy requires --mode lda-aqu or la-aqu".into(),
            ))
        }
    };
    let dest = cli.out()?;
    let weights_path = save_weights
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dest.with_extension("ldaw"));
    let config = cli.upsample_config();
    let toy_task = toy_task(cli, task, toy)?;
    let weights = resolve_weights(cli, &config, toy.channels)?;
    let opts = TrainOptions {
        steps,
        lr,
        freeze_offsets,
    };
    match trainer::train_from(&toy_task, &config, &opts, weights) {
        Ok(log) => {
            io::write_loss_csv(dest, &log.losses)?;
            io::save_weights(&weights_path, &log.weights, &config)?;
            say(out, format!("initial loss {:?}", log.initial_loss()))?;
            say(out, format!("final loss {:?}", log.final_loss()))?;
            say(
                out,
                format!("ratio {:.6}", log.final_loss() / log.initial_loss()),
            )?;
            say(out, format!("weights saved to {}", weights_path.display()))
        }
        Err(lda_aqu::Error::Divergence { step, loss, trace }) => {
            io::write_loss_csv(dest, &trace)?;
            Err(CliError::Failure(format!(
                "training diverged at step {step} (loss {loss}); trace written to {}",
                dest.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String) {
        let mut buf = Vec::new();
        let code = run(
            std::iter::once("lda-aqu").chain(args.iter().copied()),
            &mut buf,
        );
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn defaults_mirror_operator_defaults() {
        let cli = Cli::try_parse_from(["lda-aqu", "gradcheck"]).unwrap();
        let Command::Gradcheck { config, .. } = cli.command else {
            panic!()
        };
        assert_eq!(config.upsample_config(), UpsampleConfig::default());
    }

    #[test]
    fn unknown_flags_rejected() {
        assert_eq!(run_args(&["gradcheck", "--bogus"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["upsample"]).0, EXIT_USAGE);
        assert_eq!(run_args(&["bench", "--mode", "fancy"]).0, EXIT_USAGE);
    }

    #[test]
    fn invalid_config_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("x.ldat");
        io::write_tensor(&input, &Tensor::zeros(Shape::new(1, 8, 4, 4))).unwrap();
        let out = dir.path().join("y.ldat");
        let (i, o) = (input.to_str().unwrap(), out.to_str().unwrap());
        assert_eq!(
            run_args(&["upsample", i, "--out", o, "--scale", "1"]).0,
            EXIT_USAGE
        );
        assert_eq!(
            run_args(&["upsample", i, "--out", o, "--ku", "2"]).0,
            EXIT_USAGE
        );
        assert_eq!(
            run_args(&["upsample", i, "--out", o, "--reduction", "3"]).0,
            EXIT_USAGE
        );
        assert_eq!(
            run_args(&["offsets", i, "--out", o, "--mode", "bilinear"]).0,
            EXIT_USAGE
        );
        assert!(!out.exists());
    }

    #[test]
    fn fractional_scale_extents() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("x.ldat");
        io::write_tensor(&input, &Tensor::full(Shape::new(1, 8, 4, 6), 0.5)).unwrap();
        let out = dir.path().join("y.ldat");
        let (code, text) = run_args(&[
            "upsample",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--scale",
            "1.5",
        ]);
        assert_eq!(code, EXIT_OK, "{text}");
        assert_eq!(
            io::read_tensor(&out).unwrap().shape(),
            Shape::new(1, 8, 6, 9)
        );
        assert!(text.contains("total"));
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.5)).collect();
        assert!((loglog_slope(&xs, &ys) - 1.5).abs() < 1e-12);
    }
}
