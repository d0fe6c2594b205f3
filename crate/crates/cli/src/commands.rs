use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use deltatok_core::budget::{default_scaling_budgets, scaling_curve, write_scaling_csv, DEFAULT_GOP_CAP};
use deltatok_core::container::atomic_write;
use deltatok_core::raw::{read_raw, write_raw};
use deltatok_core::{
    decode, encode, fuse_gop, keyframe_promote, plan_budget, read_stream, sample_gops, synth_video, write_stream,
    BudgetPlan, BudgetQuery, CodecError, CodecStream, EncodedFrame, EncoderParams, FusionPlan, SynthKind,
    VideoConfig,
};
use deltatok_encoder::checkpoint::{load_model_file, save_model_file};
use deltatok_encoder::retrieval::RECALL_KS;
use deltatok_encoder::train::{make_videos, smoothed_endpoints, train_on_seed, write_loss_csv};
use deltatok_encoder::{
    build_token_stream, retrieval_eval, DataConfig, DeltaTokModel64, EncoderError, ModelConfig, StreamOptions,
    TrainConfig, PATCH,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("no coverage: one GOP needs {tokens_per_gop} tokens, more than the budget of {budget}")]
    NoCoverage { tokens_per_gop: usize, budget: usize },
    #[error("{}: {source}", path.display())]
    Input { path: PathBuf, source: Box<CliError> },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }

    /// Output stream closed by the reader, e.g. `deltatok stats x | head`.
    pub fn is_broken_pipe(&self) -> bool {
        matches!(self, CliError::Io(e) if e.kind() == std::io::ErrorKind::BrokenPipe)
    }
}

/// Attaches the offending input path to a read failure.
fn reading<T, E: Into<CliError>>(path: &Path, r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        source: Box::new(e.into()),
    })
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "deltatok", version, about = "Compressed-domain video tokenizer toolkit")]
pub struct Cli {
    /// Suppress timing lines so repeated runs print identical output.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a raw video (raw file or its .json sidecar) into a CPVS stream.
    Encode {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = VideoConfig::DEFAULT_BLOCK)]
        block: usize,
        #[arg(long, default_value_t = VideoConfig::DEFAULT_GOP)]
        gop: usize,
        /// Motion search radius in pixels.
        #[arg(long, default_value_t = EncoderParams::default().search_radius)]
        search: usize,
    },
    /// Decode a CPVS stream to a raw file plus .json sidecar.
    Decode { input: PathBuf, output: PathBuf },
    /// Fuse P-frames over a window and optionally promote keyframes.
    Fuse {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        window: usize,
        #[arg(long, default_value_t = 1)]
        keyframes: usize,
    },
    /// Interleave I-frame and Δ-tokens of a stream into JSONL.
    Tokenize {
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Uniformly sample at most this many GOPs.
        #[arg(long, default_value_t = DEFAULT_GOP_CAP)]
        max_gops: usize,
        /// Replace every Δ-token block with zeros.
        #[arg(long)]
        zero_delta: bool,
    },
    /// Longest video that fits a context budget.
    Plan {
        #[arg(long)]
        budget: usize,
        #[arg(long, default_value_t = 240)]
        gop: usize,
        #[arg(long, default_value_t = 30)]
        fps: usize,
        #[arg(long, default_value_t = 30)]
        window: usize,
        #[arg(long, default_value_t = 1)]
        keyframes: usize,
        #[arg(long, default_value_t = 210)]
        m: usize,
        #[arg(long, default_value_t = 8)]
        n: usize,
        /// Extra tokens per retained frame.
        #[arg(long, default_value_t = 0)]
        overhead: usize,
    },
    /// Write a seeded synthetic video as raw frames plus sidecar.
    Synth {
        #[arg(long, default_value = "moving_rect")]
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        #[arg(long, default_value_t = 30)]
        fps: usize,
    },
    /// Alignment pretraining on seeded synthetic video.
    Pretrain {
        #[arg(long)]
        data_seed: u64,
        #[arg(long, default_value_t = 500)]
        steps: u64,
        #[arg(long)]
        out: PathBuf,
        /// Per-step loss CSV; defaults to `<out>.loss.csv`.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        model_seed: u64,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 64)]
        videos: usize,
    },
    /// Next-frame retrieval of a checkpoint against the previous-frame baseline.
    RetrievalEval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data_seed: u64,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 20)]
        videos: usize,
    },
    /// Per-GOP token accounting and residual energy of a stream.
    Stats {
        input: PathBuf,
        /// Tokens per I-frame; defaults to the 16x16 patch count.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long, default_value_t = 8)]
        n: usize,
    },
    /// Maximum duration against context budget for each keyframe setting, as CSV.
    ScalingCurve {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated budgets; defaults to 15625 doubling up to 1M.
        #[arg(long, value_delimiter = ',')]
        budgets: Vec<usize>,
    },
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let timing = !cli.deterministic;
    match cli.command {
        Command::Encode {
            input,
            output,
            block,
            gop,
            search,
        } => cmd_encode(out, &input, &output, block, gop, search),
        Command::Decode { input, output } => cmd_decode(out, &input, &output),
        Command::Fuse {
            input,
            output,
            window,
            keyframes,
        } => cmd_fuse(out, &input, &output, window, keyframes),
        Command::Tokenize {
            input,
            model,
            out: path,
            max_gops,
            zero_delta,
        } => cmd_tokenize(out, &input, &model, &path, max_gops, zero_delta),
        Command::Plan {
            budget,
            gop,
            fps,
            window,
            keyframes,
            m,
            n,
            overhead,
        } => cmd_plan(
            out,
            BudgetQuery {
                duration: 0.0,
                fps,
                gop_size: gop,
                fusion_window: window,
                keyframes_per_gop: keyframes,
                m,
                n,
                context_budget: budget,
                per_frame_overhead: overhead,
            },
        ),
        Command::Synth {
            kind,
            seed,
            frames,
            out: path,
            width,
            height,
            channels,
            fps,
        } => {
            let kind: SynthKind = kind.parse().map_err(|e: CodecError| CliError::Usage(e.to_string()))?;
            let cfg = VideoConfig::new(width, height, channels).with_fps(fps);
            let video = synth_video(kind, seed, &cfg, frames)?;
            write_raw(&path, &video, fps)?;
            writeln!(out, "wrote {frames} frames of {width}x{height}x{channels} {}", kind.name())?;
            Ok(())
        }
        Command::Pretrain {
            data_seed,
            steps,
            out: path,
            loss_csv,
            model_seed,
            batch,
            videos,
        } => {
            if steps == 0 || batch == 0 || videos == 0 {
                return Err(CliError::Usage("--steps, --batch and --videos must be positive".into()));
            }
            let loss_csv = loss_csv.unwrap_or_else(|| {
                let mut s = path.as_os_str().to_owned();
                s.push(".loss.csv");
                PathBuf::from(s)
            });
            let train = TrainConfig {
                steps,
                batch,
                ..TrainConfig::default()
            };
            cmd_pretrain(out, data_seed, &train, &path, &loss_csv, model_seed, videos, timing)
        }
        Command::RetrievalEval {
            ckpt,
            data_seed,
            report,
            videos,
        } => cmd_retrieval(out, &ckpt, data_seed, &report, videos, timing),
        Command::Stats { input, m, n } => cmd_stats(out, &input, m, n),
        Command::ScalingCurve { out: path, budgets } => {
            let budgets = if budgets.is_empty() { default_scaling_budgets() } else { budgets };
            let rows = scaling_curve(&budgets)?;
            let mut buf = Vec::new();
            write_scaling_csv(&rows, &mut buf)?;
            write_bytes(&path, &buf)?;
            writeln!(out, "wrote {} rows", rows.len())?;
            Ok(())
        }
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    atomic_write(path, |w| Ok(w.write_all(bytes)?))?;
    Ok(())
}

fn frame_counts(stream: &CodecStream) -> (usize, usize) {
    let i = stream.count_intra();
    (i, stream.frames.len() - i)
}

fn cmd_encode(out: &mut dyn Write, input: &Path, output: &Path, block: usize, gop: usize, search: usize) -> Result<()> {
    let (desc, frames) = reading(input, read_raw(input))?;
    let cfg = desc.config(block, gop);
    let params = EncoderParams {
        search_radius: search,
        ..EncoderParams::default()
    };
    let stream = encode(&frames, &cfg, &params)?;
    let bytes = write_stream(&stream, output)?;
    let (i, p) = frame_counts(&stream);
    writeln!(out, "encoded {} frames ({i} I, {p} P), {bytes} bytes", stream.frames.len())?;
    Ok(())
}

fn cmd_decode(out: &mut dyn Write, input: &Path, output: &Path) -> Result<()> {
    let stream = reading(input, read_stream(input))?;
    let frames = decode(&stream)?;
    let cfg = stream.config;
    // retained frames of a fused stream play at fps / window
    write_raw(output, &frames, (cfg.fps / cfg.fusion_window).max(1))?;
    writeln!(out, "decoded {} frames", frames.len())?;
    Ok(())
}

fn cmd_fuse(out: &mut dyn Write, input: &Path, output: &Path, window: usize, keyframes: usize) -> Result<()> {
    let stream = reading(input, read_stream(input))?;
    let plan = FusionPlan::new(window, stream.config.gop_size)?;
    let mut fused = fuse_gop(&stream, &plan)?;
    if keyframes != 1 {
        fused = keyframe_promote(&fused, keyframes)?;
    }
    let bytes = write_stream(&fused, output)?;
    let (i, p) = frame_counts(&fused);
    writeln!(out, "fused to {} frames ({i} I, {p} P), {bytes} bytes", fused.frames.len())?;
    Ok(())
}

fn cmd_tokenize(
    out: &mut dyn Write,
    input: &Path,
    model: &Path,
    path: &Path,
    max_gops: usize,
    zero_delta: bool,
) -> Result<()> {
    if max_gops == 0 {
        return Err(CliError::Usage("--max-gops must be positive".into()));
    }
    let stream = reading(input, read_stream(input))?;
    let model: DeltaTokModel64 = reading(model, load_model_file(model))?;
    let gops = sample_gops(stream.gop_ranges().len(), max_gops);
    let tokens = build_token_stream(&stream, &model, &gops, StreamOptions { zero_delta })?;
    let mut buf = Vec::new();
    tokens.write_jsonl(&mut buf)?;
    write_bytes(path, &buf)?;
    writeln!(
        out,
        "{} GOPs, {} entries, {} tokens",
        gops.len(),
        tokens.entries.len(),
        tokens.total_tokens()
    )?;
    Ok(())
}

fn cmd_plan(out: &mut dyn Write, q: BudgetQuery) -> Result<()> {
    match plan_budget(&q)? {
        BudgetPlan::NoCoverage { tokens_per_gop } => Err(CliError::NoCoverage {
            tokens_per_gop,
            budget: q.context_budget,
        }),
        BudgetPlan::Coverage {
            max_gops,
            max_duration_seconds,
            tokens_used,
            tokens_per_gop,
        } => {
            writeln!(out, "{max_gops} GOPs / {max_duration_seconds} s")?;
            writeln!(
                out,
                "{:.2} h, {tokens_per_gop} tokens per GOP, {tokens_used} tokens used",
                max_duration_seconds / 3600.0
            )?;
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_pretrain(
    out: &mut dyn Write,
    data_seed: u64,
    train: &TrainConfig,
    path: &Path,
    loss_csv: &Path,
    model_seed: u64,
    videos: usize,
    timing: bool,
) -> Result<()> {
    let model_cfg = ModelConfig {
        seed: model_seed,
        ..ModelConfig::default()
    };
    let data = DataConfig {
        videos,
        ..DataConfig::default()
    };
    let start = Instant::now();
    let mut progress = Ok(());
    let (model, history) = train_on_seed(model_cfg, &data, data_seed, train, |r| {
        if (r.step + 1) % 50 == 0 && progress.is_ok() {
            progress = writeln!(out, "step {:>5}  lr {:.3e}  loss {:.6}", r.step + 1, r.lr, r.loss);
        }
    })?;
    progress?;
    save_model_file(&model, path)?;
    let mut buf = Vec::new();
    write_loss_csv(&history, &mut buf)?;
    write_bytes(loss_csv, &buf)?;
    if let Some((first, last)) = smoothed_endpoints(&history, 50.min(history.len())) {
        writeln!(out, "smoothed loss {first:.6} -> {last:.6} (ratio {:.4})", last / first)?;
    }
    if timing {
        writeln!(out, "elapsed {:.1} s", start.elapsed().as_secs_f64())?;
    }
    Ok(())
}

fn cmd_retrieval(
    out: &mut dyn Write,
    ckpt: &Path,
    data_seed: u64,
    report: &Path,
    videos: usize,
    timing: bool,
) -> Result<()> {
    let start = Instant::now();
    let model: DeltaTokModel64 = reading(ckpt, load_model_file(ckpt))?;
    let data = DataConfig {
        videos,
        channels: model.config.channels,
        ..DataConfig::default()
    };
    let held_out = make_videos(&data, data_seed)?;
    let result = retrieval_eval(&model, &held_out)?;
    write_bytes(report, &serde_json::to_vec_pretty(&result)?)?;
    for k in RECALL_KS {
        writeln!(
            out,
            "recall@{k}: ours {:.4}  baseline {:.4}",
            result.ours_at(k),
            result.baseline_at(k)
        )?;
    }
    writeln!(out, "{} queries", result.num_queries)?;
    if timing {
        writeln!(out, "elapsed {:.1} s", start.elapsed().as_secs_f64())?;
    }
    Ok(())
}

fn cmd_stats(out: &mut dyn Write, input: &Path, m: Option<usize>, n: usize) -> Result<()> {
    let stream = reading(input, read_stream(input))?;
    let cfg = stream.config;
    let m = m.unwrap_or(cfg.height.div_ceil(PATCH) * cfg.width.div_ceil(PATCH));
    writeln!(
        out,
        "{}x{}x{} block {} gop {} fps {} window {}, {} frames, M={m} N={n}",
        cfg.width,
        cfg.height,
        cfg.channels,
        cfg.block_size,
        cfg.gop_size,
        cfg.fps,
        cfg.fusion_window,
        stream.frames.len()
    )?;
    writeln!(out, "gop  frames  I   P   tokens  residual_energy_mean  residual_energy_max  zero_residual_p")?;
    let mut total = 0;
    for (g, range) in stream.gop_ranges().into_iter().enumerate() {
        let frames = &stream.frames[range];
        let energies: Vec<u64> = frames
            .iter()
            .filter_map(|f| match f {
                EncodedFrame::P(p) => Some(p.residual.energy()),
                EncodedFrame::I(_) => None,
            })
            .collect();
        let i = frames.len() - energies.len();
        let tokens = i * m + energies.len() * n;
        total += tokens;
        let mean = if energies.is_empty() {
            0.0
        } else {
            energies.iter().sum::<u64>() as f64 / energies.len() as f64
        };
        let max = energies.iter().max().copied().unwrap_or(0);
        let zero = energies.iter().filter(|&&e| e == 0).count();
        writeln!(
            out,
            "{g:<4} {:<7} {i:<3} {:<3} {tokens:<7} {mean:<21.1} {max:<20} {zero}",
            frames.len(),
            energies.len()
        )?;
    }
    writeln!(out, "total tokens {total}")?;
    Ok(())
}
