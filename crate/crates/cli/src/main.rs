use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use hypc_core::container::{
    decode_hcmp, decode_ntb, encode_hcmp, read_hcmp, read_ntb, write_atomic, write_ntb,
};
use hypc_core::inference::{decode_network, random_network, toy_dataset};
use hypc_core::{
    accuracy, compress_bundle, compression_ratio, decompress_model, encode_layer_with, error_stats,
    estimate_threshold, eval_accuracy, pipelined_forward, solve_p0, train_toy, CompressionPlan,
    Dataset, DirectionMode, EncodeParams, MlpNetwork, SearchMode,
};

mod table;

#[derive(Parser)]
#[command(name = "hypc", version, about = "Ergodic weight compression toolkit")]
struct Cli {
    /// Print human-readable tables instead of JSON.
    #[arg(long, global = true)]
    pretty: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress an NTB bundle into an HCMP model.
    Compress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        codec: CodecArgs,
        /// JSON file with per-layer overrides.
        #[arg(long = "per-layer")]
        per_layer: Option<PathBuf>,
        /// Concurrent per-layer encode workers.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Restore an NTB bundle from an HCMP model.
    Decompress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// List the layers of an HCMP model.
    Inspect { model: PathBuf },
    /// Compare two NTB bundles tensor by tensor.
    Eval {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        restored: PathBuf,
    },
    /// Write a random MLP with the given layer widths.
    Gen {
        /// Comma-separated widths, input first.
        #[arg(long, value_delimiter = ',', required = true)]
        layers: Vec<usize>,
        #[arg(long, env = "HYPC_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the 4-32-16-2 toy classifier.
    TrainToy {
        #[arg(long, env = "HYPC_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        /// Also write the held-out test split as CSV.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Classification accuracy of an NTB or HCMP model on a CSV dataset.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Decode layers on a second thread while computing (HCMP only).
        #[arg(long)]
        pipeline: bool,
    },
    /// Time compression of a bundle with one search configuration.
    Bench {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "full")]
        mode: SearchMode,
        #[command(flatten)]
        codec: CodecArgs,
    },
    /// Bond percolation on the lattices G_r.
    Perc {
        #[command(subcommand)]
        command: PercCommand,
    },
}

#[derive(Subcommand)]
enum PercCommand {
    /// Root of 2p + p^2 - p^4 = 1 in (0, 1).
    P0,
    /// Bisection estimate of the crossing threshold.
    Estimate {
        #[arg(long)]
        r: usize,
        #[arg(long, default_value_t = 200)]
        height: usize,
        #[arg(long, default_value_t = 200)]
        width: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 12)]
        probes: usize,
        #[arg(long, env = "HYPC_SEED", default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Clone, Copy)]
struct CodecArgs {
    /// Side of the codebook box.
    #[arg(long, default_value_t = 0.1)]
    l: f64,
    /// Codebook size U.
    #[arg(long, default_value_t = 225)]
    u: u32,
    /// Number of outer ring categories M.
    #[arg(long = "max-class", default_value_t = 3)]
    max_class: u16,
    #[arg(long, default_value = "grid")]
    direction: DirectionMode,
}

impl From<CodecArgs> for EncodeParams {
    fn from(a: CodecArgs) -> Self {
        EncodeParams {
            l: a.l,
            u: a.u,
            max_class: a.max_class,
            direction: a.direction,
        }
    }
}

#[derive(Serialize)]
struct LayerRow {
    name: String,
    shape: Vec<u64>,
    u: u32,
    max_class: u16,
    l: f64,
    direction: String,
    bit_width: u8,
    payload_bytes: usize,
}

enum Report {
    Json(Value),
    Table(Value, table::Table),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let text: Vec<&str> = msg
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect();
            report_error("usage", text.join(" ").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(&cli.command) {
        Ok(report) => {
            let text = match (report, cli.pretty) {
                (Report::Table(_, t), true) => t.render(),
                (Report::Table(v, _), false) | (Report::Json(v), false) => v.to_string(),
                (Report::Json(v), true) => serde_json::to_string_pretty(&v).expect("json value"),
            };
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<hypc_core::Error>())
                .map_or("error", |c| c.kind());
            report_error(kind, &chain_message(&e));
            ExitCode::FAILURE
        }
    }
}

/// Context chain joined with ": ", skipping causes already quoted by
/// their wrapper.
fn chain_message(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if msg.ends_with(&text) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&text);
    }
    msg
}

fn report_error(kind: &str, message: &str) {
    let line = json!({ "error": kind, "message": message.replace('\n', " ") });
    eprintln!("{line}");
}

fn run(cmd: &Command) -> anyhow::Result<Report> {
    match cmd {
        Command::Compress {
            input,
            output,
            codec,
            per_layer,
            jobs,
        } => compress(input, output, (*codec).into(), per_layer.as_deref(), *jobs),
        Command::Decompress { input, output } => {
            let model = read_hcmp(input).with_context(|| format!("reading {}", input.display()))?;
            let bundle = decompress_model(&model)?;
            write_ntb(output, &bundle)?;
            Ok(Report::Json(json!({
                "tensors": bundle.tensors.len(),
                "elements": bundle.total_elements(),
                "bytes": fs::metadata(output)?.len(),
            })))
        }
        Command::Inspect { model } => inspect(model),
        Command::Eval { original, restored } => eval(original, restored),
        Command::Gen { layers, seed, output } => {
            let net = random_network(layers, *seed)?;
            write_ntb(output, &net.to_bundle())?;
            Ok(Report::Json(json!({
                "layers": layers,
                "seed": seed,
                "bytes": fs::metadata(output)?.len(),
            })))
        }
        Command::TrainToy { seed, output, data } => {
            let net = train_toy(*seed);
            let (train, test) = toy_dataset();
            write_ntb(output, &net.to_bundle())?;
            if let Some(path) = data {
                test.write_csv(path)?;
            }
            Ok(Report::Json(json!({
                "seed": seed,
                "train_accuracy": eval_accuracy(&net, &train)?,
                "test_accuracy": eval_accuracy(&net, &test)?,
            })))
        }
        Command::Infer { model, data, pipeline } => infer(model, data, *pipeline),
        Command::Bench { input, mode, codec } => bench(input, *mode, (*codec).into()),
        Command::Perc { command } => match command {
            PercCommand::P0 => {
                let p0 = solve_p0();
                let mut t = table::Table::new(&["p0"]);
                t.row(vec![format!("{p0:.6}")]);
                Ok(Report::Table(json!({ "p0": p0 }), t))
            }
            PercCommand::Estimate {
                r,
                height,
                width,
                trials,
                probes,
                seed,
            } => {
                let e = estimate_threshold(*r, *height, *width, *trials, *probes, *seed)?;
                let mut t = table::Table::new(&["r", "H", "W", "trials", "p_hat", "interval"]);
                t.row(vec![
                    e.r.to_string(),
                    e.height.to_string(),
                    e.width.to_string(),
                    e.trials.to_string(),
                    format!("{:.5}", e.p_hat),
                    format!("[{:.5}, {:.5}]", e.interval[0], e.interval[1]),
                ]);
                Ok(Report::Table(serde_json::to_value(&e)?, t))
            }
        },
    }
}

fn compress(
    input: &Path,
    output: &Path,
    base: EncodeParams,
    per_layer: Option<&Path>,
    jobs: usize,
) -> anyhow::Result<Report> {
    if jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let plan: CompressionPlan = match per_layer {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => CompressionPlan::default(),
    };
    let original = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let bundle = decode_ntb(&original)?;
    let model = compress_bundle(&bundle, base, &plan, jobs)?;
    let bytes = encode_hcmp(&model)?;
    write_atomic(output, &bytes)?;
    let max_bits = model.layers.iter().map(|l| l.bit_width()).max().unwrap_or(0);
    Ok(Report::Json(json!({
        "layers": model.layers.len(),
        "original_bytes": original.len(),
        "compressed_bytes": bytes.len(),
        "ratio": compression_ratio(original.len() as f64, bytes.len() as f64)?,
        "max_bit_width": max_bits,
    })))
}

fn inspect(path: &Path) -> anyhow::Result<Report> {
    let model = read_hcmp(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<LayerRow> = model
        .layers
        .iter()
        .map(|l| LayerRow {
            name: l.name().to_string(),
            shape: l.shape().to_vec(),
            u: l.config().u,
            max_class: l.config().max_class,
            l: l.config().l,
            direction: l.config().direction.to_string(),
            bit_width: l.bit_width(),
            payload_bytes: l.payload().len(),
        })
        .collect();
    let mut t = table::Table::new(&["name", "shape", "U", "M", "l", "bit_width", "payload_bytes"]);
    for r in &rows {
        t.row(vec![
            r.name.clone(),
            format!("{:?}", r.shape),
            r.u.to_string(),
            r.max_class.to_string(),
            r.l.to_string(),
            r.bit_width.to_string(),
            r.payload_bytes.to_string(),
        ]);
    }
    Ok(Report::Table(serde_json::to_value(&rows)?, t))
}

fn eval(original: &Path, restored: &Path) -> anyhow::Result<Report> {
    let a = read_ntb(original).with_context(|| format!("reading {}", original.display()))?;
    let b = read_ntb(restored).with_context(|| format!("reading {}", restored.display()))?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for t in &a.tensors {
        let other = b
            .get(&t.name)
            .ok_or_else(|| anyhow!("tensor {:?} missing from {}", t.name, restored.display()))?;
        if other.shape != t.shape {
            bail!("tensor {:?} has shape {:?} vs {:?}", t.name, t.shape, other.shape);
        }
        xs.extend_from_slice(&t.data);
        ys.extend_from_slice(&other.data);
    }
    if b.tensors.len() != a.tensors.len() {
        bail!("{} has {} tensors, {} has {}", original.display(), a.tensors.len(), restored.display(), b.tensors.len());
    }
    let s = error_stats(&xs, &ys)?;
    let mut t = table::Table::new(&["elements", "max_abs", "mean_abs", "rmse"]);
    t.row(vec![
        xs.len().to_string(),
        format!("{:.3e}", s.max_abs),
        format!("{:.3e}", s.mean_abs),
        format!("{:.3e}", s.rmse),
    ]);
    Ok(Report::Table(serde_json::to_value(s)?, t))
}

fn infer(model: &Path, data: &Path, pipeline: bool) -> anyhow::Result<Report> {
    let bytes = fs::read(model).with_context(|| format!("reading {}", model.display()))?;
    let dataset = Dataset::read_csv(data).with_context(|| format!("reading {}", data.display()))?;
    let (kind, acc) = match bytes.get(..4) {
        Some(b"NTB1") => {
            if pipeline {
                bail!("--pipeline needs a compressed (HCMP) model");
            }
            let bundle = decode_ntb(&bytes)?;
            ("ntb", eval_accuracy(&MlpNetwork::from_bundle(&bundle)?, &dataset)?)
        }
        Some(b"HCMP") => {
            let m = decode_hcmp(&bytes)?;
            let acc = if pipeline {
                accuracy(&pipelined_forward(&m, &dataset.x)?, &dataset.y)?
            } else {
                eval_accuracy(&decode_network(&m)?, &dataset)?
            };
            ("hcmp", acc)
        }
        _ => bail!("{} is neither an NTB nor an HCMP file", model.display()),
    };
    Ok(Report::Json(json!({
        "model": kind,
        "pipeline": pipeline,
        "samples": dataset.len(),
        "accuracy": acc,
    })))
}

fn bench(input: &Path, mode: SearchMode, params: EncodeParams) -> anyhow::Result<Report> {
    let bundle = read_ntb(input).with_context(|| format!("reading {}", input.display()))?;
    let start = Instant::now();
    let mut payload = 0usize;
    for t in &bundle.tensors {
        payload += encode_layer_with(&t.data, &t.name, &t.shape, &params, mode)?.payload().len();
    }
    let seconds = start.elapsed().as_secs_f64();
    let mut t = table::Table::new(&["mode", "elements", "seconds"]);
    t.row(vec![
        mode.to_string(),
        bundle.total_elements().to_string(),
        format!("{seconds:.4}"),
    ]);
    Ok(Report::Table(
        json!({
            "mode": mode.to_string(),
            "layers": bundle.tensors.len(),
            "elements": bundle.total_elements(),
            "payload_bytes": payload,
            "seconds": seconds,
        }),
        t,
    ))
}
