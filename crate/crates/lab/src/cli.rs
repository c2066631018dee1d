//! `bplab` command line.

use std::collections::BTreeMap;
use std::path::PathBuf;

use bplab_core::metrics::classification_variation;
use bplab_core::{KernelName, Network, PaddingMode};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::artifacts::{read_json, to_pretty_json, MetricReport, OutputDir};
use crate::checkpoint::{load_checkpoint_for, save_checkpoint, spec_hash};
use crate::error::{LabError, Result};
use crate::experiments::{self, ToyProtocol};
use crate::export;
use crate::specs::load_spec;

#[derive(Debug, Parser)]
#[command(name = "bplab", version, about = "Anti-aliased downsampling lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pool the 1-D example signal with and without blurring.
    Toy1d(Toy1dArgs),
    /// Print the blur filter table.
    Kernels(OutArgs),
    /// Per-layer equivariance heatmaps for a random input.
    Heatmap(HeatmapArgs),
    /// Fit a toy classifier.
    Train(TrainArgs),
    /// Exhaustive shift consistency on the toy test set.
    Consistency(EvalArgs),
    /// Accuracy against a shift adversary for every range up to --max-shift.
    Adversarial(EvalArgs),
    /// Shift stability of a random encoder-decoder.
    Psnr(PsnrArgs),
    /// Collect metric reports into a CSV table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args, Serialize)]
pub struct OutArgs {
    /// Output directory for reports and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct Toy1dArgs {
    #[arg(long, default_value = "tri3", value_parser = parse_filter)]
    pub filter: KernelName,
    #[arg(long, default_value = "circular", value_parser = parse_pad)]
    pub pad: PaddingMode,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub spec: String,
    /// Initializes the weights and draws the input.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feature depth (0 = input); every spatial layer when omitted.
    #[arg(long)]
    pub layer: Option<usize>,
    /// Use trained weights instead of a fresh initialization.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "maps")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub spec: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    pub augment: Switch,
    /// Largest augmentation offset when --augment is on.
    #[arg(long, default_value_t = 4)]
    pub max_shift: usize,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub spec: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trained weights; without it the net is trained first from --seed.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    pub augment: Switch,
    /// Adversary range (adversarial) or augmentation offset (consistency).
    #[arg(long, default_value_t = 16)]
    pub max_shift: usize,
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PsnrArgs {
    #[arg(long, default_value = "tri3", value_parser = parse_filter)]
    pub filter: KernelName,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Directories searched (not recursively) for metric reports.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

fn parse_filter(s: &str) -> std::result::Result<KernelName, String> {
    s.parse().map_err(|_| {
        let names: Vec<&str> = KernelName::ALL.iter().map(|k| k.flag()).collect();
        format!("unknown filter {s:?}, expected one of {}", names.join("|"))
    })
}

fn parse_pad(s: &str) -> std::result::Result<PaddingMode, String> {
    s.parse()
        .map_err(|_| format!("unknown padding {s:?}, expected circular|zero|reflect"))
}

/// Flag values as strings, for the manifest.
fn flag_map<T: Serialize>(args: &T) -> BTreeMap<String, String> {
    let serde_json::Value::Object(map) = serde_json::to_value(args).expect("flags serialize")
    else {
        return BTreeMap::new();
    };
    map.into_iter()
        .filter(|(_, v)| !v.is_null())
        .map(|(k, v)| {
            let v = match v {
                serde_json::Value::String(s) => s,
                other => other.to_string(),
            };
            (k.replace('_', "-"), v)
        })
        .collect()
}

fn seeds(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
    pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
}

fn protocol(epochs: Option<usize>, augment: Switch, max_shift: usize) -> ToyProtocol {
    let mut p = ToyProtocol::default();
    if let Some(e) = epochs {
        p.epochs = e;
    }
    if augment == Switch::On {
        p.augment = Some(max_shift);
    }
    p
}

fn fmt_seq(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(", "))
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns the process exit code; errors go to stderr as one JSON line.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let flag = e
                .get(clap::error::ContextKind::InvalidArg)
                .map(|v| v.to_string())
                .unwrap_or_default();
            let err = LabError::usage(&flag, e.kind().to_string());
            eprintln!("{}", err.to_json_line());
            return err.exit_code();
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(cli.command, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}

/// Runs one command, writing human-readable output to `out`.
pub fn run(command: Command, out: &mut impl std::io::Write) -> Result<()> {
    let w = |out: &mut dyn std::io::Write, s: String| -> Result<()> {
        writeln!(out, "{s}").map_err(|e| LabError::io("<stdout>", e))
    };
    match command {
        Command::Toy1d(a) => {
            let t = experiments::toy1d_padded(a.filter, a.pad)?;
            w(
                out,
                format!("max_pool              {}", fmt_seq(&t.max_pool)),
            )?;
            w(
                out,
                format!("max_pool shifted      {}", fmt_seq(&t.max_pool_shifted)),
            )?;
            w(
                out,
                format!(
                    "max_blur_pool {:<7} {}",
                    t.filter.flag(),
                    fmt_seq(&t.max_blur_pool)
                ),
            )?;
            w(
                out,
                format!(
                    "max_blur_pool shifted {}",
                    fmt_seq(&t.max_blur_pool_shifted)
                ),
            )?;
            if let Some(dir) = &a.out {
                let mut od = OutputDir::new(dir);
                let report = MetricReport::new("toy1d", serde_json::to_value(&t).unwrap(), &a, &[]);
                od.write_report("toy1d.json", &report)?;
                od.finish("toy1d", flag_map(&a), BTreeMap::new())?;
            }
        }
        Command::Kernels(a) => {
            let table = experiments::kernel_table();
            for row in &table {
                w(
                    out,
                    format!("{:<8} {:<6} {:?}", row.name, row.flag, row.taps),
                )?;
            }
            if let Some(dir) = &a.out {
                let mut od = OutputDir::new(dir);
                let report =
                    MetricReport::new("kernels", serde_json::to_value(&table).unwrap(), &(), &[]);
                od.write_report("kernels.json", &report)?;
                od.finish("kernels", flag_map(&a), BTreeMap::new())?;
            }
        }
        Command::Heatmap(a) => {
            let spec = load_spec(&a.spec)?;
            let net = match &a.checkpoint {
                Some(p) => load_checkpoint_for(p, &spec)?,
                None => Network::seeded(&spec, a.seed)?,
            };
            let layers: Vec<usize> = match a.layer {
                Some(l) if l > net.depth() => {
                    return Err(LabError::usage(
                        "--layer",
                        format!("layer {l} out of range 0..={}", net.depth()),
                    ))
                }
                Some(l) => vec![l],
                None => (0..=net.depth())
                    .filter(|&l| net.feature_shape(l).is_some_and(|s| s.len() == 3))
                    .collect(),
            };
            let mut od = OutputDir::new(&a.out);
            let mut summaries = Vec::new();
            for l in layers {
                let map = experiments::heatmap(&net, a.seed, l)?;
                let stem = format!("heatmap_l{l:02}");
                od.write(&format!("{stem}.csv"), &export::grid_csv(&map.grid))?;
                let (pgm, side) = export::grid_pgm(&map.grid);
                od.write(&format!("{stem}.pgm"), &pgm)?;
                let summary = export::heatmap_summary(&map, side);
                od.write(&format!("{stem}.json"), &to_pretty_json(&summary))?;
                w(
                    out,
                    format!(
                        "layer {l:2} {:<14} stride {:2} period {:2} max {:.3e}",
                        map.layer_name,
                        map.stride,
                        map.period,
                        map.grid.max()
                    ),
                )?;
                summaries.push(summary);
            }
            let config = json!({ "spec_hash": spec_hash(&spec), "flags": flag_map(&a) });
            let payload = serde_json::to_value(&summaries).unwrap();
            od.write_report(
                "heatmap.json",
                &MetricReport::new(
                    "equivariance_heatmap",
                    payload,
                    &config,
                    &[("seed", a.seed)],
                ),
            )?;
            od.finish("heatmap", flag_map(&a), seeds(&[("seed", a.seed)]))?;
        }
        Command::Train(a) => {
            let spec = load_spec(&a.spec)?;
            let p = protocol(a.epochs, a.augment, a.max_shift);
            let trained = experiments::train_toy(&spec, a.seed, &p)?;
            let mut od = OutputDir::new(&a.out);
            let ckpt = od.path().join("checkpoint.bin");
            let checksum = save_checkpoint(&trained.net, &ckpt)?;
            od.record("checkpoint.bin", &checksum);
            od.record_file("checkpoint.bin.json")?;
            od.write("train_log.csv", &export::training_log_csv(&trained.log))?;
            let last = trained.log.last().expect("at least one epoch");
            let payload = json!({
                "final_loss": last.loss,
                "train_accuracy": last.accuracy,
                "test_accuracy": trained.test_accuracy,
                "checkpoint_sha256": checksum,
            });
            let config = json!({ "spec_hash": spec_hash(&spec), "protocol": p });
            od.write_report(
                "train.json",
                &MetricReport::new("train", payload, &config, &[("seed", a.seed)]),
            )?;
            od.finish("train", flag_map(&a), seeds(&[("seed", a.seed)]))?;
            w(
                out,
                format!(
                    "epochs {} loss {:.4} train acc {:.3} test acc {:.3}",
                    last.epoch, last.loss, last.accuracy, trained.test_accuracy
                ),
            )?;
        }
        Command::Consistency(a) => {
            let (spec, net, p) = eval_net(&a)?;
            let c = experiments::toy_consistency(&net, &p)?;
            let test = p.test_data()?;
            let variations: Vec<f64> = (0..test.len())
                .map(|i| classification_variation(&net, &test.image(i), test.labels[i]))
                .collect::<bplab_core::Result<_>>()?;
            let mean_var = variations.iter().sum::<f64>() / variations.len() as f64;
            let acc = bplab_core::network::evaluate_accuracy(&net, &test)?;
            let payload =
                json!({ "consistency": c, "test_accuracy": acc, "mean_variation": mean_var });
            finish_eval(&a, &spec, &p, "consistency", payload)?;
            w(
                out,
                format!("consistency {c:.4} test acc {acc:.3} mean variation {mean_var:.4}"),
            )?;
        }
        Command::Adversarial(a) => {
            let (spec, net, p) = eval_net(&a)?;
            let curve = experiments::toy_adversarial(&net, &p, a.max_shift)?;
            for r in &curve {
                w(
                    out,
                    format!(
                        "max shift {:2} accuracy {:.3} positions {}",
                        r.max_shift, r.accuracy, r.positions_per_sample
                    ),
                )?;
            }
            let payload: Vec<_> = curve
                .iter()
                .map(|r| json!({ "max_shift": r.max_shift, "accuracy": r.accuracy, "positions_per_sample": r.positions_per_sample }))
                .collect();
            finish_eval(&a, &spec, &p, "adversarial_shift_accuracy", json!(payload))?;
        }
        Command::Psnr(a) => {
            let images = experiments::encdec_images(a.seed, experiments::ENCDEC_IMAGES)?;
            let ours = experiments::upsample_stability(a.filter, a.filter, a.seed, &images)?;
            let base = experiments::upsample_stability(
                KernelName::Delta1,
                KernelName::Rect2,
                a.seed,
                &images,
            )?;
            for r in [&base, &ours] {
                w(
                    out,
                    format!(
                        "down {:<6} up {:<6} psnr stability {:.3} dB output tv {:.3}",
                        r.down_filter.flag(),
                        r.up_filter.flag(),
                        r.psnr_stability,
                        r.output_tv
                    ),
                )?;
            }
            if let Some(dir) = &a.out {
                let mut od = OutputDir::new(dir);
                let payload = json!({ "filtered": ours, "baseline": base });
                od.write_report(
                    "psnr.json",
                    &MetricReport::new("psnr_stability", payload, &a, &[("seed", a.seed)]),
                )?;
                od.finish("psnr", flag_map(&a), seeds(&[("seed", a.seed)]))?;
            }
        }
        Command::Report(a) => {
            let reports = collect_reports(&a.inputs)?;
            let mut od = OutputDir::new(&a.out);
            od.write("reports.csv", &report_table(&reports))?;
            od.finish("report", flag_map(&a), BTreeMap::new())?;
            w(out, format!("{} reports", reports.len()))?;
        }
    }
    Ok(())
}

fn eval_net(a: &EvalArgs) -> Result<(bplab_core::NetworkSpec, Network, ToyProtocol)> {
    let spec = load_spec(&a.spec)?;
    let p = protocol(a.epochs, a.augment, a.max_shift);
    let net = match &a.checkpoint {
        Some(path) => load_checkpoint_for(path, &spec)?,
        None => experiments::train_toy(&spec, a.seed, &p)?.net,
    };
    Ok((spec, net, p))
}

fn finish_eval(
    a: &EvalArgs,
    spec: &bplab_core::NetworkSpec,
    p: &ToyProtocol,
    metric: &str,
    payload: serde_json::Value,
) -> Result<()> {
    let weights = match &a.checkpoint {
        Some(path) => {
            let bytes = std::fs::read(path).map_err(|e| LabError::io(path, e))?;
            json!({ "checkpoint_sha256": crate::artifacts::sha256_hex(&bytes) })
        }
        None => json!({ "trained": p }),
    };
    let config = json!({ "spec_hash": spec_hash(spec), "weights": weights, "test": { "seed": experiments::TEST_DATA_SEED, "samples": p.test_samples } });
    let mut od = OutputDir::new(&a.out);
    od.write_report(
        &format!("{metric}.json"),
        &MetricReport::new(metric, payload, &config, &[("seed", a.seed)]),
    )?;
    od.finish(metric, flag_map(a), seeds(&[("seed", a.seed)]))?;
    Ok(())
}

/// Every parseable metric report directly inside `dirs`, in path order.
pub fn collect_reports(dirs: &[PathBuf]) -> Result<Vec<(PathBuf, MetricReport)>> {
    let mut found = Vec::new();
    for dir in dirs {
        let entries = std::fs::read_dir(dir).map_err(|e| LabError::io(dir, e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        for p in paths {
            if let Ok(r) = read_json::<MetricReport>(&p) {
                found.push((p, r));
            }
        }
    }
    Ok(found)
}

/// One row per scalar leaf of each payload: `source, metric, config_hash,
/// seeds, key, value`. Timestamps are left out so tables are reproducible.
pub fn report_table(reports: &[(PathBuf, MetricReport)]) -> Vec<u8> {
    fn leaves(prefix: String, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
        match v {
            serde_json::Value::Object(m) => {
                for (k, v) in m {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    leaves(key, v, out);
                }
            }
            serde_json::Value::Array(a) => {
                for (i, v) in a.iter().enumerate() {
                    leaves(
                        if prefix.is_empty() {
                            i.to_string()
                        } else {
                            format!("{prefix}.{i}")
                        },
                        v,
                        out,
                    );
                }
            }
            serde_json::Value::String(s) => out.push((prefix, s.clone())),
            other => out.push((prefix, other.to_string())),
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["source", "metric", "config_hash", "seeds", "key", "value"])
        .unwrap();
    for (path, r) in reports {
        let source = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        let seeds: Vec<String> = r.seeds.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let mut cells = Vec::new();
        leaves(String::new(), &r.payload, &mut cells);
        for (key, value) in cells {
            w.write_record([
                source.as_str(),
                &r.metric,
                &r.config_hash,
                &seeds.join(";"),
                &key,
                &value,
            ])
            .unwrap();
        }
    }
    w.into_inner().expect("csv to memory")
}

/// Caps internal parallelism from `BPLAB_THREADS` (0 or unset = automatic).
pub fn configure_threads() {
    let n = std::env::var("BPLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    // An already-initialized pool keeps its size.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
}
