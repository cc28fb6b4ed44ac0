mod bundle;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use uibcost::executor::{run_network_traced, ExecError, ExecOptions};
use uibcost::ir::{emit_netspec, parse_netspec, propagate_shapes, NetworkSpec};
use uibcost::latency::LatencyMatrix;
use uibcost::metrics::{aggregate, pareto_front, write_points_csv, Aggregation};
use uibcost::report::{line_plot, scatter_plot, Marker, Series};
use uibcost::roofline::{fit_ridge_point, predict_latency, sweep_ridge_points, HardwareTarget, DEFAULT_SWEEP};
use uibcost::search::{SearchConfig, SearchError, SearchMode};
use uibcost::{network_cost, zoo, CostReport, DtypeWidths};

use bundle::{write_file, Invariant, Payload, Provenance, ReportBundle};

#[derive(Debug, Parser)]
#[command(
    name = "uibcost",
    version,
    about = "Analytic cost, roofline and search tooling for UIB networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-block and total MACs, parameters and bytes of one network.
    Analyze {
        /// Built-in model name or path to a network JSON file.
        model: String,
        #[arg(long, default_value = "int8")]
        dtype: DtypeWidths,
        /// Evaluate at this input side instead of the network's own.
        #[arg(long)]
        resolution: Option<u32>,
        /// Print a JSON report bundle.
        #[arg(long, conflicts_with = "csv")]
        json: bool,
        /// Print the per-block table as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Sweep roofline latency over ridge points, or fit a ridge point to
    /// measured latencies.
    Roofline {
        /// Built-in model names or network JSON files. With --fit, defaults to
        /// every model of the CSV that has a built-in definition.
        models: Vec<String>,
        /// Ridge points in MACs/byte, comma separated. Without values the
        /// default sweep is used.
        #[arg(long, num_args = 0.., value_delimiter = ',', conflicts_with = "fit")]
        rp_sweep: Option<Vec<f64>>,
        /// Peak throughput for the sweep, MACs/s.
        #[arg(long, default_value_t = 1e12)]
        peak: f64,
        #[arg(long, default_value = "int8")]
        dtype: DtypeWidths,
        /// Latency CSV (`model,target,latency_ms[,top1]`) to fit against.
        #[arg(long, requires = "target")]
        fit: Option<PathBuf>,
        /// Target column of the latency CSV.
        #[arg(long)]
        target: Option<String>,
        /// Write CSV, SVG and report.json here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Pareto frontier of aggregated latency against accuracy.
    Pareto {
        /// Latency CSV; the bundled table when omitted.
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = AggKind::Geo)]
        agg: AggKind,
        /// Normalize latencies by this model's (required for arith).
        #[arg(long)]
        reference: Option<String>,
        /// Targets to aggregate over, comma separated.
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
        targets: Vec<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run an architecture search from a TOML or JSON config.
    Search {
        config: PathBuf,
        /// Overrides the config's mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Overrides the config's seed.
        #[arg(long, env = "UIBCOST_SEED")]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Execute a network on random weights and check every block's shape.
    ExecSmoke {
        #[arg(default_value = "mnv4-conv-s")]
        model: String,
        #[arg(long, default_value_t = 64)]
        resolution: u32,
        #[arg(long, env = "UIBCOST_SEED", default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AggKind {
    Geo,
    Arith,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    OneStage,
    TwoStage,
}

impl From<ModeArg> for SearchMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::OneStage => SearchMode::OneStage,
            ModeArg::TwoStage => SearchMode::TwoStage,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invariant>().is_some() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze {
            model,
            dtype,
            resolution,
            json,
            csv,
        } => analyze(&model, dtype, resolution, json, csv),
        Command::Roofline {
            models,
            rp_sweep,
            peak,
            dtype,
            fit,
            target,
            out_dir,
        } => match (fit, target) {
            (Some(csv), Some(target)) => roofline_fit(&models, &csv, &target, dtype, out_dir.as_deref()),
            _ => roofline_sweep(&models, rp_sweep, peak, dtype, out_dir.as_deref()),
        },
        Command::Pareto {
            data,
            agg,
            reference,
            targets,
            out_dir,
        } => pareto(data.as_deref(), agg, reference, &targets, out_dir.as_deref()),
        Command::Search {
            config,
            mode,
            seed,
            out_dir,
        } => search(&config, mode.map(Into::into), seed, &out_dir),
        Command::ExecSmoke {
            model,
            resolution,
            seed,
        } => exec_smoke(&model, resolution, seed),
    }
}

/// Built-in registry name, or a path to a network JSON file.
fn resolve_model(arg: &str) -> Result<NetworkSpec> {
    if let Some(net) = zoo::lookup(arg) {
        return Ok(net);
    }
    let path = Path::new(arg);
    if !path.exists() {
        let names: Vec<&str> = zoo::registry_names().collect();
        bail!("`{arg}` is neither a built-in model ({}) nor a file", names.join(", "));
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
    parse_netspec(&text).with_context(|| format!("parsing {arg}"))
}

fn cost(net: &NetworkSpec, dtype: DtypeWidths) -> Result<CostReport> {
    network_cost(net, dtype).with_context(|| format!("costing {}", net.name))
}

fn analyze(model: &str, dtype: DtypeWidths, resolution: Option<u32>, json: bool, csv: bool) -> Result<()> {
    let mut net = resolve_model(model)?;
    if let Some(r) = resolution {
        net = net.with_resolution(r);
    }
    let report = cost(&net, dtype)?;
    let mut out = io::stdout().lock();
    if json {
        let bundle = ReportBundle {
            command: Provenance::capture(None),
            payload: Payload::Cost(&report),
            emitted: Vec::new(),
        };
        writeln!(out, "{}", bundle.to_json())?;
    } else if csv {
        report.write_csv(&mut out)?;
    } else {
        writeln!(out, "{} ({dtype}, {}px)", report.network, net.input_res)?;
        writeln!(
            out,
            "{:>4}  {:<10} {:>14} {:>12} {:>12} {:>10}",
            "#", "kind", "macs", "params", "bytes", "macs/byte"
        )?;
        for (i, b) in report.per_block.iter().enumerate() {
            let oi = b.op_intensity().map_or_else(|| "-".into(), |v| format!("{v:.2}"));
            writeln!(
                out,
                "{i:>4}  {:<10} {:>14} {:>12} {:>12} {oi:>10}",
                b.label,
                b.macs,
                b.params,
                b.bytes()
            )?;
        }
        writeln!(
            out,
            "total: {:.3}M params, {:.4}G MACs, {} bytes, {} MACs/byte",
            report.mparams(),
            report.gmacs(),
            report.total_bytes,
            report.op_intensity().map_or_else(|| "-".into(), |v| format!("{v:.2}"))
        )?;
    }
    Ok(())
}

fn roofline_sweep(
    models: &[String],
    rps: Option<Vec<f64>>,
    peak: f64,
    dtype: DtypeWidths,
    out_dir: Option<&Path>,
) -> Result<()> {
    if models.is_empty() {
        bail!("no models given");
    }
    if !(peak.is_finite() && peak > 0.0) {
        bail!("--peak must be positive, got {peak}");
    }
    let rps = rps.filter(|v| !v.is_empty()).unwrap_or_else(|| DEFAULT_SWEEP.to_vec());
    let reports = models
        .iter()
        .map(|m| cost(&resolve_model(m)?, dtype))
        .collect::<Result<Vec<_>>>()?;
    let table = sweep_ridge_points(&reports, &rps, peak)?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    io::stdout().write_all(&csv)?;

    if let Some(dir) = out_dir {
        let series: Vec<Series> = table
            .models
            .iter()
            .zip(&table.latency_s)
            .map(|(name, row)| Series {
                name: name.clone(),
                points: rps.iter().zip(row).map(|(&rp, &s)| (rp, s * 1e3)).collect(),
            })
            .collect();
        let svg = line_plot(
            "Roofline latency vs ridge point",
            "ridge point (MACs/byte)",
            "latency (ms)",
            &series,
            true,
        );
        let csv_path = dir.join("sweep.csv");
        let svg_path = dir.join("sweep.svg");
        write_file(&csv_path, &csv)?;
        write_file(&svg_path, svg.as_bytes())?;
        let bundle = ReportBundle {
            command: Provenance::capture(None),
            payload: Payload::Sweep(&table),
            emitted: vec![csv_path, svg_path],
        };
        let report = bundle.write(dir)?;
        eprintln!("wrote {}", report.display());
    }
    Ok(())
}

fn roofline_fit(models: &[String], csv: &Path, target: &str, dtype: DtypeWidths, out_dir: Option<&Path>) -> Result<()> {
    let file = fs::File::open(csv).with_context(|| format!("opening {}", csv.display()))?;
    let matrix = LatencyMatrix::read_csv(file).with_context(|| format!("reading {}", csv.display()))?;
    if matrix.target_index(target).is_none() {
        bail!(
            "target `{target}` not in {} (have: {})",
            csv.display(),
            matrix.targets.join(", ")
        );
    }
    let given = models.iter().map(|m| resolve_model(m)).collect::<Result<Vec<_>>>()?;
    let mut names = Vec::new();
    let mut reports = Vec::new();
    let mut measured = Vec::new();
    for (row, ms) in matrix.column(target) {
        let net = if given.is_empty() {
            zoo::lookup(row)
        } else {
            given.iter().find(|n| n.name.eq_ignore_ascii_case(row)).cloned()
        };
        if let Some(net) = net {
            reports.push(cost(&net, dtype)?);
            measured.push(ms);
            names.push(row.to_string());
        }
    }
    let fit = fit_ridge_point(&reports, &measured).with_context(|| format!("fitting `{target}`"))?;
    println!("target: {target}");
    println!("models: {}", names.len());
    println!("ridge_point: {}", fit.ridge_point);
    println!("r_s-roofline: {}", fit.spearman);
    println!("r_s-mac: {}", fit.spearman_macs);
    println!("peak_macs_per_sec: {}", fit.scale);

    if let Some(dir) = out_dir {
        let hw = HardwareTarget::new(target, fit.ridge_point, fit.scale);
        let markers: Vec<Marker> = names
            .iter()
            .zip(&reports)
            .zip(&measured)
            .map(|((name, r), &ms)| Marker {
                label: name.clone(),
                x: predict_latency(r, &hw).total_s * 1e3,
                y: ms,
                highlight: false,
            })
            .collect();
        let svg = scatter_plot(
            &format!("{target}: fitted ridge point {}", fit.ridge_point),
            "predicted latency (ms)",
            "measured latency (ms)",
            &markers,
            true,
        );
        let svg_path = dir.join("fit.svg");
        write_file(&svg_path, svg.as_bytes())?;
        let bundle = ReportBundle {
            command: Provenance::capture(None),
            payload: Payload::Fit {
                target,
                models: &names,
                fit: &fit,
            },
            emitted: vec![svg_path],
        };
        let report = bundle.write(dir)?;
        eprintln!("wrote {}", report.display());
    }
    Ok(())
}

fn pareto(
    data: Option<&Path>,
    agg: AggKind,
    reference: Option<String>,
    targets: &[String],
    out_dir: Option<&Path>,
) -> Result<()> {
    let matrix = match data {
        Some(path) => {
            let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            LatencyMatrix::read_csv(file).with_context(|| format!("reading {}", path.display()))?
        }
        None => LatencyMatrix::bundled(),
    };
    let aggregation = match agg {
        AggKind::Geo => Aggregation::Geo { reference },
        AggKind::Arith => Aggregation::Arith {
            reference: reference.ok_or_else(|| anyhow!("--agg arith needs --reference"))?,
        },
    };
    let target_refs: Vec<&str> = targets.iter().map(String::as_str).collect();
    let points = aggregate(&matrix, &target_refs, &aggregation)?;
    if points.is_empty() {
        bail!("no model has an accuracy and a latency on every requested target");
    }
    let front = pareto_front(&points);
    let mut csv = Vec::new();
    write_points_csv(&front, &mut csv)?;
    io::stdout().write_all(&csv)?;

    if let Some(dir) = out_dir {
        let on_front = |name: &str| front.iter().any(|p| p.name == name);
        let markers: Vec<Marker> = points
            .iter()
            .map(|p| Marker {
                label: p.name.clone(),
                x: p.latency,
                y: p.accuracy,
                highlight: on_front(&p.name),
            })
            .collect();
        let x_label = match &aggregation {
            Aggregation::Geo { reference: None } => "geometric mean latency (ms)".to_string(),
            Aggregation::Geo { reference: Some(r) } => format!("geometric mean latency relative to {r}"),
            Aggregation::Arith { reference } => format!("mean latency relative to {reference}"),
        };
        let svg = scatter_plot(&targets.join(" / "), &x_label, "top-1 accuracy (%)", &markers, true);
        let csv_path = dir.join("frontier.csv");
        let svg_path = dir.join("pareto.svg");
        write_file(&csv_path, &csv)?;
        write_file(&svg_path, svg.as_bytes())?;
        let bundle = ReportBundle {
            command: Provenance::capture(None),
            payload: Payload::Frontier {
                aggregation: &aggregation,
                targets,
                points: &points,
                front: &front,
            },
            emitted: vec![csv_path, svg_path],
        };
        let report = bundle.write(dir)?;
        eprintln!("wrote {}", report.display());
    }
    Ok(())
}

fn search(path: &Path, mode: Option<SearchMode>, seed: Option<u64>, out_dir: &Path) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mut config = if is_json {
        SearchConfig::from_json(&text)
    } else {
        SearchConfig::from_toml(&text)
    }
    .with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let mode = mode.unwrap_or(config.mode);
    config.mode = mode;
    let outcome = config.run(mode).map_err(|e| match e {
        SearchError::Invariant(_) => anyhow!(Invariant(e.to_string())),
        other => anyhow!(other),
    })?;

    let suffix = match mode {
        SearchMode::OneStage => "one-stage",
        SearchMode::TwoStage => "two-stage",
    };
    let best_path = out_dir.join(format!("best-{suffix}.json"));
    let log_path = out_dir.join(format!("log-{suffix}.csv"));
    write_file(&best_path, emit_netspec(&outcome.best.net).as_bytes())?;
    let mut log = Vec::new();
    outcome.write_log_csv(&mut log)?;
    write_file(&log_path, &log)?;
    let bundle = ReportBundle {
        command: Provenance::capture(Some(config.seed)),
        payload: Payload::Search {
            mode,
            config: &config,
            outcome: &outcome,
        },
        emitted: vec![best_path.clone(), log_path.clone()],
    };
    let report = bundle.write(out_dir)?;

    let best = &outcome.best;
    println!("mode: {suffix}");
    println!("seed: {}", config.seed);
    println!("evaluations: {}", outcome.log.len());
    println!("best: {}", best.hash);
    println!("reward: {}", best.reward);
    println!("quality: {}", best.quality);
    println!("cost: {}", best.cost);
    println!(
        "params: {:.3}M, MACs: {:.4}G",
        best.report.mparams(),
        best.report.gmacs()
    );
    for p in [&best_path, &log_path, &report] {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn exec_smoke(model: &str, resolution: u32, seed: u64) -> Result<()> {
    let net = resolve_model(model)?.with_resolution(resolution);
    let expected = propagate_shapes(&net).with_context(|| format!("propagating shapes of {}", net.name))?;
    let start = Instant::now();
    let trace = run_network_traced(
        &net,
        ExecOptions {
            seed,
            ..ExecOptions::default()
        },
    )
    .map_err(|e| match e {
        ExecError::Shape(_) => anyhow!(e),
        other => anyhow!(Invariant(other.to_string())),
    })?;
    let elapsed = start.elapsed();
    for (i, (got, want)) in trace.block_shapes.iter().zip(&expected).enumerate() {
        if *got != want.output {
            return Err(anyhow!(Invariant(format!(
                "block {i}: executed shape {got} differs from propagated {}",
                want.output
            ))));
        }
    }
    println!(
        "ok: {} at {resolution}px, {} blocks, output {}, {elapsed:.2?}",
        net.name,
        net.blocks.len(),
        trace.output.shape
    );
    Ok(())
}
