use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use imsketch::fasst::{self, PartitionMode};
use imsketch::graph::{self, WeightSetting, WeightedGraph};
use imsketch::oracle::{self, OracleConfig};
use imsketch::runtime::{self, CommCounters, PhaseTimings, RunConfig};
use imsketch::sampling::RandomVector;
use serde::Serialize;

const CACHE_MAGIC: &[u8; 8] = b"IMSKCSR1";

#[derive(Parser)]
#[command(name = "imsketch", version, about = "Sketch-based influence maximization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select seed vertices and write a JSON report.
    Seeds(SeedsArgs),
    /// Estimate the influence of a seed set by Monte-Carlo simulation.
    Eval(EvalArgs),
    /// Per-edge device duplication histogram as CSV.
    PartitionStats(PartitionArgs),
    /// Lane fill rate of 32-wide batches as CSV.
    Fillrate(PartitionArgs),
    /// Phase timings across settings, device counts and modes as CSV.
    Bench(BenchArgs),
    /// Convert a text edge list to the binary graph cache.
    Convert(ConvertArgs),
}

#[derive(Args, Clone, Serialize)]
struct GraphArgs {
    /// Edge list (`src dst [prob]` per line) or binary cache.
    #[arg(long)]
    graph: PathBuf,
    /// Treat each text edge as two arcs.
    #[arg(long)]
    undirected: bool,
    /// const:w | wc | normal:mean,stddev | uniform:lo,hi. Defaults to the
    /// probabilities stored in the input.
    #[arg(long)]
    weights: Option<WeightSetting>,
    #[arg(long, default_value_t = 0)]
    weight_seed: u64,
}

impl GraphArgs {
    fn setting_label(&self) -> String {
        self.weights.map_or_else(|| "file".to_string(), |w| w.to_string())
    }

    fn load(&self) -> Result<WeightedGraph> {
        let g = load_graph(&self.graph, self.undirected)?;
        Ok(match self.weights {
            Some(s) => graph::assign_weights(&g, s, self.weight_seed),
            None => g,
        })
    }
}

#[derive(Args)]
struct SeedsArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, default_value_t = 50)]
    k: usize,
    /// Total simulations.
    #[arg(long, default_value_t = 1024)]
    r: usize,
    #[arg(long, default_value_t = 1)]
    devices: usize,
    #[arg(long, default_value_t = PartitionMode::Fasst)]
    mode: PartitionMode,
    #[arg(long, default_value_t = 0.01)]
    rebuild_eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = imsketch::engine::DEFAULT_MAX_ITERATIONS)]
    max_iterations: usize,
    /// Report path; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// A report written by `seeds`, or a comma-separated list of vertex ids.
    #[arg(long)]
    seeds: String,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 3)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print JSON instead of a text line.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, default_value_t = 1024)]
    r: usize,
    #[arg(long, default_value_t = 8)]
    devices: usize,
    /// naive | fasst; both if omitted.
    #[arg(long)]
    mode: Option<PartitionMode>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Repeatable.
    #[arg(long, required = true)]
    graph: Vec<PathBuf>,
    #[arg(long)]
    undirected: bool,
    #[arg(long, value_delimiter = ',', default_values = ["const:0.1", "wc"])]
    weights: Vec<WeightSetting>,
    #[arg(long, default_value_t = 0)]
    weight_seed: u64,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 8])]
    devices: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [PartitionMode::Naive, PartitionMode::Fasst])]
    modes: Vec<PartitionMode>,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 1024)]
    r: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    undirected: bool,
    #[arg(long)]
    out: PathBuf,
}

fn load_graph(path: &Path, undirected: bool) -> Result<WeightedGraph> {
    let mut file = BufReader::new(File::open(path).with_context(|| format!("cannot open graph {}", path.display()))?);
    let mut head = [0u8; 8];
    let mut got = 0;
    while got < head.len() {
        match file.read(&mut head[got..])? {
            0 => break,
            n => got += n,
        }
    }
    let input = io::Cursor::new(head[..got].to_vec()).chain(file);
    let g = if &head[..got] == CACHE_MAGIC {
        WeightedGraph::read_cache(input)?
    } else {
        let raw = graph::parse_edge_list(BufReader::new(input), !undirected)
            .with_context(|| format!("cannot parse {}", path.display()))?;
        WeightedGraph::from_raw(&raw)?
    };
    log_graph(path, &g);
    Ok(g)
}

fn log_graph(path: &Path, g: &WeightedGraph) {
    eprintln!("loaded {}: {} vertices, {} edges", path.display(), g.num_vertices(), g.num_edges());
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

#[derive(Serialize)]
struct ReportConfig<'a> {
    input: &'a GraphArgs,
    weights: String,
    run: &'a RunConfig,
}

#[derive(Serialize)]
struct Report<'a> {
    config: ReportConfig<'a>,
    vertices: usize,
    edges: usize,
    /// Original vertex ids.
    seeds: Vec<u64>,
    scores: &'a [f64],
    rebuilds: usize,
    simulate_iterations: usize,
    saturated: bool,
    device_edges: &'a [usize],
    comms: CommCounters,
    /// Wall-clock data; the only field that differs between identical runs.
    timings: PhaseTimings,
}

fn seeds(a: SeedsArgs) -> Result<()> {
    let g = a.graph.load()?;
    let cfg = RunConfig {
        k: a.k,
        simulations: a.r,
        devices: a.devices,
        mode: a.mode,
        rebuild_eps: a.rebuild_eps,
        seed: a.seed,
        max_iterations: a.max_iterations,
    };
    let outcome = runtime::run(&g, &cfg)?;
    let rep = &outcome.report;
    if rep.saturated {
        eprintln!("warning: every sample was covered before {} seeds were found", a.k);
    }
    let report = Report {
        config: ReportConfig { input: &a.graph, weights: a.graph.setting_label(), run: &cfg },
        vertices: g.num_vertices(),
        edges: g.num_edges(),
        seeds: rep.seeds.iter().map(|&s| g.original_id(s)).collect(),
        scores: &rep.scores,
        rebuilds: rep.rebuilds,
        simulate_iterations: rep.simulate_iterations,
        saturated: rep.saturated,
        device_edges: &rep.device_edges,
        comms: rep.comms,
        timings: outcome.timings,
    };
    let mut out = output(&a.out)?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    Ok(())
}

fn parse_seed_list(spec: &str) -> Result<Vec<u64>> {
    let path = Path::new(spec);
    if path.is_file() {
        let v: serde_json::Value = serde_json::from_reader(BufReader::new(File::open(path)?))
            .with_context(|| format!("cannot read report {spec}"))?;
        let seeds = v.get("seeds").and_then(|s| s.as_array()).context("report has no `seeds` array")?;
        return seeds.iter().map(|s| s.as_u64().context("seed ids must be non-negative integers")).collect();
    }
    spec.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<u64>().with_context(|| format!("bad vertex id `{t}`")))
        .collect()
}

fn eval(a: EvalArgs) -> Result<()> {
    let g = a.graph.load()?;
    let original = parse_seed_list(&a.seeds)?;
    let dense = original
        .iter()
        .map(|&id| g.dense_id(id).with_context(|| format!("vertex {id} is not in the graph")))
        .collect::<Result<Vec<_>>>()?;
    let cfg = OracleConfig { trials: a.trials, seed: a.seed, runs: a.runs };
    let est = oracle::influence(&g, &dense, &cfg)?;
    if a.json {
        let v = serde_json::json!({
            "graph": &a.graph,
            "weights": a.graph.setting_label(),
            "seeds": original,
            "oracle": cfg,
            "mean": est.mean,
            "stderr": est.stderr,
            "samples": est.trials,
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        println!("{:.4} ± {:.4} ({} seeds, {} trials x {} runs)", est.mean, est.stderr, dense.len(), a.trials, a.runs);
    }
    Ok(())
}

fn modes(m: Option<PartitionMode>) -> Vec<PartitionMode> {
    m.map_or_else(|| vec![PartitionMode::Naive, PartitionMode::Fasst], |m| vec![m])
}

fn partition_stats(a: PartitionArgs) -> Result<()> {
    let g = a.graph.load()?;
    let x = RandomVector::generate(a.r, a.seed)?;
    let label = a.graph.setting_label();
    let mut out = output(&a.out)?;
    for (i, mode) in modes(a.mode).into_iter().enumerate() {
        let plan = fasst::make_plan(&x, a.devices, mode)?;
        let hist = fasst::duplication_stats(&g, &plan);
        fasst::write_duplication_csv(&mut out, &label, mode, &hist, i == 0)?;
    }
    out.flush()?;
    Ok(())
}

fn fillrate(a: PartitionArgs) -> Result<()> {
    let g = a.graph.load()?;
    let x = RandomVector::generate(a.r, a.seed)?;
    let label = a.graph.setting_label();
    let mut out = output(&a.out)?;
    for (i, mode) in modes(a.mode).into_iter().enumerate() {
        let report = fasst::fill_rate(&g, &x, mode);
        fasst::write_fill_rate_csv(&mut out, &label, mode, &report, i == 0)?;
    }
    out.flush()?;
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut out = output(&a.out)?;
    writeln!(
        out,
        "graph,setting,devices,mode,build_s,initial_simulate_s,selection_s,cascade_s,rebuild_s,total_s,score,rebuilds,max_device_edges"
    )?;
    for path in &a.graph {
        let base = load_graph(path, a.undirected)?;
        for &setting in &a.weights {
            let g = graph::assign_weights(&base, setting, a.weight_seed);
            for &devices in &a.devices {
                for &mode in &a.modes {
                    let cfg = RunConfig { k: a.k, simulations: a.r, devices, mode, seed: a.seed, ..RunConfig::default() };
                    let o = runtime::run(&g, &cfg)?;
                    let t = o.timings;
                    writeln!(
                        out,
                        "{},{setting},{devices},{mode},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{},{}",
                        path.display(),
                        t.build,
                        t.initial_simulate,
                        t.selection,
                        t.cascade,
                        t.rebuild,
                        t.total,
                        o.report.scores.last().copied().unwrap_or(0.0),
                        o.report.rebuilds,
                        o.report.device_edges.iter().max().copied().unwrap_or(0),
                    )?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn convert(a: ConvertArgs) -> Result<()> {
    let g = load_graph(&a.graph, a.undirected)?;
    let file = File::create(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    g.write_cache(BufWriter::new(file))?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Seeds(a) => seeds(a),
        Command::Eval(a) => eval(a),
        Command::PartitionStats(a) => partition_stats(a),
        Command::Fillrate(a) => fillrate(a),
        Command::Bench(a) => bench(a),
        Command::Convert(a) => {
            if a.out.exists() && a.out == a.graph {
                bail!("refusing to overwrite the input graph");
            }
            convert(a)
        }
    }
}
