use std::fs::OpenOptions;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use popos::chainsim::{gen_trace, majority, read_trace_file, splice, write_trace_file, ExecutionTrace, TraceParams};
use popos::clients::{sync, Bootstrap, ClientConfig, Flavor, SyncReport};
use popos::crypto::hash_parts;
use popos::protocol::{Message, ProverData, ProverSession};
use popos::transport::{LinkConfig, LinkError, Meter, ProverLink, Responder, Server, SimLink, TcpLink};

/// Proof-of-proof-of-stake light-client simulator.
///
/// Log verbosity follows RUST_LOG (default: warn).
#[derive(Parser)]
#[command(name = "popos", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an honest execution trace.
    Gen(GenArgs),
    /// Honest prefix before epoch `at`, alternative trace from `at` on.
    Splice {
        #[arg(long)]
        honest: PathBuf,
        #[arg(long)]
        alt: PathBuf,
        #[arg(long)]
        at: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Revalidate a trace file against a genesis committee.
    Check {
        #[arg(long)]
        trace: PathBuf,
        /// Trace whose epoch-0 committee is the trusted genesis; defaults to the trace itself.
        #[arg(long)]
        genesis: Option<PathBuf>,
    },
    /// Serve a trace as a TCP prover.
    Serve {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 7411)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
    },
    /// Run client syncs over a list of horizons and emit CSV rows.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    epochs: u64,
    #[arg(long, default_value_t = 32)]
    committee: usize,
    /// Signers per handover; defaults to a bare majority.
    #[arg(long)]
    signers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    client: Flavor,
    /// Comma-separated epoch counts.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    horizons: Vec<u64>,
    /// Batch size for tlc/olc, tree degree for slc.
    #[arg(long)]
    param: Option<u32>,
    /// Comma-separated provers in query order: `honest`, `splice` (random
    /// point), `splice@J`, or `tcp://HOST:PORT`.
    #[arg(long, default_value = "honest,splice,splice,splice,splice,splice,splice,splice")]
    provers: String,
    #[arg(long, default_value_t = 32, conflicts_with = "full_committee")]
    committee: usize,
    /// Use m = 512 committees.
    #[arg(long)]
    full_committee: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    latency_ms: u64,
    /// Appends rows to this file (header written when empty); stdout otherwise.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum ProverSpec {
    Honest,
    Splice(Option<u64>),
    Remote(String),
}

impl FromStr for ProverSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "honest" {
            return Ok(ProverSpec::Honest);
        }
        if s == "splice" {
            return Ok(ProverSpec::Splice(None));
        }
        if let Some(j) = s.strip_prefix("splice@") {
            return j.parse().map(|j| ProverSpec::Splice(Some(j))).map_err(|_| format!("bad splice point in {s:?}"));
        }
        if let Some(addr) = s.strip_prefix("tcp://") {
            return Ok(ProverSpec::Remote(addr.to_string()));
        }
        Err(format!("unknown prover {s:?}"))
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Gen(args) => cmd_gen(&args),
        Command::Splice { honest, alt, at, out } => cmd_splice(&honest, &alt, at, &out),
        Command::Check { trace, genesis } => cmd_check(&trace, genesis.as_deref()),
        Command::Serve { trace, port, bind } => cmd_serve(&trace, &bind, port),
        Command::Bench(args) => cmd_bench(&args),
    }
}

fn load(path: &Path) -> Result<ExecutionTrace> {
    read_trace_file(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let params = TraceParams::new(
        args.epochs,
        args.committee,
        args.signers.unwrap_or_else(|| majority(args.committee)),
        args.seed,
    );
    let trace = gen_trace(&params)?;
    write_trace_file(&trace, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    info!("wrote {} epochs to {}", trace.horizon(), args.out.display());
    Ok(())
}

fn cmd_splice(honest: &Path, alt: &Path, at: u64, out: &Path) -> Result<()> {
    let spliced = splice(&load(honest)?, &load(alt)?, at)?;
    write_trace_file(&spliced, out).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn cmd_check(trace: &Path, genesis: Option<&Path>) -> Result<()> {
    let t = load(trace)?;
    let g = match genesis {
        Some(p) => load(p)?.genesis().clone(),
        None => t.genesis().clone(),
    };
    t.revalidate(&g).with_context(|| format!("{} is not well-formed", trace.display()))?;
    println!("ok: {} epochs, committee size {}", t.horizon(), t.committee_size());
    Ok(())
}

fn cmd_serve(trace: &Path, bind: &str, port: u16) -> Result<()> {
    let data = ProverData::new(Arc::new(load(trace)?));
    let server = Server::bind((bind, port), move || Box::new(ProverSession::new(data.clone())) as Box<dyn Responder>)
        .with_context(|| format!("binding {bind}:{port}"))?;
    println!("listening on {}", server.local_addr()?);
    io::stdout().flush()?;
    server.run();
    Ok(())
}

/// Stands in for a prover that could not be reached.
struct Unreachable;

impl ProverLink for Unreachable {
    fn exchange(&mut self, _: &Message) -> Result<Message, LinkError> {
        Err(LinkError::Closed)
    }

    fn send(&mut self, _: &Message) -> Result<(), LinkError> {
        Err(LinkError::Closed)
    }

    fn meter(&self) -> Meter {
        Meter::default()
    }
}

/// Deterministic splice point in `1..n` for the `i`-th prover.
fn splice_point(seed: u64, n: u64, i: usize) -> u64 {
    let d = hash_parts([&b"splice point"[..], &seed.to_be_bytes(), &n.to_be_bytes(), &(i as u64).to_be_bytes()]);
    1 + u64::from_be_bytes(d.0[..8].try_into().expect("8 bytes")) % (n - 1)
}

fn bench_row(args: &BenchArgs, specs: &[ProverSpec], n: u64, m: usize) -> Result<SyncReport> {
    let honest = gen_trace(&TraceParams::with_majority(n, m, args.seed))?;
    let needs_alt = specs.iter().any(|s| matches!(s, ProverSpec::Splice(_)));
    let alt =
        if needs_alt { Some(gen_trace(&TraceParams::with_majority(n, m, args.seed.wrapping_add(1)))?) } else { None };
    let honest_data = ProverData::new(Arc::new(honest.clone()));
    let cfg = LinkConfig::default().with_latency_ms(args.latency_ms);

    let mut links: Vec<Box<dyn ProverLink>> = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let link: Box<dyn ProverLink> = match spec {
            ProverSpec::Honest => Box::new(SimLink::new(Box::new(ProverSession::new(honest_data.clone())), cfg)),
            ProverSpec::Splice(at) => {
                if n < 2 {
                    bail!("splicing needs at least two epochs");
                }
                let at = at.unwrap_or_else(|| splice_point(args.seed, n, i));
                let t = splice(&honest, alt.as_ref().expect("generated above"), at)?;
                Box::new(SimLink::new(Box::new(ProverSession::from_trace(t)), cfg))
            }
            ProverSpec::Remote(addr) => {
                match addr.parse::<SocketAddr>().map_err(io::Error::other).and_then(|a| TcpLink::connect(a, cfg)) {
                    Ok(l) => Box::new(l),
                    Err(e) => {
                        warn!("prover {i} ({addr}) unreachable: {e}");
                        Box::new(Unreachable)
                    }
                }
            }
        };
        links.push(link);
    }

    let mut client = ClientConfig::new(args.client);
    if let Some(p) = args.param {
        client = client.with_param(p);
    }
    let boot = Bootstrap { genesis: honest.genesis().clone(), horizon: n };
    let report = sync(&client, &boot, &mut links)?;
    if report.commitment != honest.latest_commitment() {
        warn!("N={n}: adopted commitment differs from the honest trace");
    }
    Ok(report)
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    if args.horizons.is_empty() {
        bail!("--horizons needs at least one value");
    }
    if let Some(&bad) = args.horizons.iter().find(|&&n| n == 0) {
        bail!("horizon {bad} is empty");
    }
    let specs: Vec<ProverSpec> =
        args.provers.split(',').map(str::parse).collect::<Result<_, _>>().map_err(anyhow::Error::msg)?;
    if specs.is_empty() {
        bail!("--provers is empty");
    }
    let m = if args.full_committee { 512 } else { args.committee };

    let (sink, write_header): (Box<dyn Write>, bool) = match &args.csv {
        Some(path) => {
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .with_context(|| format!("opening {}", path.display()))?;
            let empty = f.metadata()?.len() == 0;
            (Box::new(f), empty)
        }
        None => (Box::new(io::stdout()), true),
    };
    let mut out = csv::Writer::from_writer(sink);
    if write_header {
        out.write_record(SyncReport::CSV_HEADER)?;
    }
    let mut failures = 0;
    for &n in &args.horizons {
        match bench_row(args, &specs, n, m) {
            Ok(r) => {
                info!("{} N={n}: {} bytes, {} games", args.client, r.total_bytes(), r.games);
                out.write_record(r.csv_row())?;
            }
            Err(e) => {
                failures += 1;
                warn!("{} N={n} failed: {e:#}", args.client);
                let param = args.param.unwrap_or(ClientConfig::new(args.client).param);
                let mut row = vec![args.client.to_string(), n.to_string(), m.to_string(), param.to_string()];
                row.extend(std::iter::repeat_n(String::new(), 5));
                row.push(format!("error: {e:#}"));
                out.write_record(&row)?;
            }
        }
        out.flush()?;
    }
    if failures > 0 {
        bail!("{failures} of {} runs failed", args.horizons.len());
    }
    Ok(())
}
