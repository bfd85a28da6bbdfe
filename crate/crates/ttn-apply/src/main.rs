use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ttn_apply::apply::{apply as apply_op, ApplyMethod};
use ttn_apply::bench::{
    self, circuit_exact_bound, emit, run_circuit_bench, run_random_bench, ttnio, CircuitPlan,
    RandomPlan, STATUS_OK,
};
use ttn_apply::circuit::{circuit_from_json, circuit_to_json, make_batch, CircuitTopologyKind};
use ttn_apply::selftest;
use ttn_apply::tensor::TruncationConfig;
use ttn_apply::tree::StructureFamily;

/// Apply tree tensor network operators to tree tensor network states and
/// benchmark the compression methods.
#[derive(Parser)]
#[command(name = "ttn-apply", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a benchmark sweep and write CSV/JSON records.
    Bench {
        #[command(subcommand)]
        which: BenchCmd,
    },
    /// Apply an operator file to a state file.
    Apply(ApplyArgs),
    /// Run the built-in oracle suite.
    Selftest,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Random operators applied to random states on one tree family.
    Random(RandomArgs),
    /// Self-inverse circuit simulation on one structure.
    Circuit(CircuitArgs),
}

#[derive(Args)]
struct RandomArgs {
    /// Tree family: mps | t-tree | binary | ftps
    #[arg(long)]
    structure: String,
    /// Size parameter (chain/arm length, tree depth, fork size)
    #[arg(long = "L")]
    l: usize,
    /// Physical dimension per site
    #[arg(long = "d")]
    d: usize,
    /// State bond dimension
    #[arg(long = "Ds")]
    ds: usize,
    /// Operator bond dimension
    #[arg(long = "Do")]
    d_o: usize,
    /// Target bond dimensions, comma separated
    #[arg(long = "Dbar", value_delimiter = ',', required = true)]
    dbar: Vec<usize>,
    /// Methods: direct | dmc | zipup | src | cbc
    #[arg(long, value_delimiter = ',', required = true)]
    methods: Vec<String>,
    /// Instance seeds, comma separated
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    /// Output path; `.csv` and `.json` are written next to each other
    #[arg(long)]
    out: PathBuf,
    /// Run cells one after another for clean timings
    #[arg(long)]
    serial_timing: bool,
    /// Guard for the out-of-memory skip, in MiB of tensor entries
    #[arg(long, default_value_t = 8192)]
    mem_budget_mb: usize,
}

#[derive(Args)]
struct CircuitArgs {
    /// Structure: mps | t3ns-chains | t3ns-leaves
    #[arg(long)]
    structure: String,
    #[arg(long)]
    qubits: usize,
    /// Number of entangling batches N (the circuit applies them and their
    /// adjoints)
    #[arg(long)]
    batches: usize,
    #[arg(long = "Dbar", value_delimiter = ',', required = true)]
    dbar: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    methods: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    serial_timing: bool,
    #[arg(long, default_value_t = 8192)]
    mem_budget_mb: usize,
    /// Also write the first seed's circuit description here
    #[arg(long)]
    emit_circuit: Option<PathBuf>,
    /// Replay a circuit description file instead of drawing gates; the file
    /// holds the entangling levels, the adjoint half is reconstructed
    #[arg(long)]
    circuit: Option<PathBuf>,
    /// Print the bond dimension sufficient for an exact run, then exit
    #[arg(long)]
    print_exact_bound: bool,
}

#[derive(Args)]
struct ApplyArgs {
    /// Operator network file
    #[arg(long)]
    op: PathBuf,
    /// State network file
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    method: String,
    #[arg(long = "Dbar")]
    dbar: usize,
    /// Optional relative singular-value cutoff
    #[arg(long, default_value_t = 0.0)]
    tol: f64,
    /// Seed for the randomized method
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_methods(names: &[String]) -> Result<Vec<ApplyMethod>> {
    names
        .iter()
        .map(|n| {
            ApplyMethod::parse(n).with_context(|| format!("unknown method \"{n}\""))
        })
        .collect()
}

fn parse_family(name: &str) -> Result<StructureFamily> {
    Ok(match name {
        "mps" | "chain" => StructureFamily::Chain,
        "t-tree" => StructureFamily::TTree,
        "binary" => StructureFamily::BalancedBinary,
        "ftps" => StructureFamily::Ftps,
        _ => bail!("unknown structure \"{name}\""),
    })
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Bench { which: BenchCmd::Random(a) } => {
            let plan = RandomPlan {
                family: parse_family(&a.structure)?,
                size: a.l,
                phys_dim: a.d,
                d_s: a.ds,
                d_o: a.d_o,
                d_bars: a.dbar,
                methods: parse_methods(&a.methods)?,
                seeds: a.seeds,
                serial_timing: a.serial_timing,
                mem_budget_mb: a.mem_budget_mb,
            };
            let records = run_random_bench(&plan)?;
            let ok = report(&records, &a.out)?;
            Ok(ok)
        }
        Cmd::Bench { which: BenchCmd::Circuit(a) } => {
            let structure = CircuitTopologyKind::parse(&a.structure)
                .with_context(|| format!("unknown structure \"{}\"", a.structure))?;
            let plan = CircuitPlan {
                structure,
                n_qubits: a.qubits,
                n_batches: a.batches,
                d_bars: a.dbar,
                methods: parse_methods(&a.methods)?,
                seeds: a.seeds,
                serial_timing: a.serial_timing,
                mem_budget_mb: a.mem_budget_mb,
            };
            if a.print_exact_bound {
                let bound = circuit_exact_bound(&plan, plan.seeds[0])?;
                println!("exact bond bound: {bound}");
                return Ok(true);
            }
            if let Some(path) = &a.emit_circuit {
                let gate_seed = bench::derive_seed(plan.seeds[0], structure.name());
                let mut rng = ChaCha8Rng::seed_from_u64(gate_seed);
                let batches: Vec<_> = (0..plan.n_batches)
                    .map(|_| make_batch(plan.n_qubits, &mut rng))
                    .collect::<Result<_, _>>()?;
                std::fs::write(path, circuit_to_json(plan.n_qubits, &batches))?;
                println!("wrote circuit description to {}", path.display());
            }
            let records = match &a.circuit {
                Some(path) => {
                    let text = std::fs::read_to_string(path)?;
                    let (n_qubits, batch) = circuit_from_json(&text)?;
                    if n_qubits != plan.n_qubits {
                        bail!("circuit file has {n_qubits} qubits, plan expects {}", plan.n_qubits);
                    }
                    bench::run_circuit_bench_prepared(&plan, &[batch])?
                }
                None => run_circuit_bench(&plan)?,
            };
            let ok = report(&records, &a.out)?;
            Ok(ok)
        }
        Cmd::Apply(a) => {
            let op = ttnio::read_ttno(&a.op)?;
            let state = ttnio::read_ttns(&a.state)?;
            let method = ApplyMethod::parse(&a.method)
                .with_context(|| format!("unknown method \"{}\"", a.method))?;
            let cfg = TruncationConfig::with_tol(a.dbar, a.tol)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let rep = apply_op(method, &op, &state, &cfg, &mut rng)?;
            ttnio::write_ttns(&rep.result, "custom", &a.out)?;
            println!(
                "applied {} in {:.3}s, peak {} entries, max bond {}, wrote {}",
                method.name(),
                rep.wall_time.as_secs_f64(),
                rep.peak_entries,
                rep.result.max_bond(),
                a.out.display()
            );
            Ok(true)
        }
        Cmd::Selftest => {
            let checks = selftest::run_all();
            let mut ok = true;
            for c in &checks {
                let mark = if c.passed { "PASS" } else { "FAIL" };
                if c.detail.is_empty() {
                    println!("[{mark}] {}", c.name);
                } else {
                    println!("[{mark}] {} ({})", c.name, c.detail);
                }
                ok &= c.passed;
            }
            println!(
                "{} of {} checks passed",
                checks.iter().filter(|c| c.passed).count(),
                checks.len()
            );
            Ok(ok)
        }
    }
}

fn report(records: &[bench::BenchRecord], out: &std::path::Path) -> Result<bool> {
    let (csv, json) = emit(records, out)?;
    let failed = records.iter().filter(|r| r.status != STATUS_OK).count();
    println!(
        "{} records ({} skipped), wrote {} and {}",
        records.len(),
        failed,
        csv.display(),
        json.display()
    );
    Ok(failed == 0)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
