//! Benchmark orchestration: plans, deterministic seeding, metric collection
//! and CSV/JSON emission.
//!
//! A plan names one structure, a list of target bond dimensions, a list of
//! methods and a list of seeds. Every (method, D̄, seed) cell produces one
//! record; the same seed always builds the same random instance regardless
//! of method and target dimension, so methods are compared on identical
//! inputs. Cells run in a worker pool (capped by `TTN_APPLY_THREADS`) unless
//! serial timing is requested, and the output order is by cell key, not by
//! completion.

pub mod ttnio;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apply::{apply, ApplyError, ApplyMethod};
use crate::circuit::{
    exact_bond_bound, make_batch, simulate_prepared, structure_for, CircuitError,
    CircuitTopologyKind, SimConfig,
};
use crate::selftest::naive;
use crate::tensor::TruncationConfig;
use crate::tree::{rel_error, StructureFamily, StructureSpec, TreeError, Ttno, Ttns};
use crate::tree::DENSE_OP_LIMIT;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bad plan: {0}")]
    BadPlan(String),
    #[error("file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Apply(#[from] ApplyError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
}

/// One measurement. `rel_error` is relative to the experiment's reference
/// (see the reference policy in the runner docs); for circuit runs it is the
/// self-inverse deviation of the unit-norm initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub experiment: String,
    pub structure: String,
    pub method: String,
    pub d_s: usize,
    pub d_o: usize,
    pub d_bar: usize,
    pub d: usize,
    pub l: usize,
    pub n: usize,
    pub seed: u64,
    pub rel_error: f64,
    pub wall_time_seconds: f64,
    pub peak_entries: usize,
    pub status: String,
}

pub const STATUS_OK: &str = "ok";
pub const STATUS_SKIPPED_OOM: &str = "skipped_oom";

/// 64-bit mix used to derive independent per-cell seeds from one master
/// seed and a textual tag.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn derive_seed(master: u64, tag: &str) -> u64 {
    splitmix64(master ^ fnv1a64(tag))
}

fn worker_pool(serial: bool) -> rayon::ThreadPool {
    let threads = if serial {
        1
    } else {
        std::env::var("TTN_APPLY_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
            .filter(|&t| t > 0)
            .unwrap_or_else(num_threads_default)
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
}

fn num_threads_default() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Sweep plan for random states and operators on one tree family.
#[derive(Clone, Debug)]
pub struct RandomPlan {
    pub family: StructureFamily,
    pub size: usize,
    pub phys_dim: usize,
    pub d_s: usize,
    pub d_o: usize,
    pub d_bars: Vec<usize>,
    pub methods: Vec<ApplyMethod>,
    pub seeds: Vec<u64>,
    pub serial_timing: bool,
    pub mem_budget_mb: usize,
}

impl RandomPlan {
    fn check(&self) -> Result<(), BenchError> {
        if self.d_bars.is_empty() || self.methods.is_empty() || self.seeds.is_empty() {
            return Err(BenchError::BadPlan("empty sweep list".into()));
        }
        Ok(())
    }
}

/// Rough peak-entry estimate of one method on the given instance sizes,
/// used by the out-of-memory guard. The root's boundary leg is trivial and
/// does not multiply.
fn estimate_entries(
    method: &ApplyMethod,
    topo: &crate::tree::TreeTopology,
    d_s: usize,
    d_o: usize,
    d_bar: usize,
) -> usize {
    let pair = d_s.saturating_mul(d_o);
    let node_entries = |i: usize, bond: usize| -> usize {
        let mut e = topo.phys_dim(i);
        for _ in topo.children(i) {
            e = e.saturating_mul(bond);
        }
        if i != topo.root() {
            e = e.saturating_mul(bond);
        }
        e
    };
    let network = |bond: usize| -> usize {
        (0..topo.len()).fold(0usize, |a, i| a.saturating_add(node_entries(i, bond)))
    };
    match method {
        ApplyMethod::Direct => network(pair).saturating_mul(3),
        ApplyMethod::Dmc => {
            // Gram folds swap a bond pair for its conjugate copy, so the
            // largest paired block bounds the transients
            let worst = (0..topo.len())
                .map(|i| node_entries(i, pair).saturating_mul(topo.phys_dim(i)))
                .max()
                .unwrap_or(0);
            network(pair).saturating_add(worst.saturating_mul(4))
        }
        _ => {
            // environment-based sweeps
            let envs = topo.len().saturating_mul(d_bar * d_s * d_o);
            let transient = d_bar
                .saturating_mul(2)
                .saturating_mul(pair)
                .saturating_mul(4)
                .max((0..topo.len()).map(|i| node_entries(i, d_bar)).max().unwrap_or(0) * 4);
            envs.saturating_add(transient).saturating_add(network(d_s) * 2)
        }
    }
}

fn fits_budget(entries: usize, budget_mb: usize) -> bool {
    entries.saturating_mul(16) <= budget_mb.saturating_mul(1024 * 1024)
}

enum Reference {
    Dense(Vec<num_complex::Complex64>),
    Network(Ttns),
}

/// Reference policy: the dense product when the system is small enough,
/// otherwise the contract-then-truncate result at the exact product bond
/// when it fits the memory budget, otherwise the Cholesky-style sweep at the
/// exact product bond, and as a last resort the sweep at the largest target
/// dimension of the plan.
fn build_reference(
    plan: &RandomPlan,
    topo: &std::sync::Arc<crate::tree::TreeTopology>,
    op: &Ttno,
    state: &Ttns,
) -> Result<Reference, BenchError> {
    let dense_ok = topo.total_phys_dim() <= DENSE_OP_LIMIT as u128;
    if dense_ok {
        let mat = op.to_dense()?;
        let vec = state.to_dense()?;
        return Ok(Reference::Dense(naive::matvec(&mat, &vec)));
    }
    let exact = plan.d_s * plan.d_o;
    let cfg = TruncationConfig::new(exact);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    if fits_budget(
        estimate_entries(&ApplyMethod::Direct, topo, plan.d_s, plan.d_o, exact),
        plan.mem_budget_mb,
    ) {
        let rep = apply(ApplyMethod::Direct, op, state, &cfg, &mut rng)?;
        return Ok(Reference::Network(rep.result));
    }
    if fits_budget(
        estimate_entries(&ApplyMethod::Cbc, topo, plan.d_s, plan.d_o, exact),
        plan.mem_budget_mb,
    ) && exact <= 512
    {
        let rep = apply(ApplyMethod::Cbc, op, state, &cfg, &mut rng)?;
        return Ok(Reference::Network(rep.result));
    }
    let anchor = TruncationConfig::new(*plan.d_bars.iter().max().unwrap());
    let rep = apply(ApplyMethod::Cbc, op, state, &anchor, &mut rng)?;
    Ok(Reference::Network(rep.result))
}

fn error_vs_reference(result: &Ttns, reference: &Reference) -> Result<f64, BenchError> {
    match reference {
        Reference::Dense(want) => {
            let got = result.to_dense()?;
            Ok(naive::vec_rel_error(&got, want))
        }
        Reference::Network(want) => Ok(rel_error(result, want)?),
    }
}

/// Apply random operators to random states for every (method, D̄, seed) cell
/// of the plan. Instances are seeded per (seed, structure) so every method
/// sees the same inputs; sketching draws come from a separate stream.
pub fn run_random_bench(plan: &RandomPlan) -> Result<Vec<BenchRecord>, BenchError> {
    plan.check()?;
    let pool = worker_pool(plan.serial_timing);
    let spec = StructureSpec {
        family: plan.family,
        size: plan.size,
        phys_dim: plan.phys_dim,
        bond_dim: plan.d_s,
    };
    let seeds = plan.seeds.clone();
    let records: Vec<Vec<BenchRecord>> = pool.install(|| {
        use rayon::prelude::*;
        seeds
            .par_iter()
            .map(|&seed| run_random_seed(plan, &spec, seed))
            .collect::<Result<_, _>>()
    })?;
    let mut flat: Vec<BenchRecord> = records.into_iter().flatten().collect();
    flat.sort_by(|a, b| {
        (&a.method, a.d_bar, a.seed).cmp(&(&b.method, b.d_bar, b.seed))
    });
    Ok(flat)
}

fn run_random_seed(
    plan: &RandomPlan,
    spec: &StructureSpec,
    seed: u64,
) -> Result<Vec<BenchRecord>, BenchError> {
    let topo = std::sync::Arc::new(spec.build());
    let family = plan.family.name();
    let mut inst_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, family));
    let state = Ttns::random(topo.clone(), plan.d_s, &mut inst_rng)?;
    let op = Ttno::random(topo.clone(), plan.d_o, &mut inst_rng)?;
    let reference = build_reference(plan, &topo, &op, &state)?;

    let mut out = Vec::new();
    for method in &plan.methods {
        for &d_bar in &plan.d_bars {
            let mut record = BenchRecord {
                experiment: "random".into(),
                structure: family.into(),
                method: method.name().into(),
                d_s: plan.d_s,
                d_o: plan.d_o,
                d_bar,
                d: plan.phys_dim,
                l: plan.size,
                n: 0,
                seed,
                rel_error: 0.0,
                wall_time_seconds: 0.0,
                peak_entries: 0,
                status: STATUS_OK.into(),
            };
            let est = estimate_entries(method, &topo, plan.d_s, plan.d_o, d_bar);
            if !fits_budget(est, plan.mem_budget_mb) {
                record.status = STATUS_SKIPPED_OOM.into();
                out.push(record);
                continue;
            }
            let tag = format!("{family}/{}/{}/sketch", method.name(), d_bar);
            let mut sketch_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &tag));
            let cfg = TruncationConfig::new(d_bar);
            let rep = apply(*method, &op, &state, &cfg, &mut sketch_rng)?;
            record.rel_error = error_vs_reference(&rep.result, &reference)?;
            record.wall_time_seconds = rep.wall_time.as_secs_f64();
            record.peak_entries = rep.peak_entries;
            out.push(record);
        }
    }
    Ok(out)
}

/// Sweep plan for the self-inverse circuit experiment.
#[derive(Clone, Debug)]
pub struct CircuitPlan {
    pub structure: CircuitTopologyKind,
    pub n_qubits: usize,
    pub n_batches: usize,
    pub d_bars: Vec<usize>,
    pub methods: Vec<ApplyMethod>,
    pub seeds: Vec<u64>,
    pub serial_timing: bool,
    pub mem_budget_mb: usize,
}

impl CircuitPlan {
    fn check(&self) -> Result<(), BenchError> {
        if self.d_bars.is_empty() || self.methods.is_empty() || self.seeds.is_empty() {
            return Err(BenchError::BadPlan("empty sweep list".into()));
        }
        Ok(())
    }
}

pub fn run_circuit_bench(plan: &CircuitPlan) -> Result<Vec<BenchRecord>, BenchError> {
    run_circuit_impl(plan, None)
}

/// Replay fixed batches (from a circuit file) over the plan's cells instead
/// of drawing gates per seed.
pub fn run_circuit_bench_prepared(
    plan: &CircuitPlan,
    batches: &[crate::circuit::CircuitBatch],
) -> Result<Vec<BenchRecord>, BenchError> {
    run_circuit_impl(plan, Some(batches))
}

fn run_circuit_impl(
    plan: &CircuitPlan,
    fixed: Option<&[crate::circuit::CircuitBatch]>,
) -> Result<Vec<BenchRecord>, BenchError> {
    plan.check()?;
    let pool = worker_pool(plan.serial_timing);
    let cells: Vec<(u64, ApplyMethod, usize)> = plan
        .seeds
        .iter()
        .flat_map(|&s| {
            plan.methods
                .iter()
                .flat_map(move |&m| plan.d_bars.iter().map(move |&d| (s, m, d)))
        })
        .collect();
    let records: Vec<BenchRecord> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|&(seed, method, d_bar)| run_circuit_cell(plan, seed, method, d_bar, fixed))
            .collect::<Result<_, _>>()
    })?;
    let mut flat = records;
    flat.sort_by(|a, b| {
        (&a.method, a.d_bar, a.seed).cmp(&(&b.method, b.d_bar, b.seed))
    });
    Ok(flat)
}

fn run_circuit_cell(
    plan: &CircuitPlan,
    seed: u64,
    method: ApplyMethod,
    d_bar: usize,
    fixed: Option<&[crate::circuit::CircuitBatch]>,
) -> Result<BenchRecord, BenchError> {
    let gate_seed = derive_seed(seed, plan.structure.name());
    let structure = structure_for(plan.structure, plan.n_qubits)?;
    let mut record = BenchRecord {
        experiment: "circuit".into(),
        structure: plan.structure.name().into(),
        method: method.name().into(),
        d_s: 1,
        d_o: 0,
        d_bar,
        d: 2,
        l: plan.n_qubits,
        n: plan.n_batches,
        seed,
        rel_error: 0.0,
        wall_time_seconds: 0.0,
        peak_entries: 0,
        status: STATUS_OK.into(),
    };
    // guard: operator bonds stay small, state bonds reach at most d_bar
    let est = estimate_entries(&method, &structure.topo, d_bar, 4, d_bar);
    if !fits_budget(est, plan.mem_budget_mb) {
        record.status = STATUS_SKIPPED_OOM.into();
        return Ok(record);
    }
    let cfg = SimConfig {
        n_qubits: plan.n_qubits,
        n_batches: plan.n_batches,
        structure: plan.structure,
        method,
        trunc: TruncationConfig::new(d_bar),
        seed: gate_seed,
    };
    let drawn;
    let batches: &[crate::circuit::CircuitBatch] = match fixed {
        Some(b) => b,
        None => {
            let mut gate_rng = ChaCha8Rng::seed_from_u64(gate_seed);
            drawn = (0..plan.n_batches)
                .map(|_| make_batch(plan.n_qubits, &mut gate_rng))
                .collect::<Result<Vec<_>, _>>()?;
            &drawn
        }
    };
    let out = simulate_prepared(&cfg, &structure, batches)?;
    record.rel_error = out.err;
    record.wall_time_seconds = out.apply_seconds;
    record.peak_entries = out.peak_entries;
    record.d_o = out.max_op_bond;
    Ok(record)
}

/// Exact bond dimension sufficient for an errorless run of the plan's
/// circuit on its structure (gate placement depends only on the seed count).
pub fn circuit_exact_bound(plan: &CircuitPlan, seed: u64) -> Result<usize, BenchError> {
    let structure = structure_for(plan.structure, plan.n_qubits)?;
    let gate_seed = derive_seed(seed, plan.structure.name());
    let mut rng = ChaCha8Rng::seed_from_u64(gate_seed);
    let batches: Vec<_> = (0..plan.n_batches)
        .map(|_| make_batch(plan.n_qubits, &mut rng))
        .collect::<Result<_, _>>()?;
    Ok(exact_bond_bound(&structure, &batches))
}

const CSV_HEADER: &str = "experiment,structure,method,D_s,D_o,D_bar,d,L,N,seed,rel_error,wall_time_seconds,peak_entries,status";

pub fn records_to_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{:.16e},{:.16e},{},{}",
            r.experiment,
            r.structure,
            r.method,
            r.d_s,
            r.d_o,
            r.d_bar,
            r.d,
            r.l,
            r.n,
            r.seed,
            r.rel_error,
            r.wall_time_seconds,
            r.peak_entries,
            r.status
        );
    }
    out
}

pub fn records_to_json(records: &[BenchRecord]) -> String {
    serde_json::to_string_pretty(records).expect("records serialize")
}

pub fn records_from_json(text: &str) -> Result<Vec<BenchRecord>, BenchError> {
    serde_json::from_str(text).map_err(|e| BenchError::Format(e.to_string()))
}

/// Write `<base>.csv` and `<base>.json`; a trailing `.csv`/`.json` on the
/// given path is stripped first. Returns the two paths written.
pub fn emit(records: &[BenchRecord], out: &Path) -> Result<(PathBuf, PathBuf), BenchError> {
    if records.is_empty() {
        return Err(BenchError::BadPlan("no records to emit".into()));
    }
    let base = match out.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("json") => out.with_extension(""),
        _ => out.to_path_buf(),
    };
    if let Some(dir) = base.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let csv_path = base.with_extension("csv");
    let json_path = base.with_extension("json");
    std::fs::write(&csv_path, records_to_csv(records))?;
    std::fs::write(&json_path, records_to_json(records))?;
    Ok((csv_path, json_path))
}

/// Mean error per (method, D̄) over seeds; used by trend checks.
pub fn mean_errors(records: &[BenchRecord]) -> BTreeMap<(String, usize), f64> {
    mean_of(records, |r| r.rel_error)
}

/// Mean wall time per (method, D̄) over seeds.
pub fn mean_times(records: &[BenchRecord]) -> BTreeMap<(String, usize), f64> {
    mean_of(records, |r| r.wall_time_seconds)
}

fn mean_of(
    records: &[BenchRecord],
    field: impl Fn(&BenchRecord) -> f64,
) -> BTreeMap<(String, usize), f64> {
    let mut sums: BTreeMap<(String, usize), (f64, usize)> = BTreeMap::new();
    for r in records {
        if r.status == STATUS_OK {
            let e = sums.entry((r.method.clone(), r.d_bar)).or_insert((0.0, 0));
            e.0 += field(r);
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

#[cfg(test)]
mod tests;
