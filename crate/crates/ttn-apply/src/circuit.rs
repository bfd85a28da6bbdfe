//! Tree-like random circuits and their layer-by-layer simulation.
//!
//! A batch entangles the qubits along a binomial merge pattern: level j
//! pairs block leaders at stride 2^j, so the union of all gate supports is a
//! tree on the qubits for any qubit count. Every two-qubit gate is a CNOT
//! preceded by two Haar-random one-qubit gates. The full circuit applies N
//! batches followed by their adjoints, so an exact simulation returns the
//! initial state.
//!
//! Each level becomes one operator network: gates are split into two site
//! factors by an operator SVD and routed along the unique tree path between
//! their qubits with identity passthroughs in between. Gates of one level
//! have edge-disjoint paths on the structures generated here, but overlapping
//! paths from circuit files are handled by stacking the bond spaces.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::apply::{apply, ApplyError, ApplyMethod};
use crate::tensor::{Tensor, TensorError, TruncationConfig};
use crate::tree::{make_chain, TreeError, TreeTopology, Ttno, Ttns};

type Mat = DMatrix<Complex64>;

#[derive(Debug, Error)]
pub enum CircuitError {
    #[error("matrix is not unitary")]
    NotUnitary,
    #[error("gate endpoints must differ")]
    DegenerateGate,
    #[error("need at least {0} qubits")]
    TooFewQubits(usize),
    #[error("qubit {0} outside the structure")]
    QubitOutOfRange(usize),
    #[error("gates in one level must have disjoint supports")]
    OverlappingSupports,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Apply(#[from] ApplyError),
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn unitarity_defect(m: &Mat) -> f64 {
    let n = m.nrows();
    let g = m.adjoint() * m;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let expect = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - c(expect, 0.0)).norm());
        }
    }
    worst
}

/// Haar-random 2×2 unitary: QR of a complex Gaussian matrix with the phases
/// fixed so the R diagonal is positive.
pub fn haar_1q<R: Rng + ?Sized>(rng: &mut R) -> Mat {
    let mut g = Mat::zeros(2, 2);
    for i in 0..2 {
        for j in 0..2 {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            g[(i, j)] = c(re, im);
        }
    }
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..2 {
        let d = r[(j, j)];
        if d.norm() > 0.0 {
            let p = d / d.norm();
            for i in 0..2 {
                q[(i, j)] *= p;
            }
        }
    }
    q
}

pub fn cnot() -> Mat {
    let mut m = Mat::zeros(4, 4);
    m[(0, 0)] = c(1.0, 0.0);
    m[(1, 1)] = c(1.0, 0.0);
    m[(2, 3)] = c(1.0, 0.0);
    m[(3, 2)] = c(1.0, 0.0);
    m
}

/// Two-qubit gate on (control, target) with a 4×4 unitary in the |ct⟩ basis.
#[derive(Clone, Debug)]
pub struct Gate2Q {
    pub control: usize,
    pub target: usize,
    matrix: Mat,
}

impl Gate2Q {
    pub fn new(control: usize, target: usize, matrix: Mat) -> Result<Self, CircuitError> {
        if control == target {
            return Err(CircuitError::DegenerateGate);
        }
        if matrix.shape() != (4, 4) || unitarity_defect(&matrix) > 1e-12 {
            return Err(CircuitError::NotUnitary);
        }
        Ok(Self { control, target, matrix })
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn dagger(&self) -> Self {
        Self { control: self.control, target: self.target, matrix: self.matrix.adjoint() }
    }
}

/// CNOT·(v1 ⊗ v2) on (control, target).
pub fn make_gate(
    control: usize,
    target: usize,
    v1: &Mat,
    v2: &Mat,
) -> Result<Gate2Q, CircuitError> {
    if unitarity_defect(v1) > 1e-12 || unitarity_defect(v2) > 1e-12 {
        return Err(CircuitError::NotUnitary);
    }
    Gate2Q::new(control, target, cnot() * v1.kronecker(v2))
}

/// Serializable description of one generated gate: the one-qubit factors in
/// front of the CNOT.
#[derive(Clone, Debug)]
pub struct GateSpec {
    pub control: usize,
    pub target: usize,
    pub v1: Mat,
    pub v2: Mat,
}

impl GateSpec {
    pub fn gate(&self) -> Gate2Q {
        make_gate(self.control, self.target, &self.v1, &self.v2).expect("haar factors")
    }
}

/// Gates with pairwise disjoint supports, applied simultaneously.
pub type CircuitLevel = Vec<Gate2Q>;

/// Ordered levels of one entangling batch.
#[derive(Clone, Debug)]
pub struct CircuitBatch {
    pub levels: Vec<Vec<GateSpec>>,
}

impl CircuitBatch {
    pub fn gate_count(&self) -> usize {
        self.levels.iter().map(|l| l.len()).sum()
    }
}

/// Binomial merge batch on `n_qubits`: level j holds gates (i, i+2^j) for
/// every block start i, so the batch entangles all qubits along a tree.
pub fn make_batch<R: Rng + ?Sized>(
    n_qubits: usize,
    rng: &mut R,
) -> Result<CircuitBatch, CircuitError> {
    if n_qubits < 2 {
        return Err(CircuitError::TooFewQubits(2));
    }
    let mut levels = Vec::new();
    let mut stride = 1usize;
    while stride < n_qubits {
        let mut level = Vec::new();
        let mut i = 0;
        while i + stride < n_qubits {
            level.push(GateSpec {
                control: i,
                target: i + stride,
                v1: haar_1q(rng),
                v2: haar_1q(rng),
            });
            i += 2 * stride;
        }
        if !level.is_empty() {
            levels.push(level);
        }
        stride *= 2;
    }
    Ok(CircuitBatch { levels })
}

/// Which tree carries the qubits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CircuitTopologyKind {
    Mps,
    T3nsChains,
    T3nsLeaves,
}

impl CircuitTopologyKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mps => "mps",
            Self::T3nsChains => "t3ns-chains",
            Self::T3nsLeaves => "t3ns-leaves",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mps" => Some(Self::Mps),
            "t3ns-chains" => Some(Self::T3nsChains),
            "t3ns-leaves" => Some(Self::T3nsLeaves),
            _ => None,
        }
    }
}

/// A topology together with the node carrying each qubit.
#[derive(Clone, Debug)]
pub struct CircuitStructure {
    pub topo: Arc<TreeTopology>,
    pub qubit_nodes: Vec<usize>,
}

struct TreeBuilder {
    parents: Vec<Option<usize>>,
    phys: Vec<usize>,
}

impl TreeBuilder {
    fn new() -> Self {
        Self { parents: Vec::new(), phys: Vec::new() }
    }

    fn add(&mut self, parent: Option<usize>, phys: usize) -> usize {
        self.parents.push(parent);
        self.phys.push(phys);
        self.parents.len() - 1
    }

    fn build(self) -> Result<TreeTopology, TreeError> {
        let n = self.parents.len();
        TreeTopology::new(self.parents, self.phys, vec![0; n])
    }
}

/// Qubit blocks matching the batch pattern: full blocks of 2^(⌈log2 n⌉ − 2)
/// led by their first qubit, plus a possibly shorter final block.
fn qubit_blocks(n_qubits: usize) -> Vec<Vec<usize>> {
    let levels = usize::BITS as usize - (n_qubits - 1).leading_zeros() as usize;
    let block = 1usize << levels.saturating_sub(2);
    (0..n_qubits)
        .collect::<Vec<_>>()
        .chunks(block.max(1))
        .map(|ch| ch.to_vec())
        .collect()
}

/// One block hangs below a host slot either as a chain with the leader
/// toward the root, or as a balanced subtree with the qubits on leaves.
enum BlockShape {
    Chain,
    Balanced,
}

fn place_chain(b: &mut TreeBuilder, parent: usize, qubits: &[usize], nodes: &mut [usize]) {
    let mut prev = parent;
    for &q in qubits {
        prev = b.add(Some(prev), 2);
        nodes[q] = prev;
    }
}

fn place_balanced(b: &mut TreeBuilder, parent: usize, qubits: &[usize], nodes: &mut [usize]) {
    match qubits.len() {
        0 => {}
        1 => {
            nodes[qubits[0]] = b.add(Some(parent), 2);
        }
        _ => {
            let v = b.add(Some(parent), 1);
            let mid = qubits.len().div_ceil(2);
            place_balanced(b, v, &qubits[..mid], nodes);
            place_balanced(b, v, &qubits[mid..], nodes);
        }
    }
}

/// Hang one subtree per block below a root, inserting virtual junctions so
/// no node carries more than three tree edges.
fn blocks_on_junctions(
    blocks: &[Vec<usize>],
    shape: BlockShape,
    n_qubits: usize,
) -> Result<CircuitStructure, CircuitError> {
    let mut b = TreeBuilder::new();
    let mut nodes = vec![usize::MAX; n_qubits];
    let root = b.add(None, 1);
    let mut host = root;
    let mut slots = 3usize;
    for (idx, block) in blocks.iter().enumerate() {
        if idx + 1 < blocks.len() && slots == 1 {
            host = b.add(Some(host), 1);
            slots = 2;
        }
        match shape {
            BlockShape::Chain => place_chain(&mut b, host, block, &mut nodes),
            BlockShape::Balanced => place_balanced(&mut b, host, block, &mut nodes),
        }
        slots -= 1;
    }
    let topo = Arc::new(b.build()?);
    Ok(CircuitStructure { topo, qubit_nodes: nodes })
}

pub fn structure_for(
    kind: CircuitTopologyKind,
    n_qubits: usize,
) -> Result<CircuitStructure, CircuitError> {
    if n_qubits < 2 {
        return Err(CircuitError::TooFewQubits(2));
    }
    match kind {
        CircuitTopologyKind::Mps => {
            let topo = Arc::new(make_chain(n_qubits, 2));
            Ok(CircuitStructure { topo, qubit_nodes: (0..n_qubits).collect() })
        }
        CircuitTopologyKind::T3nsChains => {
            blocks_on_junctions(&qubit_blocks(n_qubits), BlockShape::Chain, n_qubits)
        }
        CircuitTopologyKind::T3nsLeaves => {
            blocks_on_junctions(&qubit_blocks(n_qubits), BlockShape::Balanced, n_qubits)
        }
    }
}

fn path_between(topo: &TreeTopology, a: usize, b: usize) -> Vec<usize> {
    let depth = |mut x: usize| {
        let mut d = 0;
        while let Some(p) = topo.parent(x) {
            x = p;
            d += 1;
        }
        d
    };
    let (mut x, mut y) = (a, b);
    let (mut dx, mut dy) = (depth(a), depth(b));
    let mut left = vec![x];
    let mut right = vec![y];
    while dx > dy {
        x = topo.parent(x).unwrap();
        left.push(x);
        dx -= 1;
    }
    while dy > dx {
        y = topo.parent(y).unwrap();
        right.push(y);
        dy -= 1;
    }
    while x != y {
        x = topo.parent(x).unwrap();
        y = topo.parent(y).unwrap();
        left.push(x);
        right.push(y);
    }
    right.pop();
    right.reverse();
    left.extend(right);
    left
}

struct SplitGate {
    /// factors on the control side, (σ′, σ) row-major 2×2, one per bond value
    a: Vec<[Complex64; 4]>,
    /// factors on the target side
    b: Vec<[Complex64; 4]>,
}

/// Operator-Schmidt split of a two-qubit gate across its qubits; numerically
/// zero singular values are dropped, so a CNOT-type gate has rank 2.
fn split_gate(g: &Gate2Q) -> SplitGate {
    let m = Mat::from_fn(4, 4, |row, col| {
        let (ap, a) = (row / 2, row % 2);
        let (bp, bb) = (col / 2, col % 2);
        g.matrix[(ap * 2 + bp, a * 2 + bb)]
    });
    let (u, s, vt) = crate::tensor::svd_desc(m).expect("4x4 gate split");
    let cut = s[0] * 1e-13;
    let rank = s.iter().filter(|&&v| v > cut).count().max(1);
    let mut a = Vec::with_capacity(rank);
    let mut b = Vec::with_capacity(rank);
    for k in 0..rank {
        let w = s[k].sqrt();
        let mut fa = [c(0.0, 0.0); 4];
        let mut fb = [c(0.0, 0.0); 4];
        for i in 0..4 {
            fa[i] = u[(i, k)] * w;
            fb[i] = vt[(k, i)] * w;
        }
        a.push(fa);
        b.push(fb);
    }
    SplitGate { a, b }
}

enum Role {
    /// gate endpoint: factors indexed by the bond value on `edge`
    End { gate: usize, edge: usize, factors: Vec<[Complex64; 4]> },
    /// intermediate path node: the bond value passes through unchanged
    Pass { gate: usize, e_in: usize, e_out: usize },
}

/// One circuit level as an operator network on the structure. Bond extents
/// are the product of the split ranks of the gates routed through each edge
/// (1 where no gate passes); the dense matrix equals the tensor product of
/// the level's gates with identities elsewhere.
pub fn level_to_ttno(
    level: &[Gate2Q],
    structure: &CircuitStructure,
) -> Result<Ttno, CircuitError> {
    let topo = &structure.topo;
    let mut used = vec![false; structure.qubit_nodes.len()];
    for g in level {
        for q in [g.control, g.target] {
            if q >= used.len() {
                return Err(CircuitError::QubitOutOfRange(q));
            }
            if used[q] {
                return Err(CircuitError::OverlappingSupports);
            }
            used[q] = true;
        }
    }

    // route every gate, registering (gate, rank) per edge and roles per node
    let mut edge_gates: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    let mut roles: BTreeMap<usize, Vec<Role>> = BTreeMap::new();
    let splits: Vec<SplitGate> = level.iter().map(split_gate).collect();
    for (gi, g) in level.iter().enumerate() {
        let u = structure.qubit_nodes[g.control];
        let v = structure.qubit_nodes[g.target];
        let path = path_between(topo, u, v);
        let rank = splits[gi].a.len();
        // edges along the path, named by their child endpoint
        let mut edges = Vec::with_capacity(path.len() - 1);
        for w in path.windows(2) {
            let child = if topo.parent(w[0]) == Some(w[1]) { w[0] } else { w[1] };
            edges.push(child);
            edge_gates.entry(child).or_default().push((gi, rank));
        }
        roles.entry(u).or_default().push(Role::End {
            gate: gi,
            edge: edges[0],
            factors: splits[gi].a.clone(),
        });
        roles.entry(v).or_default().push(Role::End {
            gate: gi,
            edge: *edges.last().unwrap(),
            factors: splits[gi].b.clone(),
        });
        for (w_idx, &w) in path.iter().enumerate().skip(1) {
            if w_idx + 1 < path.len() {
                roles.entry(w).or_default().push(Role::Pass {
                    gate: gi,
                    e_in: edges[w_idx - 1],
                    e_out: edges[w_idx],
                });
            }
        }
    }

    let edge_extent = |e: usize| -> usize {
        edge_gates.get(&e).map_or(1, |v| v.iter().map(|&(_, r)| r).product())
    };
    // position of a gate's bond value inside an edge's composite index
    let decode = |e: usize, gate: usize, composite: usize| -> usize {
        let list = &edge_gates[&e];
        let mut rest = composite;
        for &(g, r) in list.iter().rev() {
            let k = rest % r;
            rest /= r;
            if g == gate {
                return k;
            }
        }
        unreachable!("gate registered on edge")
    };

    let mut tensors = Vec::with_capacity(topo.len());
    for i in 0..topo.len() {
        let legs = topo.op_legs(i);
        let dims: Vec<usize> = legs
            .iter()
            .map(|l| match l.kind {
                crate::tensor::LegKind::PhysIn | crate::tensor::LegKind::PhysOut => {
                    topo.phys_dim(i)
                }
                crate::tensor::LegKind::OpBond => {
                    if l.slot > 0 || l.site == topo.root() {
                        1
                    } else {
                        edge_extent(l.site)
                    }
                }
                _ => unreachable!(),
            })
            .collect();
        let total: usize = dims.iter().product();
        let mut data = vec![c(0.0, 0.0); total];
        let node_roles = roles.get(&i);
        let mut idx = vec![0usize; dims.len()];
        for slot in data.iter_mut() {
            // idx: [parent bond, σ′, σ, child bonds..., open slots...]
            let sp = idx[1];
            let si = idx[2];
            let bond_at = |e: usize| -> usize {
                if e == i {
                    idx[0]
                } else {
                    let pos = legs
                        .iter()
                        .position(|l| {
                            l.kind == crate::tensor::LegKind::OpBond && l.site == e && l.slot == 0
                        })
                        .expect("edge leg");
                    idx[pos]
                }
            };
            let mut val = c(1.0, 0.0);
            let mut endpoint = false;
            if let Some(rs) = node_roles {
                for role in rs {
                    match role {
                        Role::End { gate, edge, factors } => {
                            let k = decode(*edge, *gate, bond_at(*edge));
                            val *= factors[k][sp * 2 + si];
                            endpoint = true;
                        }
                        Role::Pass { gate, e_in, e_out } => {
                            let k1 = decode(*e_in, *gate, bond_at(*e_in));
                            let k2 = decode(*e_out, *gate, bond_at(*e_out));
                            if k1 != k2 {
                                val = c(0.0, 0.0);
                                break;
                            }
                        }
                    }
                }
            }
            if !endpoint {
                val *= if sp == si { c(1.0, 0.0) } else { c(0.0, 0.0) };
            }
            *slot = val;
            for ax in (0..dims.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < dims[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        tensors.push(Tensor::new(legs, dims, data)?);
    }
    Ok(Ttno::new(topo.clone(), tensors)?)
}

/// Level sequence of U·U†: the batches in order, then every batch reversed
/// with each gate conjugate-transposed.
pub fn full_circuit_levels(batches: &[CircuitBatch]) -> Vec<CircuitLevel> {
    let mut levels: Vec<CircuitLevel> = Vec::new();
    for batch in batches {
        for level in &batch.levels {
            levels.push(level.iter().map(|g| g.gate()).collect());
        }
    }
    for batch in batches.iter().rev() {
        for level in batch.levels.iter().rev() {
            levels.push(level.iter().rev().map(|g| g.gate().dagger()).collect());
        }
    }
    levels
}

/// Upper bound on the bond dimension needed for an exact simulation of
/// `n_batches` batches and their adjoints: per edge, 2 per crossing
/// CNOT-type gate, capped by the Hilbert dimension of the smaller side.
pub fn exact_bond_bound(
    structure: &CircuitStructure,
    batches: &[CircuitBatch],
) -> usize {
    let topo = &structure.topo;
    let n = topo.len();
    let mut in_subtree = vec![vec![false; n]; n];
    for &i in &topo.postorder() {
        let mut row = std::mem::take(&mut in_subtree[i]);
        row[i] = true;
        for &child in topo.children(i) {
            let child_row = in_subtree[child].clone();
            for (k, flag) in child_row.iter().enumerate() {
                row[k] = row[k] || *flag;
            }
        }
        in_subtree[i] = row;
    }
    let qubits_total: u32 = structure.qubit_nodes.len() as u32;
    let mut bound = 1usize;
    for e in 0..n {
        if e == topo.root() {
            continue;
        }
        let mut crossings = 0u32;
        for batch in batches {
            for level in &batch.levels {
                for g in level {
                    let u_in = in_subtree[e][structure.qubit_nodes[g.control]];
                    let v_in = in_subtree[e][structure.qubit_nodes[g.target]];
                    if u_in != v_in {
                        crossings += 2; // once in U, once in the adjoint
                    }
                }
            }
        }
        let inside: u32 = structure
            .qubit_nodes
            .iter()
            .filter(|&&q| in_subtree[e][q])
            .count() as u32;
        let split = inside.min(qubits_total - inside);
        let cap = 1usize << split.min(30);
        let growth = if crossings >= 30 { usize::MAX } else { 1usize << crossings };
        bound = bound.max(growth.min(cap));
    }
    bound
}

/// One simulation setup: N batches of the tree-like circuit followed by
/// their adjoints on the chosen structure.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub n_qubits: usize,
    pub n_batches: usize,
    pub structure: CircuitTopologyKind,
    pub method: ApplyMethod,
    pub trunc: TruncationConfig,
    pub seed: u64,
}

pub struct SimResult {
    /// ‖ψ0 − U_full ψ0‖ of the unnormalized final state
    pub err: f64,
    pub apply_seconds: f64,
    pub peak_entries: usize,
    pub levels_applied: usize,
    pub max_op_bond: usize,
}

/// Thread the state through every level of U·U† and compare against the
/// initial state without densifying.
pub fn simulate(cfg: &SimConfig) -> Result<SimResult, CircuitError> {
    let structure = structure_for(cfg.structure, cfg.n_qubits)?;
    let mut gate_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let batches: Vec<CircuitBatch> = (0..cfg.n_batches)
        .map(|_| make_batch(cfg.n_qubits, &mut gate_rng))
        .collect::<Result<_, _>>()?;
    simulate_prepared(cfg, &structure, &batches)
}

/// Same as [`simulate`] for batches already drawn (used when replaying a
/// circuit file).
pub fn simulate_prepared(
    cfg: &SimConfig,
    structure: &CircuitStructure,
    batches: &[CircuitBatch],
) -> Result<SimResult, CircuitError> {
    let mut apply_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let psi0 = Ttns::basis_zero(structure.topo.clone())?;
    let mut state = psi0.clone();
    let mut seconds = 0.0;
    let mut peak = state.total_entries();
    let mut max_op_bond = 1;
    let levels = full_circuit_levels(batches);
    let n_levels = levels.len();
    for level in &levels {
        let op = level_to_ttno(level, structure)?;
        max_op_bond = max_op_bond.max(op.max_bond());
        let t0 = Instant::now();
        let rep = apply(cfg.method, &op, &state, &cfg.trunc, &mut apply_rng)?;
        seconds += t0.elapsed().as_secs_f64();
        peak = peak.max(rep.peak_entries);
        state = rep.result;
    }
    // identity circuit leaves the state untouched, so the deviation is zero
    // by construction; otherwise measure it on the difference network
    let err = if n_levels == 0 { 0.0 } else { crate::tree::diff_norm(&psi0, &state)? };
    Ok(SimResult {
        err,
        apply_seconds: seconds,
        peak_entries: peak,
        levels_applied: n_levels,
        max_op_bond,
    })
}

/// Serialize the entangling circuit (the levels of U in application order;
/// the adjoint half is reconstructed by the consumer). One-qubit factors are
/// written with 17 significant digits.
pub fn circuit_to_json(n_qubits: usize, batches: &[CircuitBatch]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = write!(out, "{{\n  \"n_qubits\": {n_qubits},\n  \"batches\": [\n");
    let levels: Vec<&Vec<GateSpec>> = batches.iter().flat_map(|b| b.levels.iter()).collect();
    for (li, level) in levels.iter().enumerate() {
        out.push_str("    [");
        for (gi, g) in level.iter().enumerate() {
            if gi > 0 {
                out.push_str(", ");
            }
            let _ = write!(out, "{{\"control\": {}, \"target\": {}, \"v1\": [", g.control, g.target);
            let dump = |out: &mut String, m: &Mat| {
                for (k, idx) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                    if k > 0 {
                        out.push_str(", ");
                    }
                    let z = m[(idx.0, idx.1)];
                    let _ = write!(out, "{:.16e}, {:.16e}", z.re, z.im);
                }
            };
            dump(&mut out, &g.v1);
            out.push_str("], \"v2\": [");
            dump(&mut out, &g.v2);
            out.push_str("]}");
        }
        out.push_str(if li + 1 < levels.len() { "],\n" } else { "]\n" });
    }
    out.push_str("  ]\n}\n");
    out
}

/// Parse a circuit file back into its level sequence.
pub fn circuit_from_json(text: &str) -> Result<(usize, CircuitBatch), CircuitError> {
    #[derive(serde::Deserialize)]
    struct File {
        n_qubits: usize,
        batches: Vec<Vec<GateEntry>>,
    }
    #[derive(serde::Deserialize)]
    struct GateEntry {
        control: usize,
        target: usize,
        v1: Vec<f64>,
        v2: Vec<f64>,
    }
    let file: File = serde_json::from_str(text)
        .map_err(|_| CircuitError::TooFewQubits(2))
        .and_then(|f: File| if f.n_qubits < 2 { Err(CircuitError::TooFewQubits(2)) } else { Ok(f) })?;
    let to_mat = |v: &[f64]| -> Result<Mat, CircuitError> {
        if v.len() != 8 {
            return Err(CircuitError::NotUnitary);
        }
        Ok(Mat::from_fn(2, 2, |i, j| c(v[(i * 2 + j) * 2], v[(i * 2 + j) * 2 + 1])))
    };
    let mut levels = Vec::with_capacity(file.batches.len());
    for level in &file.batches {
        let mut specs = Vec::with_capacity(level.len());
        for g in level {
            if g.control >= file.n_qubits || g.target >= file.n_qubits {
                return Err(CircuitError::QubitOutOfRange(g.control.max(g.target)));
            }
            let spec =
                GateSpec { control: g.control, target: g.target, v1: to_mat(&g.v1)?, v2: to_mat(&g.v2)? };
            // validates unitarity of the factors
            make_gate(spec.control, spec.target, &spec.v1, &spec.v2)?;
            specs.push(spec);
        }
        levels.push(specs);
    }
    Ok((file.n_qubits, CircuitBatch { levels }))
}
