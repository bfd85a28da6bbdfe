//! Application of a tree operator to a tree state with bond compression.
//!
//! Five methods sit behind [`apply`]: plain contraction followed by a
//! truncation sweep ([`direct`]), density-matrix compression ([`dmc`]),
//! single-sweep local compression ([`zipup`]), successive randomized
//! compression ([`src_sketch`]) and the Cholesky-style compression ([`cbc`]).
//! All of them take the same inputs and produce an [`ApplyReport`].
//!
//! No method renormalizes: the root tensor of the result carries the norm.

pub mod cbc;
pub mod direct;
pub mod dmc;
pub mod src_sketch;
pub mod zipup;

use std::collections::BTreeMap;
use std::time::Duration;

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::tensor::{contract, fuse, meter, svd_trunc, LegId, LegKind, Tensor, TensorError, TruncationConfig};
use crate::tree::{TreeError, Ttno, Ttns};

#[derive(Debug, Error)]
pub enum ApplyError {
    #[error("operator and state topologies do not match")]
    TopologyMismatch,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("randomized sketch stayed rank-deficient after {0} attempts")]
    SketchDeficient(usize),
    #[error("numerical check failed: {0}")]
    Numerical(String),
}

/// Zip-up knobs: intermediate truncations use `ceil(fudge · max_dim)`, and
/// the state is brought into canonical form first unless disabled.
#[derive(Clone, Copy, Debug)]
pub struct ZipUpOpts {
    pub fudge: f64,
    pub canonicalize: bool,
}

impl Default for ZipUpOpts {
    fn default() -> Self {
        Self { fudge: 1.0, canonicalize: true }
    }
}

/// Randomized-compression knobs: extra sketch columns beyond the target
/// bond dimension (`None` doubles the target, the usual range-finder
/// choice), and a retry cap for degenerate sketches.
#[derive(Clone, Copy, Debug)]
pub struct SrcOpts {
    pub oversample: Option<usize>,
    pub retry_cap: usize,
}

impl SrcOpts {
    pub fn sketch_width(&self, max_dim: usize) -> usize {
        max_dim + self.oversample.unwrap_or(max_dim)
    }
}

impl Default for SrcOpts {
    fn default() -> Self {
        Self { oversample: None, retry_cap: 3 }
    }
}

/// Selector for the five application methods.
#[derive(Clone, Copy, Debug)]
pub enum ApplyMethod {
    Direct,
    Dmc,
    ZipUp(ZipUpOpts),
    Src(SrcOpts),
    Cbc,
}

impl ApplyMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Direct => "direct",
            Self::Dmc => "dmc",
            Self::ZipUp(_) => "zipup",
            Self::Src(_) => "src",
            Self::Cbc => "cbc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "direct" => Some(Self::Direct),
            "dmc" => Some(Self::Dmc),
            "zipup" => Some(Self::ZipUp(ZipUpOpts::default())),
            "src" => Some(Self::Src(SrcOpts::default())),
            "cbc" => Some(Self::Cbc),
            _ => None,
        }
    }
}

/// Outcome of one application: the compressed state, the wall time of the
/// computation, the peak number of live tensor entries, and the summed
/// discarded truncation weight per tree edge (keyed by child node).
pub struct ApplyReport {
    pub result: Ttns,
    pub wall_time: Duration,
    pub peak_entries: usize,
    pub edge_discarded: BTreeMap<usize, f64>,
}

/// Dispatch on the method. The generator is only consumed by `src`.
pub fn apply<R: Rng + ?Sized>(
    method: ApplyMethod,
    op: &Ttno,
    state: &Ttns,
    cfg: &TruncationConfig,
    rng: &mut R,
) -> Result<ApplyReport, ApplyError> {
    match method {
        ApplyMethod::Direct => direct::apply_direct(op, state, cfg),
        ApplyMethod::Dmc => dmc::apply_dmc(op, state, cfg),
        ApplyMethod::ZipUp(opts) => zipup::apply_zipup(op, state, cfg, opts),
        ApplyMethod::Src(opts) => src_sketch::apply_src(op, state, cfg, opts, rng),
        ApplyMethod::Cbc => cbc::cbc_apply_tree(op, state, cfg),
    }
}

pub(crate) fn check_compatible(op: &Ttno, state: &Ttns) -> Result<(), ApplyError> {
    if op.topology().as_ref() != state.topology().as_ref() {
        return Err(ApplyError::TopologyMismatch);
    }
    Ok(())
}

pub(crate) fn begin_metering(op: &Ttno, state: &Ttns) {
    meter::begin(op.total_entries() + state.total_entries());
}

/// Node structure read off a state tensor in canonical leg order.
pub(crate) struct NodeView {
    pub node: usize,
    pub children: Vec<usize>,
    pub opens: Vec<u8>,
}

pub(crate) fn view_of(state_t: &Tensor) -> NodeView {
    let legs = state_t.legs();
    let node = legs[0].site;
    let mut children = Vec::new();
    let mut opens = Vec::new();
    for l in &legs[2..] {
        match l.kind {
            LegKind::StateBond if l.slot == 0 => children.push(l.site),
            LegKind::StateBond => opens.push(l.slot),
            _ => {}
        }
    }
    NodeView { node, children, opens }
}

pub(crate) fn one() -> Complex64 {
    Complex64::new(1.0, 0.0)
}

/// Environment carried across one edge: legs (projected χ, state bond, operator bond).
pub(crate) fn trivial_env(chi: LegId, state_leg: LegId, op_leg: LegId) -> Tensor {
    Tensor::filled(&[(chi, 1), (state_leg, 1), (op_leg, 1)], one()).expect("valid shape")
}

/// Names used for projected legs during a sweep. Slot 0/1 are the upward and
/// downward environments of an edge, slot 2 the new bond of the result, 6/7
/// sketch legs, 9 a fusion scratch name, 10+s the cap on open slot s.
pub(crate) const UP: u8 = 0;
pub(crate) const DOWN: u8 = 1;
pub(crate) const NEW: u8 = 2;
pub(crate) const SKETCH_UP: u8 = 6;
pub(crate) const SKETCH_DOWN: u8 = 7;
pub(crate) const FUSED: u8 = 9;
pub(crate) const SLOT_BASE: u8 = 10;

/// Contract the local block at a node: state tensor, one environment per
/// child (minus an optional skipped child), caps on open slots, optionally a
/// parent environment, then the operator tensor over every bond that has an
/// environment attached.
///
/// Environments carry legs (χ, state bond, operator bond) of their edge.
/// The result keeps, in this order: the state bond of the skipped child (if
/// any), the parent χ (if any), the child and slot χ legs in visit order,
/// the operator bond of the skipped child or of the parent side (when no
/// parent environment was given), and the operator output leg.
pub(crate) fn block(
    state_t: &Tensor,
    op_t: &Tensor,
    parent_env: Option<&Tensor>,
    skip_child: Option<usize>,
    envs: &[(usize, &Tensor)],
) -> Result<Tensor, ApplyError> {
    let v = view_of(state_t);
    let node = v.node;
    let mut x = state_t.clone();
    if let Some(pe) = parent_env {
        x = contract(&x, pe, &[(LegId::state_bond(node), LegId::state_bond(node))])?;
    }
    let mut env_iter = envs.iter();
    for &c in &v.children {
        if Some(c) == skip_child {
            continue;
        }
        let &(ec, env) = env_iter
            .next()
            .ok_or_else(|| ApplyError::Numerical("missing child environment".into()))?;
        if ec != c {
            return Err(ApplyError::Numerical(format!(
                "environment for child {ec} given, expected {c}"
            )));
        }
        x = contract(&x, env, &[(LegId::state_bond(c), LegId::state_bond(c))])?;
    }
    for &s in &v.opens {
        let cap = trivial_env(
            LegId::proj(node, SLOT_BASE + s),
            LegId::state_slot(node, s),
            LegId::op_slot(node, s),
        );
        x = contract(&x, &cap, &[(LegId::state_slot(node, s), LegId::state_slot(node, s))])?;
    }

    let mut pairs = vec![(LegId::phys_in(node), LegId::phys_in(node))];
    if parent_env.is_some() {
        pairs.push((LegId::op_bond(node), LegId::op_bond(node)));
    }
    for &c in &v.children {
        if Some(c) != skip_child {
            pairs.push((LegId::op_bond(c), LegId::op_bond(c)));
        }
    }
    for &s in &v.opens {
        pairs.push((LegId::op_slot(node, s), LegId::op_slot(node, s)));
    }
    Ok(contract(&x, op_t, &pairs)?)
}

/// Fuse the operator output leg with the listed χ legs and compress the
/// fused leg. Returns the environment (χ_new, state bond, operator bond)
/// with the singular values absorbed, plus the discarded weight. The
/// isometric factor is checked and dropped.
pub(crate) fn compress_fused(
    x: &Tensor,
    node: usize,
    chi_group: &[LegId],
    new_leg: LegId,
    cfg: &TruncationConfig,
) -> Result<(Tensor, f64), ApplyError> {
    let mut group = vec![LegId::phys_out(node)];
    group.extend_from_slice(chi_group);
    let big = LegId::proj(node, FUSED);
    let fused = fuse(x, &group, big)?;
    let out = svd_trunc(&fused, &[big], new_leg, cfg)?;
    check_isometric(&out.u, new_leg)?;
    let env = out.vt.scale_leg(new_leg, &out.values)?;
    Ok((env, out.discarded_weight))
}

/// Verify that `t` contracted with its conjugate over all legs except
/// `over` gives the identity.
pub(crate) fn check_isometric(t: &Tensor, over: LegId) -> Result<(), ApplyError> {
    let primed = LegId::proj(over.site, 99);
    let bra = t.conj().renamed(over, primed)?;
    let pairs: Vec<(LegId, LegId)> = t
        .legs()
        .iter()
        .filter(|&&l| l != over)
        .map(|&l| (l, l))
        .collect();
    let gram = contract(&bra, t, &pairs)?;
    let k = gram.dims()[0];
    for i in 0..k {
        for j in 0..k {
            let expect = if i == j { 1.0 } else { 0.0 };
            if (gram.get(&[i, j]) - Complex64::new(expect, 0.0)).norm() > 1e-6 {
                return Err(ApplyError::Numerical(
                    "dropped factor is not isometric".into(),
                ));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
