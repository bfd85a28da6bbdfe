//! Contract-then-truncate application.
//!
//! The operator is contracted into the state site by site, the paired bonds
//! of every edge are fused into one large bond, and the resulting network is
//! compressed by a sweep of truncated SVDs: root-canonicalize, then walk the
//! tree from the root keeping the orthogonality center next to every edge
//! being cut. This is the accuracy reference among the methods; it is also
//! the most expensive one.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::tensor::{contract, fuse, qr, svd_trunc, LegId, Tensor, TruncationConfig};
use crate::tree::{TreeTopology, Ttno, Ttns};

use super::{begin_metering, check_compatible, meter, ApplyError, ApplyReport};

/// Product of one operator and one state tensor with every bond pair fused
/// into the state bond name, physical output renamed to the state's
/// physical leg.
fn paired_site(
    op_t: &Tensor,
    state_t: &Tensor,
    node: usize,
    topo: &TreeTopology,
) -> Result<Tensor, ApplyError> {
    let mut w = contract(op_t, state_t, &[(LegId::phys_in(node), LegId::phys_in(node))])?;
    let mut edges = vec![node];
    edges.extend_from_slice(topo.children(node));
    for e in edges {
        w = fuse(&w, &[LegId::op_bond(e), LegId::state_bond(e)], LegId::state_bond(e))?;
    }
    for s in 1..=topo.open_slots(node) {
        w = fuse(
            &w,
            &[LegId::op_slot(node, s), LegId::state_slot(node, s)],
            LegId::state_slot(node, s),
        )?;
    }
    w = w.renamed(LegId::phys_out(node), LegId::phys_in(node))?;
    Ok(w.permuted(&topo.state_legs(node))?)
}

/// Exact product network with bond extents D_O·D_S.
pub fn contract_pairwise(op: &Ttno, state: &Ttns) -> Result<Ttns, ApplyError> {
    let topo = state.topology().clone();
    let mut tensors = Vec::with_capacity(topo.len());
    for i in 0..topo.len() {
        tensors.push(paired_site(op.tensor(i), state.tensor(i), i, &topo)?);
    }
    Ok(Ttns::new(topo, tensors)?)
}

/// Compress every edge below `node` to the target dimension, keeping the
/// orthogonality center at `node` on entry and on exit. Assumes the network
/// is canonical toward the center.
fn compress_below(
    state: &mut Ttns,
    node: usize,
    cfg: &TruncationConfig,
    discarded: &mut BTreeMap<usize, f64>,
) -> Result<(), ApplyError> {
    let topo = state.topology().clone();
    for &c in topo.children(node) {
        let bond = LegId::state_bond(c);
        let tmp = LegId::proj(c, 3);
        // cut the edge toward c: all other legs of the center are isometric
        // environments, so the local SVD is the optimal truncation
        let t = state.tensor(node);
        let rows: Vec<LegId> = t.legs().iter().copied().filter(|&l| l != bond).collect();
        let out = svd_trunc(t, &rows, tmp, cfg)?;
        *discarded.entry(c).or_default() += out.discarded_weight;
        state.set_tensor(
            node,
            out.u.renamed(tmp, bond)?.permuted(&topo.state_legs(node))?,
        );
        let weights = out.vt.scale_leg(tmp, &out.values)?;
        let moved = contract(&weights, state.tensor(c), &[(bond, bond)])?;
        state.set_tensor(c, moved.renamed(tmp, bond)?.permuted(&topo.state_legs(c))?);

        compress_below(state, c, cfg, discarded)?;

        // hand the center back up
        let (q, r) = qr(state.tensor(c), bond, tmp)?;
        state.set_tensor(c, q.renamed(tmp, bond)?.permuted(&topo.state_legs(c))?);
        let merged = contract(state.tensor(node), &r, &[(bond, bond)])?;
        state.set_tensor(
            node,
            merged.renamed(tmp, bond)?.permuted(&topo.state_legs(node))?,
        );
    }
    Ok(())
}

pub fn apply_direct(
    op: &Ttno,
    state: &Ttns,
    cfg: &TruncationConfig,
) -> Result<ApplyReport, ApplyError> {
    check_compatible(op, state)?;
    begin_metering(op, state);
    let start = Instant::now();
    let mut product = contract_pairwise(op, state)?;
    product.canonicalize_root()?;
    let mut discarded = BTreeMap::new();
    let root = product.topology().root();
    compress_below(&mut product, root, cfg, &mut discarded)?;
    Ok(ApplyReport {
        result: product,
        wall_time: start.elapsed(),
        peak_entries: meter::peak(),
        edge_discarded: discarded,
    })
}
