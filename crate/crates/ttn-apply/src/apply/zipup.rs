//! Single-sweep local compression.
//!
//! One pass from the leaves to the root: at every site the carried
//! remainders of the finished children are contracted with the local state
//! and operator tensors, the finished part (operator output plus child
//! bonds) is split off as the new site tensor by a truncated SVD, and the
//! weighted remainder moves on toward the parent. Only already-compressed
//! information enters each truncation, which is what makes the method fast
//! and comparatively inaccurate.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::tensor::{svd_trunc, LegId, Tensor, TruncationConfig};
use crate::tree::{TreeTopology, Ttno, Ttns};

use super::{
    begin_metering, block, check_compatible, meter, view_of, ApplyError, ApplyReport, SLOT_BASE,
    ZipUpOpts,
};

/// Carried remainder legs: (ζ, state bond, operator bond) of the edge.
const CARRY: u8 = 5;

fn into_site_tensor(t: Tensor, node: usize, topo: &TreeTopology) -> Result<Tensor, ApplyError> {
    let mut t = t;
    if node == topo.root() {
        t = t.squeezed(LegId::state_bond(node))?;
        t = t.squeezed(LegId::op_bond(node))?;
        t = t.with_unit_leg(LegId::state_bond(node), 0)?;
    } else {
        t = t.renamed(LegId::proj(node, CARRY), LegId::state_bond(node))?;
    }
    t = t.renamed(LegId::phys_out(node), LegId::phys_in(node))?;
    for &c in topo.children(node) {
        t = t.renamed(LegId::proj(c, CARRY), LegId::state_bond(c))?;
    }
    for s in 1..=topo.open_slots(node) {
        t = t.renamed(LegId::proj(node, SLOT_BASE + s), LegId::state_slot(node, s))?;
    }
    Ok(t.permuted(&topo.state_legs(node))?)
}

pub fn apply_zipup(
    op: &Ttno,
    state: &Ttns,
    cfg: &TruncationConfig,
    opts: ZipUpOpts,
) -> Result<ApplyReport, ApplyError> {
    check_compatible(op, state)?;
    if opts.fudge.is_nan() || opts.fudge < 1.0 {
        return Err(ApplyError::Numerical("zip-up fudge must be at least 1".into()));
    }
    begin_metering(op, state);
    let start = Instant::now();
    let topo = state.topology().clone();
    let root = topo.root();
    let order = topo.postorder();

    let mut state = state.clone();
    if opts.canonicalize {
        // center at the first site the sweep visits
        state.canonicalize_toward(order[0])?;
    }

    let slack = TruncationConfig {
        max_dim: ((opts.fudge * cfg.max_dim as f64).ceil() as usize).max(cfg.max_dim),
        tol: cfg.tol,
    };
    let mut discarded: BTreeMap<usize, f64> = BTreeMap::new();
    let mut carry: Vec<Option<Tensor>> = (0..topo.len()).map(|_| None).collect();
    let mut result: Vec<Option<Tensor>> = (0..topo.len()).map(|_| None).collect();

    for &i in &order {
        let children = topo.children(i);
        let envs: Vec<(usize, &Tensor)> =
            children.iter().map(|&c| (c, carry[c].as_ref().expect("carry"))).collect();
        // x legs: [sb(i), ζ_children.., ζ_slots.., ob(i), phys out]
        let x = block(state.tensor(i), op.tensor(i), None, None, &envs)?;
        drop(envs);
        for &c in children {
            carry[c] = None;
        }
        if i == root {
            result[i] = Some(into_site_tensor(x, i, &topo)?);
            continue;
        }
        let v = view_of(state.tensor(i));
        let mut rows = vec![LegId::phys_out(i)];
        rows.extend(v.children.iter().map(|&c| LegId::proj(c, CARRY)));
        rows.extend(v.opens.iter().map(|&s| LegId::proj(i, SLOT_BASE + s)));
        let out = svd_trunc(&x, &rows, LegId::proj(i, CARRY), &slack)?;
        *discarded.entry(i).or_default() += out.discarded_weight;
        result[i] = Some(into_site_tensor(out.u, i, &topo)?);
        carry[i] = Some(out.vt.scale_leg(LegId::proj(i, CARRY), &out.values)?);
    }

    let tensors: Vec<Tensor> = result.into_iter().map(|t| t.expect("site tensor")).collect();
    let out = Ttns::new(topo, tensors)?;
    Ok(ApplyReport {
        result: out,
        wall_time: start.elapsed(),
        peak_entries: meter::peak(),
        edge_discarded: discarded,
    })
}
