//! Cholesky-style compression.
//!
//! Instead of forming per-edge density matrices G = M†M and
//! eigendecomposing them, the factor M is built directly and truncated by an
//! SVD on its fused row leg; the isometric factor on the far side of the cut
//! is dropped. Three passes: upward environments (leaves to root, skipped
//! where no branching needs them), downward environments (root to leaves),
//! then a leaf-to-root sweep that assembles the new site tensors via QR.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::tensor::{contract, qr, LegId, Tensor, TruncationConfig};
use crate::tree::{TreeTopology, Ttno, Ttns};

use super::{
    begin_metering, block, check_compatible, compress_fused, meter, trivial_env, view_of,
    ApplyError, ApplyReport, DOWN, NEW, SLOT_BASE, UP,
};

/// χ legs of the slot caps of a node, in slot order.
fn slot_chis(node: usize, opens: &[u8]) -> Vec<LegId> {
    opens.iter().map(|&s| LegId::proj(node, SLOT_BASE + s)).collect()
}

/// Upward environment of the edge above the node carried by `state_t`:
/// contract the state and operator tensors with one child environment per
/// child, fuse the operator output leg with the child χ legs, compress.
/// Returns the environment (χ, state bond, operator bond) and the discarded
/// weight.
pub fn cbc_up_env_tree(
    child_envs: &[&Tensor],
    op_t: &Tensor,
    state_t: &Tensor,
    cfg: &TruncationConfig,
) -> Result<(Tensor, f64), ApplyError> {
    let v = view_of(state_t);
    if child_envs.len() != v.children.len() {
        return Err(ApplyError::Numerical(format!(
            "{} child environments given, node has {} children",
            child_envs.len(),
            v.children.len()
        )));
    }
    let envs: Vec<(usize, &Tensor)> =
        v.children.iter().copied().zip(child_envs.iter().copied()).collect();
    let x = block(state_t, op_t, None, None, &envs)?;
    let mut chis: Vec<LegId> = v.children.iter().map(|&c| LegId::proj(c, UP)).collect();
    chis.extend(slot_chis(v.node, &v.opens));
    compress_fused(&x, v.node, &chis, LegId::proj(v.node, UP), cfg)
}

/// Downward environment of the edge toward `child_k`: like the upward step
/// but consuming the parent environment and the upward environments of the
/// other children. The parent environment of the root is the trivial one.
pub fn cbc_down_env_tree(
    parent_env: &Tensor,
    sibling_envs: &[&Tensor],
    child_k: usize,
    op_t: &Tensor,
    state_t: &Tensor,
    cfg: &TruncationConfig,
) -> Result<(Tensor, f64), ApplyError> {
    let v = view_of(state_t);
    let sibs: Vec<usize> = v.children.iter().copied().filter(|&c| c != child_k).collect();
    if sibling_envs.len() != sibs.len() {
        return Err(ApplyError::Numerical(format!(
            "{} sibling environments given, node has {} other children",
            sibling_envs.len(),
            sibs.len()
        )));
    }
    let envs: Vec<(usize, &Tensor)> =
        sibs.iter().copied().zip(sibling_envs.iter().copied()).collect();
    let x = block(state_t, op_t, Some(parent_env), Some(child_k), &envs)?;
    let mut chis = vec![LegId::proj(v.node, DOWN)];
    chis.extend(sibs.iter().map(|&c| LegId::proj(c, UP)));
    chis.extend(slot_chis(v.node, &v.opens));
    compress_fused(&x, v.node, &chis, LegId::proj(child_k, DOWN), cfg)
}

/// Left-environment update of the chain sweep: the node carried by `state_t`
/// must have exactly one child. `prev` is the environment entering from the
/// parent side (trivial at the first site).
pub fn cbc_left_env_tt(
    prev: &Tensor,
    op_t: &Tensor,
    state_t: &Tensor,
    cfg: &TruncationConfig,
) -> Result<(Tensor, f64), ApplyError> {
    let v = view_of(state_t);
    if v.children.len() != 1 {
        return Err(ApplyError::Numerical("chain site with one child required".into()));
    }
    cbc_down_env_tree(prev, &[], v.children[0], op_t, state_t, cfg)
}

/// Assemble the local tensor of the final sweep: parent environment plus the
/// projected environments of all children, contracted with state and
/// operator tensors. Leg order: [parent χ, child χ..., slot χ..., operator
/// output].
fn final_block(
    state_t: &Tensor,
    op_t: &Tensor,
    parent_env: &Tensor,
    fenvs: &[(usize, &Tensor)],
) -> Result<Tensor, ApplyError> {
    block(state_t, op_t, Some(parent_env), None, fenvs)
}

/// New projected environment of a finished site (the conjugated isometry
/// contracted back into the raw block).
fn projected_env(
    state_t: &Tensor,
    op_t: &Tensor,
    q: &Tensor,
    fenvs: &[(usize, &Tensor)],
) -> Result<Tensor, ApplyError> {
    let v = view_of(state_t);
    let node = v.node;
    let x = block(state_t, op_t, None, None, fenvs)?;
    let mut pairs = vec![(LegId::phys_out(node), LegId::phys_out(node))];
    for &c in &v.children {
        pairs.push((LegId::proj(c, NEW), LegId::proj(c, NEW)));
    }
    for &s in &v.opens {
        pairs.push((LegId::proj(node, SLOT_BASE + s), LegId::proj(node, SLOT_BASE + s)));
    }
    let renv = contract(&x, &q.conj(), &pairs)?;
    Ok(renv.permuted(&[
        LegId::proj(node, NEW),
        LegId::state_bond(node),
        LegId::op_bond(node),
    ])?)
}

/// Rename the projected legs of a finished site tensor into network legs and
/// restore the canonical order.
fn into_site_tensor(t: Tensor, node: usize, topo: &TreeTopology) -> Result<Tensor, ApplyError> {
    let mut t = t;
    if node == topo.root() {
        t = t.squeezed(LegId::proj(node, DOWN))?;
        t = t.with_unit_leg(LegId::state_bond(node), 0)?;
    } else {
        t = t.renamed(LegId::proj(node, NEW), LegId::state_bond(node))?;
    }
    t = t.renamed(LegId::phys_out(node), LegId::phys_in(node))?;
    for &c in topo.children(node) {
        t = t.renamed(LegId::proj(c, NEW), LegId::state_bond(c))?;
    }
    for s in 1..=topo.open_slots(node) {
        t = t.renamed(LegId::proj(node, SLOT_BASE + s), LegId::state_slot(node, s))?;
    }
    Ok(t.permuted(&topo.state_legs(node))?)
}

fn trivial_parent_env(node: usize) -> Tensor {
    trivial_env(LegId::proj(node, DOWN), LegId::state_bond(node), LegId::op_bond(node))
}

/// One finished site of the backward sweep: contract the local block, peel
/// off the isometry by QR on the parent χ leg (except at the root, which
/// keeps the whole block and the norm), and build the projected environment
/// for the parent.
fn finish_site(
    state_t: &Tensor,
    op_t: &Tensor,
    parent_env: &Tensor,
    fenvs: &[(usize, &Tensor)],
    is_root: bool,
) -> Result<(Tensor, Option<Tensor>), ApplyError> {
    let v = view_of(state_t);
    let node = v.node;
    let s = final_block(state_t, op_t, parent_env, fenvs)?;
    if is_root {
        return Ok((s, None));
    }
    let (q, _r) = qr(&s, LegId::proj(node, DOWN), LegId::proj(node, NEW))?;
    let renv = projected_env(state_t, op_t, &q, fenvs)?;
    Ok((q, Some(renv)))
}

/// Which upward environments a sweep actually consumes: those of nodes with
/// siblings, and of everything below such a node.
fn mark_needed_up(topo: &TreeTopology) -> Vec<bool> {
    let mut need = vec![false; topo.len()];
    for &i in &topo.preorder() {
        if i == topo.root() {
            continue;
        }
        let p = topo.parent(i).unwrap();
        need[i] = topo.children(p).len() >= 2 || (p != topo.root() && need[p]);
    }
    need
}

/// Compression sweep for general trees.
pub fn cbc_apply_tree(
    op: &Ttno,
    state: &Ttns,
    cfg: &TruncationConfig,
) -> Result<ApplyReport, ApplyError> {
    check_compatible(op, state)?;
    begin_metering(op, state);
    let start = Instant::now();
    let topo = state.topology().clone();
    let root = topo.root();
    let n = topo.len();
    let mut discarded: BTreeMap<usize, f64> = BTreeMap::new();

    let need_up = mark_needed_up(&topo);
    let mut up: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
    for &i in &topo.postorder() {
        if i == root || !need_up[i] {
            continue;
        }
        let child_refs: Vec<&Tensor> =
            topo.children(i).iter().map(|&c| up[c].as_ref().expect("child env")).collect();
        let (env, w) = cbc_up_env_tree(&child_refs, op.tensor(i), state.tensor(i), cfg)?;
        *discarded.entry(i).or_default() += w;
        up[i] = Some(env);
    }

    let mut down: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
    for &i in &topo.preorder() {
        let mut produced = Vec::new();
        {
            let trivial;
            let pe: &Tensor = if i == root {
                trivial = trivial_parent_env(root);
                &trivial
            } else {
                down[i].as_ref().expect("down env")
            };
            for &k in topo.children(i) {
                let sibs: Vec<&Tensor> = topo
                    .children(i)
                    .iter()
                    .filter(|&&c| c != k)
                    .map(|&c| up[c].as_ref().expect("sibling env"))
                    .collect();
                let (env, w) =
                    cbc_down_env_tree(pe, &sibs, k, op.tensor(i), state.tensor(i), cfg)?;
                produced.push((k, env, w));
            }
        }
        for (k, env, w) in produced {
            *discarded.entry(k).or_default() += w;
            down[k] = Some(env);
        }
    }
    for slot in up.iter_mut() {
        *slot = None;
    }

    let mut fenv: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
    let mut result: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
    for &i in &topo.postorder() {
        let children = topo.children(i);
        let fe: Vec<(usize, &Tensor)> =
            children.iter().map(|&c| (c, fenv[c].as_ref().expect("final env"))).collect();
        let pe = if i == root { trivial_parent_env(root) } else { down[i].take().expect("down env") };
        let (site, renv) = finish_site(state.tensor(i), op.tensor(i), &pe, &fe, i == root)?;
        drop(fe);
        for &c in children {
            fenv[c] = None;
        }
        fenv[i] = renv;
        result[i] = Some(into_site_tensor(site, i, &topo)?);
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

/// Compression sweep specialized to chain topologies: a forward pass of
/// left-environment updates followed by the backward assembly sweep. On a
/// chain this performs exactly the same primitive operations as
/// [`cbc_apply_tree`], which never needs upward environments there.
pub fn cbc_sweep_tt(
    op: &Ttno,
    state: &Ttns,
    cfg: &TruncationConfig,
) -> Result<ApplyReport, ApplyError> {
    check_compatible(op, state)?;
    let topo = state.topology().clone();
    if (0..topo.len()).any(|i| topo.children(i).len() > 1) {
        return Err(ApplyError::Numerical("chain topology required".into()));
    }
    begin_metering(op, state);
    let start = Instant::now();
    let root = topo.root();
    let n = topo.len();
    let mut discarded: BTreeMap<usize, f64> = BTreeMap::new();

    let mut down: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
    for &i in &topo.preorder() {
        let produced = {
            let trivial;
            let pe: &Tensor = if i == root {
                trivial = trivial_parent_env(root);
                &trivial
            } else {
                down[i].as_ref().expect("left env")
            };
            match topo.children(i).first() {
                Some(&k) => Some((k, cbc_left_env_tt(pe, op.tensor(i), state.tensor(i), cfg)?)),
                None => None,
            }
        };
        if let Some((k, (env, w))) = produced {
            *discarded.entry(k).or_default() += w;
            down[k] = Some(env);
        }
    }

    let mut fenv: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
    let mut result: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
    for &i in &topo.postorder() {
        let children = topo.children(i);
        let fe: Vec<(usize, &Tensor)> =
            children.iter().map(|&c| (c, fenv[c].as_ref().expect("final env"))).collect();
        let pe = if i == root { trivial_parent_env(root) } else { down[i].take().expect("left env") };
        let (site, renv) = finish_site(state.tensor(i), op.tensor(i), &pe, &fe, i == root)?;
        drop(fe);
        for &c in children {
            fenv[c] = None;
        }
        fenv[i] = renv;
        result[i] = Some(into_site_tensor(site, i, &topo)?);
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
