//! Successive randomized compression.
//!
//! One Gaussian d×(D̄+p) matrix is drawn per site. Sketch environments are
//! accumulated over the same upward/downward schedule as the Cholesky-style
//! sweep, with the sketch legs of subtrees combined column-wise (Khatri-Rao)
//! so the sketch width never grows. The final leaf-to-root sweep
//! orthonormalizes the sketched local blocks by QR; no singular values are
//! computed, so the target dimension cannot adapt to a tolerance and the
//! output bonds are fixed at the sketch width.
//!
//! The tree schedule is a reconstruction: the published method covers
//! chains, and this module extends the same sketching idea to branches.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;

use crate::tensor::{
    contract, diag_merge, qr, random_gaussian, svd_trunc, LegId, Tensor, TruncationConfig,
};
use crate::tree::{TreeTopology, Ttno, Ttns};

use super::{
    begin_metering, check_compatible, meter, one, ApplyError, ApplyReport, SrcOpts, NEW,
    SKETCH_DOWN, SKETCH_UP,
};

/// Per-node sketch leg before it is merged into an environment.
const OMEGA: u8 = 30;

/// State/operator tensors with open slots squeezed away; slots are restored
/// on the finished site tensors.
fn squeezed(t: &Tensor) -> Result<Tensor, ApplyError> {
    let mut t = t.clone();
    for l in t.legs().to_vec() {
        if l.slot > 0 {
            t = t.squeezed(l)?;
        }
    }
    Ok(t)
}

struct Sketcher {
    topo: std::sync::Arc<TreeTopology>,
    states: Vec<Tensor>,
    ops: Vec<Tensor>,
    omegas: Vec<Tensor>,
}

impl Sketcher {
    fn merge(
        &self,
        x: Tensor,
        acc: &mut Option<LegId>,
        incoming: LegId,
    ) -> Result<Tensor, ApplyError> {
        match acc {
            None => {
                *acc = Some(incoming);
                Ok(x)
            }
            Some(l) => Ok(diag_merge(&x, *l, incoming, *l)?),
        }
    }

    /// Sketch of the subtree hanging below the edge above `i`.
    fn up(&self, i: usize, ups: &[Option<Tensor>]) -> Result<Tensor, ApplyError> {
        let mut x = self.states[i].clone();
        let mut acc: Option<LegId> = None;
        for &c in self.topo.children(i) {
            let env = ups[c].as_ref().expect("child sketch");
            x = contract(&x, env, &[(LegId::state_bond(c), LegId::state_bond(c))])?;
            x = self.merge(x, &mut acc, LegId::proj(c, SKETCH_UP))?;
        }
        let mut pairs = vec![(LegId::phys_in(i), LegId::phys_in(i))];
        for &c in self.topo.children(i) {
            pairs.push((LegId::op_bond(c), LegId::op_bond(c)));
        }
        x = contract(&x, &self.ops[i], &pairs)?;
        x = contract(&x, &self.omegas[i], &[(LegId::phys_out(i), LegId::phys_out(i))])?;
        x = self.merge(x, &mut acc, LegId::proj(i, OMEGA))?;
        let l = acc.expect("at least the site sketch");
        let x = x.renamed(l, LegId::proj(i, SKETCH_UP))?;
        Ok(x.permuted(&[
            LegId::state_bond(i),
            LegId::op_bond(i),
            LegId::proj(i, SKETCH_UP),
        ])?)
    }

    /// Sketch of everything outside the subtree of child `k` of node `i`.
    fn down(
        &self,
        i: usize,
        k: usize,
        parent: Option<&Tensor>,
        ups: &[Option<Tensor>],
    ) -> Result<Tensor, ApplyError> {
        let mut x = self.states[i].clone();
        let mut acc: Option<LegId> = None;
        match parent {
            Some(env) => {
                x = contract(&x, env, &[(LegId::state_bond(i), LegId::state_bond(i))])?;
                x = self.merge(x, &mut acc, LegId::proj(i, SKETCH_DOWN))?;
            }
            None => {
                let cap = Tensor::filled(
                    &[(LegId::state_bond(i), 1), (LegId::op_bond(i), 1)],
                    one(),
                )?;
                x = contract(&x, &cap, &[(LegId::state_bond(i), LegId::state_bond(i))])?;
            }
        }
        for &c in self.topo.children(i) {
            if c == k {
                continue;
            }
            let env = ups[c].as_ref().expect("sibling sketch");
            x = contract(&x, env, &[(LegId::state_bond(c), LegId::state_bond(c))])?;
            x = self.merge(x, &mut acc, LegId::proj(c, SKETCH_UP))?;
        }
        let mut pairs = vec![
            (LegId::phys_in(i), LegId::phys_in(i)),
            (LegId::op_bond(i), LegId::op_bond(i)),
        ];
        for &c in self.topo.children(i) {
            if c != k {
                pairs.push((LegId::op_bond(c), LegId::op_bond(c)));
            }
        }
        x = contract(&x, &self.ops[i], &pairs)?;
        x = contract(&x, &self.omegas[i], &[(LegId::phys_out(i), LegId::phys_out(i))])?;
        x = self.merge(x, &mut acc, LegId::proj(i, OMEGA))?;
        let l = acc.expect("at least the site sketch");
        let x = x.renamed(l, LegId::proj(k, SKETCH_DOWN))?;
        Ok(x.permuted(&[
            LegId::state_bond(k),
            LegId::op_bond(k),
            LegId::proj(k, SKETCH_DOWN),
        ])?)
    }

    /// Local block with the finished child environments folded in.
    /// Legs: [state bond, child news..., op bond, phys out].
    fn finished_block(
        &self,
        i: usize,
        fenvs: &[Option<Tensor>],
    ) -> Result<Tensor, ApplyError> {
        let mut x = self.states[i].clone();
        for &c in self.topo.children(i) {
            let env = fenvs[c].as_ref().expect("final env");
            x = contract(&x, env, &[(LegId::state_bond(c), LegId::state_bond(c))])?;
        }
        let mut pairs = vec![(LegId::phys_in(i), LegId::phys_in(i))];
        for &c in self.topo.children(i) {
            pairs.push((LegId::op_bond(c), LegId::op_bond(c)));
        }
        Ok(contract(&x, &self.ops[i], &pairs)?)
    }
}

fn finite(t: &Tensor) -> bool {
    t.data().iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

fn into_site_tensor(
    t: Tensor,
    node: usize,
    topo: &TreeTopology,
    is_root: bool,
) -> Result<Tensor, ApplyError> {
    let mut t = t;
    if is_root {
        t = t.squeezed(LegId::op_bond(node))?;
    } else {
        t = t.renamed(LegId::proj(node, NEW), LegId::state_bond(node))?;
    }
    t = t.renamed(LegId::phys_out(node), LegId::phys_in(node))?;
    for &c in topo.children(node) {
        t = t.renamed(LegId::proj(c, NEW), LegId::state_bond(c))?;
    }
    for s in 1..=topo.open_slots(node) {
        let at = t.rank();
        t = t.with_unit_leg(LegId::state_slot(node, s), at)?;
    }
    Ok(t.permuted(&topo.state_legs(node))?)
}

fn attempt<R: Rng + ?Sized>(
    op: &Ttno,
    state: &Ttns,
    cfg: &TruncationConfig,
    opts: SrcOpts,
    rng: &mut R,
) -> Result<Result<Ttns, ()>, ApplyError> {
    let topo = state.topology().clone();
    let root = topo.root();
    let n = topo.len();
    let width = opts.sketch_width(cfg.max_dim);

    let mut states = Vec::with_capacity(n);
    let mut ops = Vec::with_capacity(n);
    let mut omegas = Vec::with_capacity(n);
    for i in 0..n {
        states.push(squeezed(state.tensor(i))?);
        ops.push(squeezed(op.tensor(i))?);
        omegas.push(random_gaussian(
            &[(LegId::phys_out(i), topo.phys_dim(i)), (LegId::proj(i, OMEGA), width)],
            rng,
        )?);
    }
    let sk = Sketcher { topo: topo.clone(), states, ops, omegas };

    let mut ups: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
    for &i in &topo.postorder() {
        if i == root {
            continue;
        }
        ups[i] = Some(sk.up(i, &ups)?);
    }
    let mut downs: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
    for &i in &topo.preorder() {
        let mut produced = Vec::new();
        for &k in topo.children(i) {
            let parent = if i == root { None } else { Some(downs[i].as_ref().expect("down")) };
            produced.push((k, sk.down(i, k, parent, &ups)?));
        }
        for (k, env) in produced {
            downs[k] = Some(env);
        }
    }

    let mut fenvs: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
    let mut result: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
    for &i in &topo.postorder() {
        let x = sk.finished_block(i, &fenvs)?;
        for &c in topo.children(i) {
            fenvs[c] = None;
        }
        if i == root {
            result[i] = Some(into_site_tensor(x, i, &topo, true)?);
            continue;
        }
        // sketch the parent direction and orthonormalize what is finished
        let z = contract(
            &x,
            downs[i].as_ref().expect("down sketch"),
            &[
                (LegId::state_bond(i), LegId::state_bond(i)),
                (LegId::op_bond(i), LegId::op_bond(i)),
            ],
        )?;
        if !finite(&z) || z.norm_sq() == 0.0 {
            return Ok(Err(()));
        }
        let (mut q, r) = qr(&z, LegId::proj(i, SKETCH_DOWN), LegId::proj(i, NEW))?;
        if q.extent(LegId::proj(i, NEW)).unwrap() > cfg.max_dim {
            // oversampled: refine to the leading directions of the sketch
            let tmp = LegId::proj(i, 31);
            let svd = svd_trunc(&r, &[LegId::proj(i, SKETCH_DOWN)], tmp, cfg)?;
            q = contract(&svd.vt, &q, &[(LegId::proj(i, NEW), LegId::proj(i, NEW))])?
                .renamed(tmp, LegId::proj(i, NEW))?;
        }
        let renv = {
            let mut pairs = vec![(LegId::phys_out(i), LegId::phys_out(i))];
            for &c in topo.children(i) {
                pairs.push((LegId::proj(c, NEW), LegId::proj(c, NEW)));
            }
            let e = contract(&x, &q.conj(), &pairs)?;
            e.permuted(&[LegId::proj(i, NEW), LegId::state_bond(i), LegId::op_bond(i)])?
        };
        fenvs[i] = Some(renv);
        result[i] = Some(into_site_tensor(q, i, &topo, false)?);
    }

    let tensors: Vec<Tensor> = result.into_iter().map(|t| t.expect("site tensor")).collect();
    Ok(Ok(Ttns::new(topo, tensors)?))
}

pub fn apply_src<R: Rng + ?Sized>(
    op: &Ttno,
    state: &Ttns,
    cfg: &TruncationConfig,
    opts: SrcOpts,
    rng: &mut R,
) -> Result<ApplyReport, ApplyError> {
    check_compatible(op, state)?;
    begin_metering(op, state);
    let start = Instant::now();
    let attempts = opts.retry_cap.max(1);
    for _ in 0..attempts {
        match attempt(op, state, cfg, opts, rng)? {
            Ok(result) => {
                return Ok(ApplyReport {
                    result,
                    wall_time: start.elapsed(),
                    peak_entries: meter::peak(),
                    // sketch-based: no singular values, no discarded weight
                    edge_discarded: BTreeMap::new(),
                });
            }
            Err(()) => continue,
        }
    }
    Err(ApplyError::SketchDeficient(attempts))
}
