//! Brute-force reference evaluations.
//!
//! Everything in here works by explicit index loops on single entries and
//! never calls the contraction engine, so it can serve as an independent
//! oracle for it. Only usable at small sizes.

use num_complex::Complex64;

use crate::tensor::LegId;
use crate::tree::{Ttno, Ttns};

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// State vector of a network by looping over every physical configuration
/// and every virtual index. Site order is the tree preorder, first site
/// slowest, matching `Ttns::to_dense`.
pub fn state_dense(state: &Ttns) -> Vec<Complex64> {
    let topo = state.topology().clone();
    let pre = topo.preorder();
    let dims: Vec<usize> = pre.iter().map(|&i| topo.phys_dim(i)).collect();
    let total: usize = dims.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut sigma = vec![0usize; pre.len()];
    for _ in 0..total {
        let by_node: Vec<usize> = {
            let mut v = vec![0usize; topo.len()];
            for (k, &node) in pre.iter().enumerate() {
                v[node] = sigma[k];
            }
            v
        };
        let msg = state_message(state, topo.root(), &by_node);
        out.push(msg[0]);
        for ax in (0..sigma.len()).rev() {
            sigma[ax] += 1;
            if sigma[ax] < dims[ax] {
                break;
            }
            sigma[ax] = 0;
        }
    }
    out
}

/// Vector over the parent bond of `node` for fixed physical indices,
/// computed by explicit loops over all bond indices of the subtree.
fn state_message(state: &Ttns, node: usize, sigma: &[usize]) -> Vec<Complex64> {
    let topo = state.topology();
    let t = state.tensor(node);
    let children = topo.children(node);
    let child_msgs: Vec<Vec<Complex64>> =
        children.iter().map(|&c| state_message(state, c, sigma)).collect();
    let parent_dim = t.extent(LegId::state_bond(node)).unwrap();
    let open = topo.open_slots(node) as usize;

    let mut out = vec![zero(); parent_dim];
    let child_dims: Vec<usize> = child_msgs.iter().map(|m| m.len()).collect();
    let combos: usize = child_dims.iter().product();
    for (a0, slot) in out.iter_mut().enumerate() {
        let mut idx = vec![0usize; child_dims.len()];
        for _ in 0..combos {
            // full index: [parent, phys, children..., open slots (all 0)]
            let mut full = Vec::with_capacity(t.rank());
            full.push(a0);
            full.push(sigma[node]);
            full.extend_from_slice(&idx);
            full.extend(std::iter::repeat_n(0, open));
            let mut term = t.get(&full);
            for (k, m) in child_msgs.iter().enumerate() {
                term *= m[idx[k]];
            }
            *slot += term;
            for ax in (0..idx.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < child_dims[ax] {
                    break;
                }
                idx[ax] = 0;
            }
            if child_dims.is_empty() {
                break;
            }
        }
    }
    out
}

/// Dense row-major matrix of an operator network, by looping over all
/// output/input configurations. Matches `Ttno::to_dense`.
pub fn op_dense(op: &Ttno) -> Vec<Complex64> {
    let topo = op.topology().clone();
    let pre = topo.preorder();
    let dims: Vec<usize> = pre.iter().map(|&i| topo.phys_dim(i)).collect();
    let total: usize = dims.iter().product();
    let mut out = Vec::with_capacity(total * total);
    let mut row = vec![0usize; pre.len()];
    for _ in 0..total {
        let mut col = vec![0usize; pre.len()];
        for _ in 0..total {
            let mut out_by_node = vec![0usize; topo.len()];
            let mut in_by_node = vec![0usize; topo.len()];
            for (k, &node) in pre.iter().enumerate() {
                out_by_node[node] = row[k];
                in_by_node[node] = col[k];
            }
            let msg = op_message(op, topo.root(), &out_by_node, &in_by_node);
            out.push(msg[0]);
            step(&mut col, &dims);
        }
        step(&mut row, &dims);
    }
    out
}

fn op_message(op: &Ttno, node: usize, out_idx: &[usize], in_idx: &[usize]) -> Vec<Complex64> {
    let topo = op.topology();
    let t = op.tensor(node);
    let children = topo.children(node);
    let child_msgs: Vec<Vec<Complex64>> =
        children.iter().map(|&c| op_message(op, c, out_idx, in_idx)).collect();
    let parent_dim = t.extent(LegId::op_bond(node)).unwrap();
    let open = topo.open_slots(node) as usize;

    let mut out = vec![zero(); parent_dim];
    let child_dims: Vec<usize> = child_msgs.iter().map(|m| m.len()).collect();
    let combos: usize = child_dims.iter().product();
    for (b0, slot) in out.iter_mut().enumerate() {
        let mut idx = vec![0usize; child_dims.len()];
        for _ in 0..combos {
            let mut full = Vec::with_capacity(t.rank());
            full.push(b0);
            full.push(out_idx[node]);
            full.push(in_idx[node]);
            full.extend_from_slice(&idx);
            full.extend(std::iter::repeat_n(0, open));
            let mut term = t.get(&full);
            for (k, m) in child_msgs.iter().enumerate() {
                term *= m[idx[k]];
            }
            *slot += term;
            for ax in (0..idx.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < child_dims[ax] {
                    break;
                }
                idx[ax] = 0;
            }
            if child_dims.is_empty() {
                break;
            }
        }
    }
    out
}

fn step(idx: &mut [usize], dims: &[usize]) {
    for ax in (0..idx.len()).rev() {
        idx[ax] += 1;
        if idx[ax] < dims[ax] {
            return;
        }
        idx[ax] = 0;
    }
}

/// Row-major matrix times vector.
pub fn matvec(mat: &[Complex64], v: &[Complex64]) -> Vec<Complex64> {
    let n = v.len();
    assert_eq!(mat.len(), n * n);
    (0..n)
        .map(|i| (0..n).map(|j| mat[i * n + j] * v[j]).sum())
        .collect()
}

/// ‖a − b‖ / ‖b‖ for dense vectors.
pub fn vec_rel_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let norm: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (diff / norm.max(f64::MIN_POSITIVE)).sqrt()
}
