//! Rooted-tree topologies and the state/operator networks living on them.
//!
//! A [`TreeTopology`] is a connected, acyclic node set with one root; slot 0
//! of every node's bond legs points toward its parent and the root's parent
//! leg is an explicit extent-1 boundary. Chain topologies additionally carry
//! a dangling extent-1 slot on the last site so both chain ends look alike.
//! [`Ttns`] and [`Ttno`] attach one tensor per node; the canonical leg order
//! of a node is `[parent bond, physical leg(s), child bonds..., open slots]`.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::tensor::{contract, random_tensor, Tensor, TensorError};
use crate::tensor::{qr, LegId, LegKind};

/// Dense-state size guard for [`Ttns::to_dense`].
pub const DENSE_STATE_LIMIT: usize = 1 << 14;
/// Per-side size guard for [`Ttno::to_dense`].
pub const DENSE_OP_LIMIT: usize = 1 << 7;

/// Slot offset used to name the bra-side copy of a bond in two-network
/// contractions.
pub(crate) const BRA_SLOT: u8 = 100;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("topologies do not match")]
    TopologyMismatch,
    #[error("dense contraction too large: {size} exceeds limit {limit}")]
    TooLarge { size: u128, limit: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Rooted tree with per-node physical dimensions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeTopology {
    root: usize,
    parents: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    phys_dims: Vec<usize>,
    open_slots: Vec<u8>,
}

impl TreeTopology {
    /// Build from a parent map. Exactly one node has no parent (the root);
    /// children are ordered by ascending node id.
    pub fn new(
        parents: Vec<Option<usize>>,
        phys_dims: Vec<usize>,
        open_slots: Vec<u8>,
    ) -> Result<Self, TreeError> {
        let n = parents.len();
        if n == 0 || phys_dims.len() != n || open_slots.len() != n {
            return Err(TreeError::InvalidTopology("inconsistent node counts".into()));
        }
        if phys_dims.iter().any(|&d| d == 0) {
            return Err(TreeError::InvalidTopology("zero physical dimension".into()));
        }
        let mut root = None;
        let mut children = vec![Vec::new(); n];
        for (i, p) in parents.iter().enumerate() {
            match p {
                None => {
                    if root.replace(i).is_some() {
                        return Err(TreeError::InvalidTopology("multiple roots".into()));
                    }
                }
                Some(p) => {
                    if *p >= n {
                        return Err(TreeError::InvalidTopology(format!(
                            "parent {p} out of range"
                        )));
                    }
                    children[*p].push(i);
                }
            }
        }
        let root = root.ok_or_else(|| TreeError::InvalidTopology("no root".into()))?;
        let topo = Self { root, parents, children, phys_dims, open_slots };
        // connectivity (and thus acyclicity, since every non-root has one parent)
        if topo.preorder().len() != n {
            return Err(TreeError::InvalidTopology("not connected".into()));
        }
        Ok(topo)
    }

    pub fn len(&self) -> usize {
        self.parents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parents[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn phys_dim(&self, node: usize) -> usize {
        self.phys_dims[node]
    }

    pub fn open_slots(&self, node: usize) -> u8 {
        self.open_slots[node]
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.children[node].is_empty()
    }

    /// Depth-first order from the root, children in stored order.
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        let mut stack = vec![self.root];
        while let Some(i) = stack.pop() {
            out.push(i);
            for &c in self.children[i].iter().rev() {
                stack.push(c);
            }
        }
        out
    }

    /// Children before parents, subtrees in stored child order.
    pub fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len());
        let mut stack = vec![(self.root, false)];
        while let Some((i, expanded)) = stack.pop() {
            if expanded {
                out.push(i);
            } else {
                stack.push((i, true));
                for &c in self.children[i].iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        out
    }

    /// Number of nodes in each subtree.
    pub fn subtree_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![1usize; self.len()];
        for &i in &self.postorder() {
            for &c in self.children(i) {
                sizes[i] += sizes[c];
            }
        }
        sizes
    }

    /// Product of all physical dimensions.
    pub fn total_phys_dim(&self) -> u128 {
        self.phys_dims.iter().fold(1u128, |acc, &d| acc.saturating_mul(d as u128))
    }

    /// Canonical leg order of a state tensor on `node`.
    pub fn state_legs(&self, node: usize) -> Vec<LegId> {
        let mut legs = vec![LegId::state_bond(node), LegId::phys_in(node)];
        legs.extend(self.children(node).iter().map(|&c| LegId::state_bond(c)));
        legs.extend((1..=self.open_slots[node]).map(|s| LegId::state_slot(node, s)));
        legs
    }

    /// Canonical leg order of an operator tensor on `node`.
    pub fn op_legs(&self, node: usize) -> Vec<LegId> {
        let mut legs = vec![LegId::op_bond(node), LegId::phys_out(node), LegId::phys_in(node)];
        legs.extend(self.children(node).iter().map(|&c| LegId::op_bond(c)));
        legs.extend((1..=self.open_slots[node]).map(|s| LegId::op_slot(node, s)));
        legs
    }

    /// Re-root the tree at `new_root`; edges on the path to the old root flip
    /// orientation and children stay sorted by ascending id.
    pub fn re_rooted(&self, new_root: usize) -> Self {
        if new_root == self.root {
            return self.clone();
        }
        let n = self.len();
        let mut parents: Vec<Option<usize>> = vec![None; n];
        let mut visited = vec![false; n];
        let mut stack = vec![new_root];
        visited[new_root] = true;
        while let Some(i) = stack.pop() {
            let mut nbrs: Vec<usize> = self.children[i].to_vec();
            if let Some(p) = self.parents[i] {
                nbrs.push(p);
            }
            for b in nbrs {
                if !visited[b] {
                    visited[b] = true;
                    parents[b] = Some(i);
                    stack.push(b);
                }
            }
        }
        Self::new(parents, self.phys_dims.clone(), self.open_slots.clone())
            .expect("re-rooting preserves validity")
    }
}

/// Path-graph topology of `l` sites, root at site 0; the last site carries a
/// dangling extent-1 slot so both ends expose a boundary leg.
pub fn make_chain(l: usize, d: usize) -> TreeTopology {
    assert!(l >= 1 && d >= 1);
    let parents = (0..l).map(|i| if i == 0 { None } else { Some(i - 1) }).collect();
    let mut open = vec![0u8; l];
    open[l - 1] = 1;
    TreeTopology::new(parents, vec![d; l], open).expect("chain is valid")
}

/// One central junction (physical dimension 1) with three chains of `l`
/// physical sites each, rooted at the junction.
pub fn make_t_tree(l: usize, d: usize) -> TreeTopology {
    assert!(l >= 1 && d >= 1);
    let n = 3 * l + 1;
    let mut parents = vec![None; n];
    for arm in 0..3 {
        for k in 0..l {
            let id = 1 + arm * l + k;
            parents[id] = Some(if k == 0 { 0 } else { id - 1 });
        }
    }
    let mut phys = vec![d; n];
    phys[0] = 1;
    TreeTopology::new(parents, phys, vec![0; n]).expect("t-tree is valid")
}

/// Perfect binary tree of the given depth; internal nodes have physical
/// dimension 1, only leaves carry `d`.
pub fn make_balanced_binary(depth: usize, d: usize) -> TreeTopology {
    assert!(depth >= 1 && d >= 1);
    let n = (1usize << (depth + 1)) - 1;
    let first_leaf = (1usize << depth) - 1;
    let parents = (0..n).map(|i| if i == 0 { None } else { Some((i - 1) / 2) }).collect();
    let phys = (0..n).map(|i| if i >= first_leaf { d } else { 1 }).collect();
    TreeTopology::new(parents, phys, vec![0; n]).expect("binary tree is valid")
}

/// Fork structure: a backbone of `l` virtual sites, each carrying a chain of
/// `l` physical sites, rooted at the first backbone site.
pub fn make_ftps(l: usize, d: usize) -> TreeTopology {
    assert!(l >= 1 && d >= 1);
    let n = l * (l + 1);
    let mut parents = vec![None; n];
    let mut phys = vec![d; n];
    for i in 0..l {
        let backbone = i * (l + 1);
        phys[backbone] = 1;
        if i > 0 {
            parents[backbone] = Some((i - 1) * (l + 1));
        }
        for k in 1..=l {
            parents[backbone + k] = Some(backbone + k - 1);
        }
    }
    TreeTopology::new(parents, phys, vec![0; n]).expect("ftps is valid")
}

/// The four generated tree families plus free-form topologies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StructureFamily {
    Chain,
    TTree,
    BalancedBinary,
    Ftps,
    Custom,
}

impl StructureFamily {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Chain => "mps",
            Self::TTree => "t-tree",
            Self::BalancedBinary => "binary",
            Self::Ftps => "ftps",
            Self::Custom => "custom",
        }
    }
}

/// Size parameters of one benchmark structure.
#[derive(Clone, Copy, Debug)]
pub struct StructureSpec {
    pub family: StructureFamily,
    pub size: usize,
    pub phys_dim: usize,
    pub bond_dim: usize,
}

impl StructureSpec {
    pub fn build(&self) -> TreeTopology {
        match self.family {
            StructureFamily::Chain => make_chain(self.size, self.phys_dim),
            StructureFamily::TTree => make_t_tree(self.size, self.phys_dim),
            StructureFamily::BalancedBinary => make_balanced_binary(self.size, self.phys_dim),
            StructureFamily::Ftps => make_ftps(self.size, self.phys_dim),
            StructureFamily::Custom => panic!("custom structures are built from files"),
        }
    }
}

fn shape_for(topo: &TreeTopology, node: usize, legs: &[LegId], bond: usize) -> Vec<(LegId, usize)> {
    legs.iter()
        .map(|&l| {
            let d = match l.kind {
                LegKind::PhysIn | LegKind::PhysOut => topo.phys_dim(node),
                LegKind::StateBond | LegKind::OpBond => {
                    if l.slot > 0 || l.site == topo.root() {
                        1
                    } else {
                        bond
                    }
                }
                LegKind::Proj => unreachable!("network tensors carry no projected legs"),
            };
            (l, d)
        })
        .collect()
}

/// Tree tensor network state: one tensor per node in canonical leg order.
#[derive(Clone, Debug)]
pub struct Ttns {
    topo: Arc<TreeTopology>,
    tensors: Vec<Tensor>,
}

impl Ttns {
    pub fn new(topo: Arc<TreeTopology>, tensors: Vec<Tensor>) -> Result<Self, TreeError> {
        let s = Self { topo, tensors };
        s.validate()?;
        Ok(s)
    }

    /// Every tensor filled with uniform random entries; tree edges get extent
    /// `bond`, the root parent leg and open slots extent 1.
    pub fn random<R: Rng + ?Sized>(
        topo: Arc<TreeTopology>,
        bond: usize,
        rng: &mut R,
    ) -> Result<Self, TreeError> {
        let mut tensors = Vec::with_capacity(topo.len());
        for i in 0..topo.len() {
            let shape = shape_for(&topo, i, &topo.state_legs(i), bond);
            tensors.push(random_tensor(&shape, rng)?);
        }
        Self::new(topo, tensors)
    }

    /// Product state with every site in its first basis state.
    pub fn basis_zero(topo: Arc<TreeTopology>) -> Result<Self, TreeError> {
        let mut tensors = Vec::with_capacity(topo.len());
        for i in 0..topo.len() {
            let shape = shape_for(&topo, i, &topo.state_legs(i), 1);
            let len: usize = shape.iter().map(|&(_, d)| d).product();
            let mut data = vec![Complex64::new(0.0, 0.0); len];
            data[0] = Complex64::new(1.0, 0.0);
            tensors.push(Tensor::new(
                shape.iter().map(|&(l, _)| l).collect(),
                shape.iter().map(|&(_, d)| d).collect(),
                data,
            )?);
        }
        Self::new(topo, tensors)
    }

    /// Product state from one local vector per node.
    pub fn product_state(
        topo: Arc<TreeTopology>,
        locals: &[Vec<Complex64>],
    ) -> Result<Self, TreeError> {
        if locals.len() != topo.len() {
            return Err(TreeError::InvalidTopology("one local state per node required".into()));
        }
        let mut tensors = Vec::with_capacity(topo.len());
        for i in 0..topo.len() {
            if locals[i].len() != topo.phys_dim(i) {
                return Err(TreeError::InvalidTopology(format!(
                    "local state at node {i} has wrong dimension"
                )));
            }
            let shape = shape_for(&topo, i, &topo.state_legs(i), 1);
            let dims: Vec<usize> = shape.iter().map(|&(_, d)| d).collect();
            let legs: Vec<LegId> = shape.iter().map(|&(l, _)| l).collect();
            tensors.push(Tensor::new(legs, dims, locals[i].clone())?);
        }
        Self::new(topo, tensors)
    }

    pub fn topology(&self) -> &Arc<TreeTopology> {
        &self.topo
    }

    pub fn tensor(&self, node: usize) -> &Tensor {
        &self.tensors[node]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn set_tensor(&mut self, node: usize, t: Tensor) {
        self.tensors[node] = t;
    }

    /// Extent of the bond between `node` and its parent.
    pub fn bond_extent(&self, node: usize) -> usize {
        self.tensors[node].extent(LegId::state_bond(node)).unwrap_or(1)
    }

    pub fn max_bond(&self) -> usize {
        (0..self.topo.len()).map(|i| self.bond_extent(i)).max().unwrap_or(1)
    }

    pub fn total_entries(&self) -> usize {
        self.tensors.iter().map(|t| t.entries()).sum()
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        if self.tensors.len() != self.topo.len() {
            return Err(TreeError::InvalidTopology("one tensor per node required".into()));
        }
        for i in 0..self.topo.len() {
            let want = self.topo.state_legs(i);
            if self.tensors[i].legs() != want.as_slice() {
                return Err(TreeError::InvalidTopology(format!(
                    "node {i}: legs {:?} differ from canonical order",
                    self.tensors[i].legs()
                )));
            }
            if self.tensors[i].extent(LegId::phys_in(i)) != Some(self.topo.phys_dim(i)) {
                return Err(TreeError::InvalidTopology(format!(
                    "node {i}: physical extent mismatch"
                )));
            }
            for s in 1..=self.topo.open_slots(i) {
                if self.tensors[i].extent(LegId::state_slot(i, s)) != Some(1) {
                    return Err(TreeError::InvalidTopology(format!(
                        "node {i}: open slot {s} must have extent 1"
                    )));
                }
            }
            if i == self.topo.root() && self.tensors[i].extent(LegId::state_bond(i)) != Some(1) {
                return Err(TreeError::InvalidTopology("root parent leg must have extent 1".into()));
            }
            if let Some(p) = self.topo.parent(i) {
                let here = self.tensors[i].extent(LegId::state_bond(i));
                let there = self.tensors[p].extent(LegId::state_bond(i));
                if here != there {
                    return Err(TreeError::InvalidTopology(format!(
                        "edge {i}: extents {here:?} vs {there:?} disagree"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Full contraction to a state vector; site order is the preorder of the
    /// tree (the first site varies slowest).
    pub fn to_dense(&self) -> Result<Vec<Complex64>, TreeError> {
        let size = self.topo.total_phys_dim();
        if size > DENSE_STATE_LIMIT as u128 {
            return Err(TreeError::TooLarge { size, limit: DENSE_STATE_LIMIT });
        }
        let mut full = self.dense_fold(self.topo.root())?;
        for leg in full.legs().to_vec() {
            if leg.kind == LegKind::StateBond {
                full = full.squeezed(leg)?;
            }
        }
        Ok(full.data().to_vec())
    }

    fn dense_fold(&self, node: usize) -> Result<Tensor, TreeError> {
        let mut t = self.tensors[node].clone();
        for &c in self.topo.children(node) {
            let sub = self.dense_fold(c)?;
            t = contract(&t, &sub, &[(LegId::state_bond(c), LegId::state_bond(c))])?;
        }
        Ok(t)
    }

    pub fn norm(&self) -> f64 {
        inner(self, self).map(|z| z.re.max(0.0).sqrt()).unwrap_or(f64::NAN)
    }

    /// Bring the network into root-canonical form: every non-root tensor
    /// becomes isometric toward its parent, the root absorbs the norm. The
    /// represented state is unchanged.
    pub fn canonicalize_root(&mut self) -> Result<(), TreeError> {
        for i in self.topo.postorder() {
            if i == self.topo.root() {
                continue;
            }
            let p = self.topo.parent(i).unwrap();
            let bond = LegId::state_bond(i);
            let tmp = LegId::proj(i, BRA_SLOT);
            let (q, r) = qr(&self.tensors[i], bond, tmp)?;
            self.tensors[i] = q.renamed(tmp, bond)?.permuted(&self.topo.state_legs(i))?;
            let merged = contract(&self.tensors[p], &r, &[(bond, bond)])?;
            self.tensors[p] =
                merged.renamed(tmp, bond)?.permuted(&self.topo.state_legs(p))?;
        }
        Ok(())
    }

    /// Root-canonicalize, then move the orthogonality center down to `node`.
    pub fn canonicalize_toward(&mut self, node: usize) -> Result<(), TreeError> {
        self.canonicalize_root()?;
        let mut path = Vec::new();
        let mut cur = node;
        while let Some(p) = self.topo.parent(cur) {
            path.push(cur);
            cur = p;
        }
        path.reverse();
        for c in path {
            let p = self.topo.parent(c).unwrap();
            let bond = LegId::state_bond(c);
            let tmp = LegId::proj(c, BRA_SLOT);
            let (q, r) = qr(&self.tensors[p], bond, tmp)?;
            self.tensors[p] = q.renamed(tmp, bond)?.permuted(&self.topo.state_legs(p))?;
            let merged = contract(&r, &self.tensors[c], &[(bond, bond)])?;
            self.tensors[c] =
                merged.renamed(tmp, bond)?.permuted(&self.topo.state_legs(c))?;
        }
        Ok(())
    }

    /// Same state expressed over the tree re-rooted at `new_root`.
    pub fn re_rooted(&self, new_root: usize) -> Result<Self, TreeError> {
        if new_root == self.topo.root() {
            return Ok(self.clone());
        }
        let new_topo = Arc::new(self.topo.re_rooted(new_root));
        // Edges on the path from new_root to the old root flip; a flipped
        // edge (child u, parent v) was named after u and is now named after v.
        let mut flips = Vec::new();
        let mut cur = new_root;
        while let Some(p) = self.topo.parent(cur) {
            flips.push((cur, p));
            cur = p;
        }
        // old root loses its boundary parent leg first, freeing its name for
        // the flipped edge that now points at it
        let old_root = self.topo.root();
        let mut tensors = self.tensors.clone();
        tensors[old_root] = tensors[old_root].clone().squeezed(LegId::state_bond(old_root))?;
        for t in &mut tensors {
            let mut tt = t.clone();
            for &(u, v) in &flips {
                if tt.has_leg(LegId::state_bond(u)) {
                    // via a temporary name to avoid collisions along the path
                    tt = tt.renamed(LegId::state_bond(u), LegId::proj(v, BRA_SLOT))?;
                }
            }
            for &(_, v) in &flips {
                if tt.has_leg(LegId::proj(v, BRA_SLOT)) {
                    tt = tt.renamed(LegId::proj(v, BRA_SLOT), LegId::state_bond(v))?;
                }
            }
            *t = tt;
        }
        tensors[new_root] =
            tensors[new_root].clone().with_unit_leg(LegId::state_bond(new_root), 0)?;
        let mut out = Vec::with_capacity(tensors.len());
        for (i, t) in tensors.into_iter().enumerate() {
            out.push(t.permuted(&new_topo.state_legs(i))?);
        }
        Self::new(new_topo, out)
    }
}

/// Overlap ⟨a|b⟩ computed by an edge-local environment sweep.
pub fn inner(a: &Ttns, b: &Ttns) -> Result<Complex64, TreeError> {
    if a.topo.as_ref() != b.topo.as_ref() {
        return Err(TreeError::TopologyMismatch);
    }
    let topo = a.topo.as_ref();
    let mut envs: Vec<Option<Tensor>> = (0..topo.len()).map(|_| None).collect();
    for i in topo.postorder() {
        let mut x = b.tensors[i].clone();
        for &c in topo.children(i) {
            let env = envs[c].take().expect("child env computed");
            x = contract(&x, &env, &[(LegId::state_bond(c), LegId::state_bond(c))])?;
        }
        // bra copy with primed bond names
        let mut bra = a.tensors[i].conj();
        bra = bra.renamed(LegId::state_bond(i), LegId::state_slot(i, BRA_SLOT))?;
        for &c in topo.children(i) {
            bra = bra.renamed(LegId::state_bond(c), LegId::state_slot(c, BRA_SLOT))?;
        }
        for s in 1..=topo.open_slots(i) {
            bra = bra.renamed(LegId::state_slot(i, s), LegId::state_slot(i, BRA_SLOT + s))?;
        }
        let mut pairs = vec![(LegId::phys_in(i), LegId::phys_in(i))];
        for &c in topo.children(i) {
            pairs.push((LegId::state_slot(c, BRA_SLOT), LegId::state_slot(c, BRA_SLOT)));
        }
        for s in 1..=topo.open_slots(i) {
            pairs.push((LegId::state_slot(i, BRA_SLOT + s), LegId::state_slot(i, s)));
        }
        let env = contract(&bra, &x, &pairs)?;
        envs[i] = Some(env);
    }
    let root_env = envs[topo.root()].take().expect("root env");
    Ok(root_env.get(&[0, 0]))
}

/// x − y as one network: bond spaces are concatenated edge by edge and the
/// root tensor holds the two blocks with the second one negated.
pub fn direct_sum_diff(x: &Ttns, y: &Ttns) -> Result<Ttns, TreeError> {
    if x.topo.as_ref() != y.topo.as_ref() {
        return Err(TreeError::TopologyMismatch);
    }
    let topo = x.topo.clone();
    let root = topo.root();
    let mut tensors = Vec::with_capacity(topo.len());
    for i in 0..topo.len() {
        let tx = x.tensor(i);
        let ty = y.tensor(i);
        let legs = topo.state_legs(i);
        let mut dims = Vec::with_capacity(legs.len());
        let mut y_offsets = Vec::with_capacity(legs.len());
        for (pos, l) in legs.iter().enumerate() {
            let summed = l.kind == LegKind::StateBond
                && l.slot == 0
                && !(i == root && pos == 0);
            if summed {
                dims.push(tx.dims()[pos] + ty.dims()[pos]);
                y_offsets.push(tx.dims()[pos]);
            } else {
                dims.push(tx.dims()[pos]);
                y_offsets.push(0);
            }
        }
        let len: usize = dims.iter().product();
        let mut data = vec![Complex64::new(0.0, 0.0); len];
        let x_offsets = vec![0usize; legs.len()];
        let one = Complex64::new(1.0, 0.0);
        let minus = Complex64::new(-1.0, 0.0);
        embed_block(&mut data, &dims, tx, &x_offsets, one);
        embed_block(&mut data, &dims, ty, &y_offsets, if i == root { minus } else { one });
        tensors.push(Tensor::new(legs, dims, data)?);
    }
    Ttns::new(topo, tensors)
}

fn embed_block(
    dst: &mut [Complex64],
    dst_dims: &[usize],
    src: &Tensor,
    offsets: &[usize],
    scale: Complex64,
) {
    let mut strides = vec![1usize; dst_dims.len()];
    for k in (0..dst_dims.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dst_dims[k + 1];
    }
    let src_dims = src.dims();
    let mut idx = vec![0usize; src_dims.len()];
    let base: usize = offsets.iter().zip(&strides).map(|(o, s)| o * s).sum();
    let mut pos = base;
    for &v in src.data() {
        dst[pos] += scale * v;
        for ax in (0..src_dims.len()).rev() {
            idx[ax] += 1;
            pos += strides[ax];
            if idx[ax] < src_dims[ax] {
                break;
            }
            pos -= src_dims[ax] * strides[ax];
            idx[ax] = 0;
        }
    }
}

/// ‖x − y‖ computed on the canonicalized difference network. Unlike the
/// inner-product combination ⟨x,x⟩+⟨y,y⟩−2Re⟨x,y⟩ this does not lose the
/// small result to cancellation, so differences near machine precision stay
/// resolvable.
pub fn diff_norm(x: &Ttns, y: &Ttns) -> Result<f64, TreeError> {
    let mut d = direct_sum_diff(x, y)?;
    d.canonicalize_root()?;
    Ok(d.tensor(d.topo.root()).norm())
}

/// ‖x − reference‖ / ‖reference‖.
pub fn rel_error(x: &Ttns, reference: &Ttns) -> Result<f64, TreeError> {
    let rr = inner(reference, reference)?.re;
    Ok(diff_norm(x, reference)? / rr.max(f64::MIN_POSITIVE).sqrt())
}

/// Largest deviation of `node`'s tensor from an isometry toward its parent.
pub fn isometry_defect(state: &Ttns, node: usize) -> f64 {
    let bond = LegId::state_bond(node);
    let t = state.tensor(node);
    let bra = t.conj().renamed(bond, LegId::state_slot(node, BRA_SLOT)).unwrap();
    let pairs: Vec<(LegId, LegId)> = t
        .legs()
        .iter()
        .filter(|&&l| l != bond)
        .map(|&l| (l, l))
        .collect();
    let gram = contract(&bra, t, &pairs).unwrap();
    let k = gram.dims()[0];
    let mut defect: f64 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let expect = if i == j { 1.0 } else { 0.0 };
            defect = defect.max((gram.get(&[i, j]) - Complex64::new(expect, 0.0)).norm());
        }
    }
    defect
}

/// Tree tensor network operator: like [`Ttns`] but with an output and an
/// input physical leg per node.
#[derive(Clone, Debug)]
pub struct Ttno {
    topo: Arc<TreeTopology>,
    tensors: Vec<Tensor>,
}

impl Ttno {
    pub fn new(topo: Arc<TreeTopology>, tensors: Vec<Tensor>) -> Result<Self, TreeError> {
        let o = Self { topo, tensors };
        o.validate()?;
        Ok(o)
    }

    pub fn random<R: Rng + ?Sized>(
        topo: Arc<TreeTopology>,
        bond: usize,
        rng: &mut R,
    ) -> Result<Self, TreeError> {
        let mut tensors = Vec::with_capacity(topo.len());
        for i in 0..topo.len() {
            let shape = shape_for(&topo, i, &topo.op_legs(i), bond);
            tensors.push(random_tensor(&shape, rng)?);
        }
        Self::new(topo, tensors)
    }

    /// Identity operator: every bond trivial, every site a Kronecker delta.
    pub fn identity(topo: Arc<TreeTopology>) -> Result<Self, TreeError> {
        let mut tensors = Vec::with_capacity(topo.len());
        for i in 0..topo.len() {
            let d = topo.phys_dim(i);
            let shape = shape_for(&topo, i, &topo.op_legs(i), 1);
            let mut data = vec![Complex64::new(0.0, 0.0); d * d];
            for k in 0..d {
                data[k * d + k] = Complex64::new(1.0, 0.0);
            }
            let legs: Vec<LegId> = shape.iter().map(|&(l, _)| l).collect();
            let dims: Vec<usize> = shape.iter().map(|&(_, e)| e).collect();
            tensors.push(Tensor::new(legs, dims, data)?);
        }
        Self::new(topo, tensors)
    }

    pub fn topology(&self) -> &Arc<TreeTopology> {
        &self.topo
    }

    pub fn tensor(&self, node: usize) -> &Tensor {
        &self.tensors[node]
    }

    pub fn set_tensor(&mut self, node: usize, t: Tensor) {
        self.tensors[node] = t;
    }

    pub fn bond_extent(&self, node: usize) -> usize {
        self.tensors[node].extent(LegId::op_bond(node)).unwrap_or(1)
    }

    pub fn max_bond(&self) -> usize {
        (0..self.topo.len()).map(|i| self.bond_extent(i)).max().unwrap_or(1)
    }

    pub fn total_entries(&self) -> usize {
        self.tensors.iter().map(|t| t.entries()).sum()
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        if self.tensors.len() != self.topo.len() {
            return Err(TreeError::InvalidTopology("one tensor per node required".into()));
        }
        for i in 0..self.topo.len() {
            let want = self.topo.op_legs(i);
            if self.tensors[i].legs() != want.as_slice() {
                return Err(TreeError::InvalidTopology(format!(
                    "node {i}: operator legs differ from canonical order"
                )));
            }
            let d = Some(self.topo.phys_dim(i));
            if self.tensors[i].extent(LegId::phys_out(i)) != d
                || self.tensors[i].extent(LegId::phys_in(i)) != d
            {
                return Err(TreeError::InvalidTopology(format!(
                    "node {i}: physical extent mismatch"
                )));
            }
            if i == self.topo.root() && self.tensors[i].extent(LegId::op_bond(i)) != Some(1) {
                return Err(TreeError::InvalidTopology("root parent leg must have extent 1".into()));
            }
            if let Some(p) = self.topo.parent(i) {
                let here = self.tensors[i].extent(LegId::op_bond(i));
                let there = self.tensors[p].extent(LegId::op_bond(i));
                if here != there {
                    return Err(TreeError::InvalidTopology(format!(
                        "operator edge {i}: extents disagree"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Full contraction to a (∏d)×(∏d) row-major matrix; row and column site
    /// order is the tree preorder.
    pub fn to_dense(&self) -> Result<Vec<Complex64>, TreeError> {
        let size = self.topo.total_phys_dim();
        if size > DENSE_OP_LIMIT as u128 {
            return Err(TreeError::TooLarge { size, limit: DENSE_OP_LIMIT });
        }
        let mut full = self.dense_fold(self.topo.root())?;
        for leg in full.legs().to_vec() {
            if leg.kind == LegKind::OpBond {
                full = full.squeezed(leg)?;
            }
        }
        let pre = self.topo.preorder();
        let mut order: Vec<LegId> = pre.iter().map(|&i| LegId::phys_out(i)).collect();
        order.extend(pre.iter().map(|&i| LegId::phys_in(i)));
        let full = full.permuted(&order)?;
        Ok(full.data().to_vec())
    }

    pub fn dense_dim(&self) -> usize {
        self.topo.total_phys_dim() as usize
    }

    fn dense_fold(&self, node: usize) -> Result<Tensor, TreeError> {
        let mut t = self.tensors[node].clone();
        for &c in self.topo.children(node) {
            let sub = self.dense_fold(c)?;
            t = contract(&t, &sub, &[(LegId::op_bond(c), LegId::op_bond(c))])?;
        }
        Ok(t)
    }
}

/// Per-edge bond extents of a state, keyed by child node id.
pub fn bond_profile(state: &Ttns) -> BTreeMap<usize, usize> {
    let topo = state.topology();
    (0..topo.len())
        .filter(|&i| i != topo.root())
        .map(|i| (i, state.bond_extent(i)))
        .collect()
}
