//! Dense complex tensors with named legs.
//!
//! A [`Tensor`] stores its entries in a fixed row-major layout over the
//! stored leg order. Contraction permutes both operands into a matrix
//! product; fusion and splitting are reshapes; truncated SVD and QR go
//! through the dense kernels in [`linalg`]. All operations are pure and a
//! tensor is never mutated in place.

mod linalg;
pub mod meter;

use std::fmt;

use num_complex::Complex64;
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use linalg::{eigh_desc, hermitize, mat_from_row_major, row_major_from_mat, svd_desc, Mat};

/// What a leg indexes: a physical output/input degree of freedom, a virtual
/// bond of a state or operator network, or a projected bond created by a
/// compression step.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub enum LegKind {
    PhysOut,
    PhysIn,
    StateBond,
    OpBond,
    Proj,
}

/// Identity of one tensor leg. `(kind, site, slot)` is unique within a
/// network; slot 0 of a bond leg always points toward the parent node, so a
/// bond is named after its child endpoint.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct LegId {
    pub kind: LegKind,
    pub site: usize,
    pub slot: u8,
}

impl LegId {
    pub fn phys_in(site: usize) -> Self {
        Self { kind: LegKind::PhysIn, site, slot: 0 }
    }
    pub fn phys_out(site: usize) -> Self {
        Self { kind: LegKind::PhysOut, site, slot: 0 }
    }
    /// Bond between `site` and its parent.
    pub fn state_bond(site: usize) -> Self {
        Self { kind: LegKind::StateBond, site, slot: 0 }
    }
    /// Extra dangling state slot (boundary legs of chain-like trees).
    pub fn state_slot(site: usize, slot: u8) -> Self {
        Self { kind: LegKind::StateBond, site, slot }
    }
    pub fn op_bond(site: usize) -> Self {
        Self { kind: LegKind::OpBond, site, slot: 0 }
    }
    pub fn op_slot(site: usize, slot: u8) -> Self {
        Self { kind: LegKind::OpBond, site, slot }
    }
    /// Projected bond created by a compression sweep.
    pub fn proj(site: usize, slot: u8) -> Self {
        Self { kind: LegKind::Proj, site, slot }
    }
}

impl fmt::Display for LegId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            LegKind::PhysOut => "s'",
            LegKind::PhysIn => "s",
            LegKind::StateBond => "a",
            LegKind::OpBond => "b",
            LegKind::Proj => "x",
        };
        write!(f, "{}{}.{}", k, self.site, self.slot)
    }
}

/// How a compression step decides how many singular values survive: at most
/// `max_dim`, and when `tol > 0` only values at least `tol` times the largest
/// one. The kept count is the minimum of both rules.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TruncationConfig {
    pub max_dim: usize,
    pub tol: f64,
}

impl TruncationConfig {
    pub fn new(max_dim: usize) -> Self {
        Self { max_dim: max_dim.max(1), tol: 0.0 }
    }

    pub fn with_tol(max_dim: usize, tol: f64) -> Result<Self, TensorError> {
        if max_dim == 0 {
            return Err(TensorError::BadConfig("max_dim must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&tol) {
            return Err(TensorError::BadConfig(format!("tol {tol} outside [0, 1)")));
        }
        Ok(Self { max_dim, tol })
    }

    /// Survivor count for a descending spectrum. Ties at the cutoff keep the
    /// earlier index.
    pub fn keep_count(&self, values: &[f64]) -> usize {
        if values.is_empty() {
            return 0;
        }
        let by_tol = if self.tol > 0.0 {
            let cut = self.tol * values[0];
            values.iter().take_while(|&&v| v >= cut).count().max(1)
        } else {
            values.len()
        };
        by_tol.min(self.max_dim).max(1)
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("leg {0} not found")]
    UnknownLeg(LegId),
    #[error("duplicate leg {0}")]
    DuplicateLeg(LegId),
    #[error("extent mismatch on {a_leg}~{b_leg}: {a_dim} vs {b_dim}")]
    ExtentMismatch { a_leg: LegId, b_leg: LegId, a_dim: usize, b_dim: usize },
    #[error("dims imply {expected} entries, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("zero leg extent")]
    ZeroExtent,
    #[error("row legs must form a nonempty proper subset of the tensor legs")]
    BadRowLegs,
    #[error("splitting {leg}: part extents multiply to {parts}, leg extent is {extent}")]
    BadSplit { leg: LegId, parts: usize, extent: usize },
    #[error("invalid truncation config: {0}")]
    BadConfig(String),
    #[error("decomposition failed: {0}")]
    Decomposition(String),
}

/// Dense complex tensor. Entries are row-major over the stored leg order:
/// the last leg varies fastest.
pub struct Tensor {
    legs: Vec<LegId>,
    dims: Vec<usize>,
    data: Vec<Complex64>,
}

impl Drop for Tensor {
    fn drop(&mut self) {
        meter::on_free(self.data.len());
    }
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        Self::from_parts_unchecked(self.legs.clone(), self.dims.clone(), self.data.clone())
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.legs == other.legs && self.dims == other.dims && self.data == other.data
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor[")?;
        for (i, (l, d)) in self.legs.iter().zip(&self.dims).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{l}:{d}")?;
        }
        write!(f, "]")
    }
}

impl Tensor {
    fn from_parts_unchecked(legs: Vec<LegId>, dims: Vec<usize>, data: Vec<Complex64>) -> Self {
        meter::on_alloc(data.len());
        Self { legs, dims, data }
    }

    pub fn new(
        legs: Vec<LegId>,
        dims: Vec<usize>,
        data: Vec<Complex64>,
    ) -> Result<Self, TensorError> {
        if legs.len() != dims.len() {
            return Err(TensorError::ShapeMismatch { expected: legs.len(), got: dims.len() });
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroExtent);
        }
        for (i, l) in legs.iter().enumerate() {
            if legs[..i].contains(l) {
                return Err(TensorError::DuplicateLeg(*l));
            }
        }
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(TensorError::ShapeMismatch { expected, got: data.len() });
        }
        Ok(Self::from_parts_unchecked(legs, dims, data))
    }

    pub fn filled(
        shape: &[(LegId, usize)],
        value: Complex64,
    ) -> Result<Self, TensorError> {
        let legs: Vec<LegId> = shape.iter().map(|&(l, _)| l).collect();
        let dims: Vec<usize> = shape.iter().map(|&(_, d)| d).collect();
        let len = dims.iter().product();
        Self::new(legs, dims, vec![value; len])
    }

    pub fn zeros(shape: &[(LegId, usize)]) -> Result<Self, TensorError> {
        Self::filled(shape, Complex64::new(0.0, 0.0))
    }

    /// Identity matrix over two legs.
    pub fn identity(row: LegId, col: LegId, n: usize) -> Result<Self, TensorError> {
        let mut t = Self::zeros(&[(row, n), (col, n)])?;
        for i in 0..n {
            t.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        Ok(t)
    }

    pub fn rank(&self) -> usize {
        self.legs.len()
    }

    pub fn legs(&self) -> &[LegId] {
        &self.legs
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn entries(&self) -> usize {
        self.data.len()
    }

    pub fn has_leg(&self, leg: LegId) -> bool {
        self.legs.contains(&leg)
    }

    pub fn position(&self, leg: LegId) -> Option<usize> {
        self.legs.iter().position(|&l| l == leg)
    }

    pub fn extent(&self, leg: LegId) -> Option<usize> {
        self.position(leg).map(|p| self.dims[p])
    }

    /// Entry at a full multi-index in stored leg order.
    pub fn get(&self, idx: &[usize]) -> Complex64 {
        debug_assert_eq!(idx.len(), self.rank());
        let mut pos = 0;
        for (i, &ix) in idx.iter().enumerate() {
            debug_assert!(ix < self.dims[i]);
            pos = pos * self.dims[i] + ix;
        }
        self.data[pos]
    }

    /// Value of a rank-0 tensor.
    pub fn scalar(&self) -> Complex64 {
        assert!(self.legs.is_empty(), "scalar() on a tensor of rank {}", self.rank());
        self.data[0]
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn conj(&self) -> Self {
        Self::from_parts_unchecked(
            self.legs.clone(),
            self.dims.clone(),
            self.data.iter().map(|z| z.conj()).collect(),
        )
    }

    pub fn scaled(mut self, f: Complex64) -> Self {
        for z in &mut self.data {
            *z *= f;
        }
        self
    }

    /// Rename a leg in place; data untouched.
    pub fn renamed(mut self, old: LegId, new: LegId) -> Result<Self, TensorError> {
        let p = self.position(old).ok_or(TensorError::UnknownLeg(old))?;
        if old != new && self.legs.contains(&new) {
            return Err(TensorError::DuplicateLeg(new));
        }
        self.legs[p] = new;
        Ok(self)
    }

    /// Elementwise sum; `other` may carry the same legs in any order.
    pub fn add(&self, other: &Self) -> Result<Self, TensorError> {
        let o = other.permuted(&self.legs)?;
        if o.dims != self.dims {
            return Err(TensorError::ShapeMismatch {
                expected: self.entries(),
                got: o.entries(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&o.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self::from_parts_unchecked(self.legs.clone(), self.dims.clone(), data))
    }

    /// Multiply all slices along `leg` by real weights.
    pub fn scale_leg(mut self, leg: LegId, weights: &[f64]) -> Result<Self, TensorError> {
        let p = self.position(leg).ok_or(TensorError::UnknownLeg(leg))?;
        if weights.len() != self.dims[p] {
            return Err(TensorError::ShapeMismatch {
                expected: self.dims[p],
                got: weights.len(),
            });
        }
        let inner: usize = self.dims[p + 1..].iter().product();
        let outer: usize = self.dims[..p].iter().product();
        for o in 0..outer {
            for (i, &w) in weights.iter().enumerate() {
                let base = (o * self.dims[p] + i) * inner;
                for z in &mut self.data[base..base + inner] {
                    *z *= w;
                }
            }
        }
        Ok(self)
    }

    /// Remove an extent-1 leg; data untouched.
    pub fn squeezed(mut self, leg: LegId) -> Result<Self, TensorError> {
        let p = self.position(leg).ok_or(TensorError::UnknownLeg(leg))?;
        if self.dims[p] != 1 {
            return Err(TensorError::BadSplit { leg, parts: 1, extent: self.dims[p] });
        }
        self.legs.remove(p);
        self.dims.remove(p);
        Ok(self)
    }

    /// Insert an extent-1 leg at `pos`; data untouched.
    pub fn with_unit_leg(mut self, leg: LegId, pos: usize) -> Result<Self, TensorError> {
        if self.legs.contains(&leg) {
            return Err(TensorError::DuplicateLeg(leg));
        }
        self.legs.insert(pos, leg);
        self.dims.insert(pos, 1);
        Ok(self)
    }

    /// Reorder legs; entries are rearranged to keep the row-major convention.
    pub fn permuted(&self, order: &[LegId]) -> Result<Self, TensorError> {
        if order == self.legs {
            return Ok(self.clone());
        }
        if order.len() != self.rank() {
            return Err(TensorError::ShapeMismatch { expected: self.rank(), got: order.len() });
        }
        let mut perm = Vec::with_capacity(order.len());
        for &l in order {
            let p = self.position(l).ok_or(TensorError::UnknownLeg(l))?;
            if perm.contains(&p) {
                return Err(TensorError::DuplicateLeg(l));
            }
            perm.push(p);
        }
        let old_strides = row_major_strides(&self.dims);
        let new_dims: Vec<usize> = perm.iter().map(|&p| self.dims[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| old_strides[p]).collect();
        let mut out = vec![Complex64::new(0.0, 0.0); self.data.len()];
        gather(&self.data, &mut out, &new_dims, &src_strides);
        Ok(Self::from_parts_unchecked(order.to_vec(), new_dims, out))
    }

    fn into_data(mut self) -> Vec<Complex64> {
        let d = std::mem::take(&mut self.data);
        meter::on_free(d.len());
        d
    }
}

fn row_major_strides(dims: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; dims.len()];
    for i in (0..dims.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    strides
}

/// Gather `src` into `dst` where `dst` is row-major over `dims` and element
/// (i0, i1, ...) comes from `src[Σ i_k · src_strides[k]]`.
fn gather(src: &[Complex64], dst: &mut [Complex64], dims: &[usize], src_strides: &[usize]) {
    let rank = dims.len();
    if rank == 0 {
        dst[0] = src[0];
        return;
    }
    let inner = dims[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let mut idx = vec![0usize; rank - 1];
    let mut base = 0usize;
    let mut pos = 0;
    loop {
        if inner_stride == 1 {
            dst[pos..pos + inner].copy_from_slice(&src[base..base + inner]);
        } else {
            let mut s = base;
            for d in &mut dst[pos..pos + inner] {
                *d = src[s];
                s += inner_stride;
            }
        }
        pos += inner;
        // odometer over the outer axes
        let mut ax = rank - 1;
        loop {
            if ax == 0 {
                return;
            }
            ax -= 1;
            idx[ax] += 1;
            base += src_strides[ax];
            if idx[ax] < dims[ax] {
                break;
            }
            idx[ax] = 0;
            base -= dims[ax] * src_strides[ax];
        }
    }
}

/// Contract `a` with `b` over the given leg pairs. The result carries the
/// unpaired legs of `a` (in their original order) followed by those of `b`;
/// its values are the plain index sums.
pub fn contract(
    a: &Tensor,
    b: &Tensor,
    pairs: &[(LegId, LegId)],
) -> Result<Tensor, TensorError> {
    let mut a_paired = Vec::with_capacity(pairs.len());
    let mut b_paired = Vec::with_capacity(pairs.len());
    for &(la, lb) in pairs {
        let pa = a.position(la).ok_or(TensorError::UnknownLeg(la))?;
        let pb = b.position(lb).ok_or(TensorError::UnknownLeg(lb))?;
        if a.dims[pa] != b.dims[pb] {
            return Err(TensorError::ExtentMismatch {
                a_leg: la,
                b_leg: lb,
                a_dim: a.dims[pa],
                b_dim: b.dims[pb],
            });
        }
        if a_paired.contains(&la) {
            return Err(TensorError::DuplicateLeg(la));
        }
        if b_paired.contains(&lb) {
            return Err(TensorError::DuplicateLeg(lb));
        }
        a_paired.push(la);
        b_paired.push(lb);
    }
    let a_free: Vec<LegId> =
        a.legs.iter().copied().filter(|l| !a_paired.contains(l)).collect();
    let b_free: Vec<LegId> =
        b.legs.iter().copied().filter(|l| !b_paired.contains(l)).collect();
    for l in &b_free {
        if a_free.contains(l) {
            return Err(TensorError::DuplicateLeg(*l));
        }
    }

    let mut a_order = a_free.clone();
    a_order.extend_from_slice(&a_paired);
    let mut b_order = b_paired.clone();
    b_order.extend_from_slice(&b_free);
    let pa = a.permuted(&a_order)?;
    let pb = b.permuted(&b_order)?;

    let k: usize = pairs
        .iter()
        .map(|&(la, _)| a.extent(la).unwrap())
        .product();
    let m = pa.entries() / k;
    let n = pb.entries() / k;
    let mut dims = pa.dims[..a_free.len()].to_vec();
    dims.extend_from_slice(&pb.dims[pairs.len()..]);
    let mut legs = a_free;
    legs.extend_from_slice(&b_free);

    let data = linalg::matmul_row_major(m, k, n, pa.into_data(), pb.into_data());
    Tensor::new(legs, dims, data)
}

/// Merge a group of legs into one. The fused leg sits at the position of the
/// first group member; fusing a single leg is a rename. Together with
/// [`split`] under matching extents this is the identity on the data.
pub fn fuse(t: &Tensor, group: &[LegId], new: LegId) -> Result<Tensor, TensorError> {
    if group.is_empty() {
        return Err(TensorError::BadRowLegs);
    }
    for (i, l) in group.iter().enumerate() {
        if !t.has_leg(*l) {
            return Err(TensorError::UnknownLeg(*l));
        }
        if group[..i].contains(l) {
            return Err(TensorError::DuplicateLeg(*l));
        }
    }
    let anchor = t.position(group[0]).unwrap();
    let mut order = Vec::with_capacity(t.rank());
    for (i, l) in t.legs.iter().enumerate() {
        if i == anchor {
            order.extend_from_slice(group);
        } else if !group.contains(l) {
            order.push(*l);
        }
    }
    let mut p = t.permuted(&order)?;
    let at = order.iter().position(|l| *l == group[0]).unwrap();
    let fused: usize = p.dims[at..at + group.len()].iter().product();
    p.legs.splice(at..at + group.len(), [new]);
    p.dims.splice(at..at + group.len(), [fused]);
    if p.legs.iter().filter(|&&l| l == new).count() > 1 {
        return Err(TensorError::DuplicateLeg(new));
    }
    Ok(p)
}

/// Split a leg into consecutive parts whose extents multiply to the leg
/// extent. Inverse of [`fuse`] under matching order; data untouched.
pub fn split(
    t: &Tensor,
    leg: LegId,
    parts: &[(LegId, usize)],
) -> Result<Tensor, TensorError> {
    let pos = t.position(leg).ok_or(TensorError::UnknownLeg(leg))?;
    let prod: usize = parts.iter().map(|&(_, d)| d).product();
    if parts.is_empty() || prod != t.dims[pos] {
        return Err(TensorError::BadSplit { leg, parts: prod, extent: t.dims[pos] });
    }
    if parts.iter().any(|&(_, d)| d == 0) {
        return Err(TensorError::ZeroExtent);
    }
    let mut out = t.clone();
    out.legs.splice(pos..pos + 1, parts.iter().map(|&(l, _)| l));
    out.dims.splice(pos..pos + 1, parts.iter().map(|&(_, d)| d));
    for (i, l) in out.legs.iter().enumerate() {
        if out.legs[..i].contains(l) {
            return Err(TensorError::DuplicateLeg(*l));
        }
    }
    Ok(out)
}

/// Diagonal slice over two legs of equal extent:
/// `out[..., l, ...] = t[..., l, ..., l, ...]`. Leg `a` keeps its position
/// under the name `new`, leg `b` disappears. This realizes the column-wise
/// (Khatri-Rao) combination of sketch legs.
pub fn diag_merge(t: &Tensor, a: LegId, b: LegId, new: LegId) -> Result<Tensor, TensorError> {
    let pa = t.position(a).ok_or(TensorError::UnknownLeg(a))?;
    let pb = t.position(b).ok_or(TensorError::UnknownLeg(b))?;
    if pa == pb {
        return Err(TensorError::DuplicateLeg(a));
    }
    if t.dims[pa] != t.dims[pb] {
        return Err(TensorError::ExtentMismatch {
            a_leg: a,
            b_leg: b,
            a_dim: t.dims[pa],
            b_dim: t.dims[pb],
        });
    }
    let old_strides = row_major_strides(&t.dims);
    let mut legs = Vec::with_capacity(t.rank() - 1);
    let mut dims = Vec::with_capacity(t.rank() - 1);
    let mut src_strides = Vec::with_capacity(t.rank() - 1);
    for i in 0..t.rank() {
        if i == pb {
            continue;
        }
        legs.push(if i == pa { new } else { t.legs[i] });
        dims.push(t.dims[i]);
        src_strides.push(if i == pa {
            old_strides[pa] + old_strides[pb]
        } else {
            old_strides[i]
        });
    }
    if legs.iter().filter(|&&l| l == new).count() > 1 {
        return Err(TensorError::DuplicateLeg(new));
    }
    let len: usize = dims.iter().product();
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    gather(&t.data, &mut out, &dims, &src_strides);
    Tensor::new(legs, dims, out)
}

/// Result of [`svd_trunc`]: `t ≈ u · diag(values) · vt`, `u` isometric over
/// `new_leg`, values descending, and `discarded_weight` the summed squares of
/// the dropped singular values.
pub struct TruncatedSvd {
    pub u: Tensor,
    pub values: Vec<f64>,
    pub vt: Tensor,
    pub discarded_weight: f64,
}

/// Truncated singular value decomposition with `row_legs` as the row index.
pub fn svd_trunc(
    t: &Tensor,
    row_legs: &[LegId],
    new_leg: LegId,
    cfg: &TruncationConfig,
) -> Result<TruncatedSvd, TensorError> {
    if row_legs.is_empty() || row_legs.len() >= t.rank() {
        return Err(TensorError::BadRowLegs);
    }
    let col_legs: Vec<LegId> =
        t.legs.iter().copied().filter(|l| !row_legs.contains(l)).collect();
    if col_legs.len() + row_legs.len() != t.rank() {
        return Err(TensorError::BadRowLegs);
    }
    let mut order = row_legs.to_vec();
    order.extend_from_slice(&col_legs);
    let p = t.permuted(&order)?;
    let row_dims = p.dims[..row_legs.len()].to_vec();
    let col_dims = p.dims[row_legs.len()..].to_vec();
    let m: usize = row_dims.iter().product();
    let n: usize = col_dims.iter().product();
    let mat = mat_from_row_major(m, n, &p.data);
    let (u, s, vt) = linalg::svd_desc(mat)?;

    let k = cfg.keep_count(&s);
    let discarded_weight: f64 = s[k..].iter().map(|v| v * v).sum();

    let mut u_data = Vec::with_capacity(m * k);
    for i in 0..m {
        for j in 0..k {
            u_data.push(u[(i, j)]);
        }
    }
    let mut u_legs = row_legs.to_vec();
    u_legs.push(new_leg);
    let mut u_dims = row_dims;
    u_dims.push(k);
    let u_t = Tensor::new(u_legs, u_dims, u_data)?;

    let mut v_data = Vec::with_capacity(k * n);
    for i in 0..k {
        for j in 0..n {
            v_data.push(vt[(i, j)]);
        }
    }
    let mut v_legs = vec![new_leg];
    v_legs.extend_from_slice(&col_legs);
    let mut v_dims = vec![k];
    v_dims.extend_from_slice(&col_dims);
    let v_t = Tensor::new(v_legs, v_dims, v_data)?;

    Ok(TruncatedSvd { u: u_t, values: s[..k].to_vec(), vt: v_t, discarded_weight })
}

/// Decompose `t = r · q` with `r_leg` the row index of `r` and `q` isometric
/// over `new_leg` (q·q† = id when matricized over its remaining legs). The
/// diagonal of `r` is real and nonnegative.
pub fn qr(t: &Tensor, r_leg: LegId, new_leg: LegId) -> Result<(Tensor, Tensor), TensorError> {
    let pos = t.position(r_leg).ok_or(TensorError::UnknownLeg(r_leg))?;
    let rest: Vec<LegId> = t.legs.iter().copied().filter(|&l| l != r_leg).collect();
    let mut order = vec![r_leg];
    order.extend_from_slice(&rest);
    let p = t.permuted(&order)?;
    let r_dim = t.dims[pos];
    let rest_dims = p.dims[1..].to_vec();
    let n: usize = rest_dims.iter().product();
    let mat = mat_from_row_major(r_dim, n, &p.data);
    let (r_mat, q_mat) = linalg::lq_pos(&mat);
    let k = r_mat.ncols();

    let q_data = row_major_from_mat(&q_mat);
    let mut q_legs = vec![new_leg];
    q_legs.extend_from_slice(&rest);
    let mut q_dims = vec![k];
    q_dims.extend_from_slice(&rest_dims);
    let q = Tensor::new(q_legs, q_dims, q_data)?;

    let r_data = row_major_from_mat(&r_mat);
    let r = Tensor::new(vec![r_leg, new_leg], vec![r_dim, k], r_data)?;
    Ok((q, r))
}

/// Tensor with every real and imaginary component drawn uniformly from
/// [-0.5, 1). Deterministic for a fixed generator state: entries are filled
/// in row-major order, real part before imaginary part.
pub fn random_tensor<R: Rng + ?Sized>(
    shape: &[(LegId, usize)],
    rng: &mut R,
) -> Result<Tensor, TensorError> {
    let dist = Uniform::new(-0.5f64, 1.0f64);
    let len: usize = shape.iter().map(|&(_, d)| d).product();
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        let re = dist.sample(rng);
        let im = dist.sample(rng);
        data.push(Complex64::new(re, im));
    }
    Tensor::new(
        shape.iter().map(|&(l, _)| l).collect(),
        shape.iter().map(|&(_, d)| d).collect(),
        data,
    )
}

/// Tensor with independent standard complex Gaussian entries.
pub fn random_gaussian<R: Rng + ?Sized>(
    shape: &[(LegId, usize)],
    rng: &mut R,
) -> Result<Tensor, TensorError> {
    let len: usize = shape.iter().map(|&(_, d)| d).product();
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        data.push(Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2);
    }
    Tensor::new(
        shape.iter().map(|&(l, _)| l).collect(),
        shape.iter().map(|&(_, d)| d).collect(),
        data,
    )
}
