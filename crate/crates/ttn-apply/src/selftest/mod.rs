//! Built-in oracle suite.
//!
//! Checks the numerical core against the brute-force references in
//! [`naive`] and every application method against the dense product at desk
//! scale. The `selftest` CLI command prints one line per check; the
//! acceptance tests reuse the same case list.

pub mod naive;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::apply::{apply, ApplyMethod, SrcOpts, ZipUpOpts};
use crate::tensor::{contract, qr, random_tensor, svd_trunc, LegId, TruncationConfig};
use crate::tree::{
    make_balanced_binary, make_chain, make_ftps, make_t_tree, Ttno, Ttns,
};

pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

pub fn all_methods() -> Vec<ApplyMethod> {
    vec![
        ApplyMethod::Direct,
        ApplyMethod::Dmc,
        ApplyMethod::ZipUp(ZipUpOpts::default()),
        ApplyMethod::Src(SrcOpts::default()),
        ApplyMethod::Cbc,
    ]
}

/// The desk-scale exactness grid: every method on every tree family with
/// d = 2, D_S = D_O = 2 and a target dimension covering the full product.
pub fn oracle_topologies() -> Vec<(&'static str, crate::tree::TreeTopology)> {
    vec![
        ("chain L=6", make_chain(6, 2)),
        ("t-tree L=1", make_t_tree(1, 2)),
        ("binary depth=2", make_balanced_binary(2, 2)),
        ("ftps L=2", make_ftps(2, 2)),
    ]
}

/// Relative error of one method against the dense product on one topology.
pub fn dense_equivalence_error(
    method: ApplyMethod,
    topo: crate::tree::TreeTopology,
    d_bar: usize,
    seed: u64,
) -> Result<f64, crate::apply::ApplyError> {
    let topo = Arc::new(topo);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = Ttns::random(topo.clone(), 2, &mut rng)?;
    let op = Ttno::random(topo, 2, &mut rng)?;
    let mut apply_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let rep = apply(method, &op, &state, &TruncationConfig::new(d_bar), &mut apply_rng)?;
    let want = naive::matvec(&op.to_dense()?, &state.to_dense()?);
    let got = rep.result.to_dense()?;
    Ok(naive::vec_rel_error(&got, &want))
}

fn tensor_core_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let a_leg = LegId::state_bond;

    // contraction against the matrix product evaluated entrywise
    let a = random_tensor(&[(a_leg(0), 3), (a_leg(1), 4)], &mut rng).unwrap();
    let b = random_tensor(&[(a_leg(1), 4), (a_leg(2), 2)], &mut rng).unwrap();
    let fast = contract(&a, &b, &[(a_leg(1), a_leg(1))]).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..2 {
            let mut acc = num_complex::Complex64::new(0.0, 0.0);
            for k in 0..4 {
                acc += a.get(&[i, k]) * b.get(&[k, j]);
            }
            worst = worst.max((fast.get(&[i, j]) - acc).norm());
        }
    }
    out.push(Check::new("contract vs loop oracle", worst < 1e-12, format!("max diff {worst:.2e}")));

    // truncated SVD reconstruction and discarded weight
    let t = random_tensor(&[(a_leg(0), 5), (a_leg(1), 4)], &mut rng).unwrap();
    let new = LegId::proj(0, 0);
    let svd = svd_trunc(&t, &[a_leg(0)], new, &TruncationConfig::new(2)).unwrap();
    let mid = svd.u.clone().scale_leg(new, &svd.values).unwrap();
    let rebuilt = contract(&mid, &svd.vt, &[(new, new)]).unwrap();
    let err_sq: f64 = t
        .data()
        .iter()
        .zip(rebuilt.permuted(t.legs()).unwrap().data())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum();
    let ok = (err_sq - svd.discarded_weight).abs() < 1e-10 * t.norm_sq();
    out.push(Check::new(
        "svd discarded weight identity",
        ok,
        format!("residual {:.2e} vs weight {:.2e}", err_sq, svd.discarded_weight),
    ));

    // qr reconstruction
    let t = random_tensor(&[(a_leg(0), 4), (a_leg(1), 3)], &mut rng).unwrap();
    let (q, r) = qr(&t, a_leg(0), new).unwrap();
    let back = contract(&r, &q, &[(new, new)]).unwrap();
    let diff: f64 = t
        .data()
        .iter()
        .zip(back.permuted(t.legs()).unwrap().data())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max);
    out.push(Check::new("qr reconstruction", diff < 1e-12, format!("max diff {diff:.2e}")));

    out
}

fn network_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let topo = Arc::new(make_chain(4, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let s = Ttns::random(topo.clone(), 2, &mut rng).unwrap();
    let fast = s.to_dense().unwrap();
    let slow = naive::state_dense(&s);
    let err = naive::vec_rel_error(&fast, &slow);
    out.push(Check::new("network contraction vs loop oracle", err < 1e-12, format!("rel {err:.2e}")));

    let op = Ttno::random(topo, 2, &mut rng).unwrap();
    let fast = op.to_dense().unwrap();
    let slow = naive::op_dense(&op);
    let err = naive::vec_rel_error(&fast, &slow);
    out.push(Check::new("operator contraction vs loop oracle", err < 1e-12, format!("rel {err:.2e}")));
    out
}

fn method_checks() -> Vec<Check> {
    let mut out = Vec::new();
    for (topo_name, topo) in oracle_topologies() {
        for method in all_methods() {
            let name = format!("{} exact on {}", method.name(), topo_name);
            match dense_equivalence_error(method, topo.clone(), 4, 1234) {
                Ok(err) => out.push(Check::new(name, err < 1e-8, format!("rel error {err:.2e}"))),
                Err(e) => out.push(Check::new(name, false, e.to_string())),
            }
        }
    }

    // chain sweep and tree sweep must agree bit for bit
    let topo = Arc::new(make_chain(5, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(93);
    let state = Ttns::random(topo.clone(), 3, &mut rng).unwrap();
    let op = Ttno::random(topo, 3, &mut rng).unwrap();
    let cfg = TruncationConfig::new(4);
    let a = crate::apply::cbc::cbc_sweep_tt(&op, &state, &cfg).unwrap();
    let b = crate::apply::cbc::cbc_apply_tree(&op, &state, &cfg).unwrap();
    let same = (0..5).all(|i| a.result.tensor(i) == b.result.tensor(i));
    out.push(Check::new("chain reduction is bitwise", same, ""));
    out
}

/// Run every oracle check once.
pub fn run_all() -> Vec<Check> {
    let mut out = tensor_core_checks();
    out.extend(network_checks());
    out.extend(method_checks());
    out
}
