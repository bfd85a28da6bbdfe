//! JSON exchange format for tree networks.
//!
//! One file holds one network: a header with the format version, kind
//! ("state" or "operator"), family name and root id, then one entry per node
//! with its parent, physical dimension, virtual legs (peer node or null for
//! boundary legs) and the tensor data. Values are written in base-10 with 17
//! significant digits, which round-trips 64-bit floats exactly; node ids are
//! required to be 0..n-1.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::Deserialize;

use crate::tensor::Tensor;
use crate::tree::{TreeTopology, Ttno, Ttns};

use super::BenchError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Deserialize)]
struct TtnFile {
    format_version: u32,
    kind: String,
    root: usize,
    nodes: Vec<NodeEntry>,
}

#[derive(Deserialize)]
struct NodeEntry {
    id: usize,
    parent: Option<usize>,
    phys_dim: usize,
    legs: Vec<LegEntry>,
    tensor: TensorEntry,
}

#[derive(Deserialize)]
struct LegEntry {
    peer: Option<usize>,
    extent: usize,
}

#[derive(Deserialize)]
struct TensorEntry {
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn push_f64(out: &mut String, v: f64) {
    // 17 significant digits; enough to reconstruct the exact bits
    let _ = write!(out, "{v:.16e}");
}

fn emit_node(
    out: &mut String,
    id: usize,
    parent: Option<usize>,
    phys_dim: usize,
    virtual_peers: &[(Option<usize>, usize)],
    tensor: &Tensor,
) {
    let _ = write!(out, "    {{\"id\": {id}, \"parent\": ");
    match parent {
        Some(p) => {
            let _ = write!(out, "{p}");
        }
        None => out.push_str("null"),
    }
    let _ = write!(out, ", \"phys_dim\": {phys_dim}, \"legs\": [");
    for (i, (peer, extent)) in virtual_peers.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        match peer {
            Some(p) => {
                let _ = write!(out, "{{\"peer\": {p}, \"extent\": {extent}}}");
            }
            None => {
                let _ = write!(out, "{{\"peer\": null, \"extent\": {extent}}}");
            }
        }
    }
    out.push_str("], \"tensor\": {\"dims\": [");
    for (i, d) in tensor.dims().iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{d}");
    }
    out.push_str("], \"data\": [");
    for (i, z) in tensor.data().iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        push_f64(out, z.re);
        out.push_str(", ");
        push_f64(out, z.im);
    }
    out.push_str("]}}");
}

/// Virtual legs of a node in canonical order: parent bond, child bonds,
/// open slots. `child_offset` is where the child bonds start in the tensor
/// dims (2 for states, 3 for operators).
fn virtual_peers(
    topo: &TreeTopology,
    i: usize,
    t: &Tensor,
    child_offset: usize,
) -> Vec<(Option<usize>, usize)> {
    let mut peers = vec![(topo.parent(i), t.dims()[0])];
    for (j, &c) in topo.children(i).iter().enumerate() {
        peers.push((Some(c), t.dims()[child_offset + j]));
    }
    for _ in 0..topo.open_slots(i) {
        peers.push((None, 1));
    }
    peers
}

pub fn ttns_to_json(state: &Ttns, family: &str) -> String {
    let topo = state.topology();
    let mut out = String::new();
    let _ = write!(
        out,
        "{{\n  \"format_version\": {FORMAT_VERSION},\n  \"kind\": \"state\",\n  \"family\": \"{family}\",\n  \"root\": {},\n  \"nodes\": [\n",
        topo.root()
    );
    for i in 0..topo.len() {
        let t = state.tensor(i);
        emit_node(&mut out, i, topo.parent(i), topo.phys_dim(i), &virtual_peers(topo, i, t, 2), t);
        out.push_str(if i + 1 < topo.len() { ",\n" } else { "\n" });
    }
    out.push_str("  ]\n}\n");
    out
}

pub fn ttno_to_json(op: &Ttno, family: &str) -> String {
    let topo = op.topology();
    let mut out = String::new();
    let _ = write!(
        out,
        "{{\n  \"format_version\": {FORMAT_VERSION},\n  \"kind\": \"operator\",\n  \"family\": \"{family}\",\n  \"root\": {},\n  \"nodes\": [\n",
        topo.root()
    );
    for i in 0..topo.len() {
        let t = op.tensor(i);
        emit_node(&mut out, i, topo.parent(i), topo.phys_dim(i), &virtual_peers(topo, i, t, 3), t);
        out.push_str(if i + 1 < topo.len() { ",\n" } else { "\n" });
    }
    out.push_str("  ]\n}\n");
    out
}

fn parse_file(text: &str, want_kind: &str) -> Result<(Arc<TreeTopology>, Vec<Tensor>), BenchError> {
    let file: TtnFile =
        serde_json::from_str(text).map_err(|e| BenchError::Format(e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(BenchError::Format(format!(
            "unsupported format version {}",
            file.format_version
        )));
    }
    if file.kind != want_kind {
        return Err(BenchError::Format(format!(
            "expected a {want_kind} file, found kind \"{}\"",
            file.kind
        )));
    }
    let n = file.nodes.len();
    let mut parents = vec![None; n];
    let mut phys = vec![0usize; n];
    let mut opens = vec![0u8; n];
    let mut entries: Vec<Option<&NodeEntry>> = vec![None; n];
    for node in &file.nodes {
        if node.id >= n || entries[node.id].is_some() {
            return Err(BenchError::Format(format!("node ids must be 0..{n}")));
        }
        parents[node.id] = node.parent;
        phys[node.id] = node.phys_dim;
        entries[node.id] = Some(node);
    }
    let _ = file.root;
    for (id, node) in entries.iter().enumerate() {
        let node = node.unwrap();
        let children = node.legs.iter().skip(1).filter(|l| l.peer.is_some()).count();
        let open = node.legs.len() - 1 - children;
        opens[id] = open as u8;
    }
    let topo = Arc::new(
        TreeTopology::new(parents, phys, opens).map_err(|e| BenchError::Format(e.to_string()))?,
    );
    let mut tensors = Vec::with_capacity(n);
    for id in 0..n {
        let node = entries[id].unwrap();
        let legs = if want_kind == "state" { topo.state_legs(id) } else { topo.op_legs(id) };
        if node.tensor.dims.len() != legs.len() {
            return Err(BenchError::Format(format!(
                "node {id}: expected {} legs, file has {} dims",
                legs.len(),
                node.tensor.dims.len()
            )));
        }
        // declared virtual extents must match the tensor dims
        let phys_legs = if want_kind == "state" { 1 } else { 2 };
        if node.legs.first().map(|l| l.extent) != Some(node.tensor.dims[0]) {
            return Err(BenchError::Format(format!("node {id}: parent extent mismatch")));
        }
        for (j, leg) in node.legs.iter().enumerate().skip(1) {
            if node.tensor.dims.get(j + phys_legs) != Some(&leg.extent) {
                return Err(BenchError::Format(format!("node {id}: leg {j} extent mismatch")));
            }
        }
        if node.tensor.data.len() != 2 * node.tensor.dims.iter().product::<usize>() {
            return Err(BenchError::Format(format!("node {id}: data length mismatch")));
        }
        let data: Vec<Complex64> = node
            .tensor
            .data
            .chunks(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        tensors.push(
            Tensor::new(legs, node.tensor.dims.clone(), data)
                .map_err(|e| BenchError::Format(e.to_string()))?,
        );
    }
    Ok((topo, tensors))
}

pub fn ttns_from_json(text: &str) -> Result<Ttns, BenchError> {
    let (topo, tensors) = parse_file(text, "state")?;
    Ttns::new(topo, tensors).map_err(|e| BenchError::Format(e.to_string()))
}

pub fn ttno_from_json(text: &str) -> Result<Ttno, BenchError> {
    let (topo, tensors) = parse_file(text, "operator")?;
    Ttno::new(topo, tensors).map_err(|e| BenchError::Format(e.to_string()))
}

pub fn write_ttns(state: &Ttns, family: &str, path: &Path) -> Result<(), BenchError> {
    std::fs::write(path, ttns_to_json(state, family))?;
    Ok(())
}

pub fn read_ttns(path: &Path) -> Result<Ttns, BenchError> {
    ttns_from_json(&std::fs::read_to_string(path)?)
}

pub fn write_ttno(op: &Ttno, family: &str, path: &Path) -> Result<(), BenchError> {
    std::fs::write(path, ttno_to_json(op, family))?;
    Ok(())
}

pub fn read_ttno(path: &Path) -> Result<Ttno, BenchError> {
    ttno_from_json(&std::fs::read_to_string(path)?)
}
