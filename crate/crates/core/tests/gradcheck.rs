//! Every differentiable op checked against central differences in f64 on at
//! least five random shapes.

mod common;

use common::gradcheck_suite::{self as suite, OpCheck};

fn assert_all(f: fn(&mut Vec<OpCheck>)) {
    let mut out = Vec::new();
    f(&mut out);
    assert!(!out.is_empty());
    for c in &out {
        assert!(c.passed(), "{} {:?}: relative error {:e}", c.op, c.shape, c.rel_err);
    }
}

#[test]
fn elementwise_binary() {
    assert_all(suite::elementwise_binary);
}

#[test]
fn elementwise_unary() {
    assert_all(suite::elementwise_unary);
}

#[test]
fn linear_narrow_embedding() {
    assert_all(suite::linear_narrow_embedding);
}

#[test]
fn channel_ops() {
    assert_all(suite::channel_ops);
}

#[test]
fn conv3d_all_specs() {
    assert_all(suite::conv3d_all_specs);
}

#[test]
fn composite_graph_with_reuse() {
    assert_all(suite::composite_graph_with_reuse);
}

#[test]
fn every_op_has_five_shapes() {
    let all = suite::run_all();
    let mut ops: Vec<&str> = all.iter().map(|c| c.op).collect();
    ops.dedup();
    for op in ops {
        let n = all.iter().filter(|c| c.op == op).count();
        assert!(n >= 5, "{op}: only {n} shapes");
    }
}
