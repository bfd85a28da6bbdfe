//! Tree tensor network states and operators, five operator-application
//! methods with bond compression, a self-inverse circuit simulator and a
//! benchmark harness around them.

pub mod apply;
pub mod bench;
pub mod circuit;
pub mod selftest;
pub mod tensor;
pub mod tree;
