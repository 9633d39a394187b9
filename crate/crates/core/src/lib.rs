// Negated comparisons below are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod ctf;
pub mod environment;
pub mod experiment;
pub mod grid;
pub mod protection;
pub mod reward;
pub mod spaces;
pub mod transport;
