//! Label-based information-flow calculi: pure DCC, pc-labeled and type-and-effect
//! extensions with state, exceptions and nontermination, a monadic capture translation
//! into pure DCC, and a desk-scale property harness.

pub mod cli;
pub mod effects;
pub mod elaborate;
pub mod eval;
pub mod harness;
pub mod labels;
pub mod protection;
pub mod syntax;
pub mod typecheck;
