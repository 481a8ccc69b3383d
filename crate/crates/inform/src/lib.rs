//! Inform: a compiler and analysis toolkit for stochastic compartmental
//! models. Model files are compiled to explicit Markov chains either
//! directly through the chain-binomial step semantics or by way of a
//! stochastic counter machine, and queried with an exact linear-system
//! engine or a statistical sampling engine.

pub mod chain;
pub mod cms;
pub mod exact;
pub mod model;
pub mod par;
pub mod prism;
pub mod rational;
pub mod report;
pub mod scm;
pub mod semantics;
pub mod stat;
