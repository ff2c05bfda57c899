//! Timeline-based planning over dense time.
//!
//! A planning problem is a set of multi-valued state variables plus
//! synchronization rules. A plan assigns each variable a timeline: a finite
//! sequence of tokens, each holding a value for a duration. Trigger rules
//! constrain every token of a given value; trigger-less rules assert global
//! existential conditions. Under the future semantics, tokens required by a
//! trigger may not start before the trigger token does.
//!
//! The solver decides plan existence for simple trigger rules by compiling
//! the problem into timed automata and an MTL formula over timeline codes
//! (timed words over a finite proposition alphabet), then checking emptiness
//! of the intersection with zones. A non-empty intersection yields a timed
//! witness word that decodes back into a concrete plan.
//!
//! Module map:
//! - [`domain`]: problem structures, plan validation, rule classification.
//! - [`textio`]: text format for problems, JSON format for plans.
//! - [`ta`]: timed automata, DBM zones, emptiness, witness concretization.
//! - [`encoding`]: timeline codes and the structural automata over them.
//! - [`mtl`]: MTL formulas, evaluation, and the rule-to-formula translation.
//! - [`compile`]: MTL-to-timed-automaton compilation with an obligation pool.
//! - [`solver`]: the end-to-end decision pipeline and a granular fallback.
//! - [`reductions`]: problem generators with known verdicts for stress tests.

pub mod compile;
pub mod domain;
pub mod encoding;
pub mod mtl;
pub mod reductions;
pub mod solver;
pub mod ta;
pub mod textio;
