//! Tensor rematerialization scheduling under a memory budget.
//!
//! A compute graph is a DAG of operator nodes, each with a duration and an
//! output tensor size. Executing the graph on a device with limited memory
//! may require recomputing some tensors instead of keeping them resident.
//! This crate models that trade-off with retention intervals on an integer
//! event line, searches for schedules that minimize total duration subject
//! to a peak-memory budget, and validates candidate schedules with an
//! independent checker.
//!
//! Module map:
//!
//! * [`graph`]: compute graphs, JSON loading, topological orders, and the
//!   no-rematerialization peak-memory baseline;
//! * [`generator`]: random layered DAGs, chains, and exhaustive small-DAG
//!   enumeration for oracle testing;
//! * [`model`]: the retention-interval constraint formulation, in unstaged
//!   (free order) and staged (fixed order) variants;
//! * [`evaluator`]: schedule decoding, the independent validator, a
//!   sequence simulator, and an exact brute-force oracle for tiny
//!   instances;
//! * [`solver`]: branch-and-bound with constraint propagation plus a
//!   large-neighborhood search running on execution sequences, wrapped in a
//!   two-phase driver (find a memory-feasible schedule, then minimize
//!   duration).

pub mod evaluator;
pub mod generator;
pub mod graph;
pub mod model;
pub mod solver;
