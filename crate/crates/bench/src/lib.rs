//! Criterion benchmarks for the simulator, trace parsing and rule checking.
