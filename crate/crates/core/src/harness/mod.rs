//! CLI orchestration, dataset container, benchmarking, rendering.
