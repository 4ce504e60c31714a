//! Sequential vs rayon-parallel execution of the hot kernels.
//!
//! `cargo bench --bench kernels`; build with `--no-default-features` to see
//! the parallel arm fall back to sequential.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use memshrink::harness::{generate_stream, ScenarioSpec};
use memshrink::temporal::similarity_scores_with;
use memshrink::{
    assemble_memory, cross_attend_tokens, pool_frame, pool_frame_with, run_pipeline, Anchor,
    CompressedFrame, EngineConfig, Execution, RunOptions,
};

const MODES: [(&str, Execution); 2] = [
    ("sequential", Execution::Sequential),
    ("parallel", Execution::Parallel),
];

fn bank(spec: &ScenarioSpec, cfg: &EngineConfig) -> Vec<CompressedFrame> {
    let stream = generate_stream(spec).unwrap();
    stream.frames[..cfg.bank_capacity]
        .iter()
        .map(|f| {
            let mut p = pool_frame(f, cfg).unwrap();
            p.is_gt = f.is_prompt;
            p
        })
        .collect()
}

fn kernels(c: &mut Criterion) {
    let spec = ScenarioSpec {
        height: 128,
        width: 128,
        channels: 32,
        frame_count: 8,
        ..ScenarioSpec::default()
    };
    let cfg = EngineConfig::default();
    let stream = generate_stream(&spec).unwrap();
    let frames = bank(&spec, &cfg);
    let snapshot = assemble_memory(&frames, &cfg).unwrap().snapshot;
    let query = frames.last().unwrap().to_tokens();

    let mut group = c.benchmark_group("pool_128x128x32");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool_frame_with(&stream.frames[0], &cfg, exec).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("similarity_7x4096");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| similarity_scores_with(&frames, Anchor::Previous, exec).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("attention_4096x8192x32");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| cross_attend_tokens(&query, &snapshot, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn pipeline(c: &mut Criterion) {
    let spec = ScenarioSpec {
        frame_count: 12,
        ..ScenarioSpec::default()
    };
    let stream = generate_stream(&spec).unwrap();
    let cfg = EngineConfig::default();
    let mut group = c.benchmark_group("pipeline_12x64x64x16");
    group.sample_size(10);
    for (name, exec) in MODES {
        let opts = RunOptions {
            exec,
            ..RunOptions::default()
        };
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_pipeline(&stream.frames, Some(&stream.truth), &cfg, opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, kernels, pipeline);
criterion_main!(benches);
