use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use transfers::catalog::mk_transfer;
use transfers::entropic::log_entropy;
use transfers::inequality::{check_te_inequality, Form, InequalitySpec, Lhs, Rhs, SearchSettings};
use transfers::measure::{CostMatrix, FiniteSpace, ProbMeasure};
use transfers::par::{map_range, Execution};
use transfers::rng;
use transfers::solvers::transport::solve_transport_lp;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

struct Instance {
    cost: CostMatrix,
    mu: ProbMeasure,
    nu: ProbMeasure,
}

fn instances(count: usize, n: usize) -> Vec<Instance> {
    let s = Arc::new(FiniteSpace::indexed("X", n).unwrap());
    (0..count as u64)
        .map(|k| {
            let mut r = rng::stream(99, k);
            let rows = (0..n).map(|_| rng::uniform_vec(&mut r, n, 0.0, 10.0)).collect();
            Instance {
                cost: CostMatrix::from_rows(s.clone(), s.clone(), rows).unwrap(),
                mu: ProbMeasure::new(s.clone(), rng::simplex_point(&mut r, n)).unwrap(),
                nu: ProbMeasure::new(s.clone(), rng::simplex_point(&mut r, n)).unwrap(),
            }
        })
        .collect()
}

fn lp_sweep(c: &mut Criterion) {
    let batch = instances(256, 12);
    let mut group = c.benchmark_group("lp_sweep");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(name, batch.len()), |b| {
            b.iter(|| {
                map_range(exec, batch.len(), |i| {
                    let p = &batch[i];
                    solve_transport_lp(&p.cost, &p.mu, &p.nu).unwrap().value
                })
            })
        });
    }
    group.finish();
}

fn inequality_search(c: &mut Criterion) {
    let s = Arc::new(FiniteSpace::indexed("X", 3).unwrap());
    let p = instances(1, 3).pop().unwrap();
    let mut group = c.benchmark_group("inequality_search");
    group.sample_size(10);
    for (name, exec) in MODES {
        let spec = InequalitySpec {
            form: Form::BackwardBackward,
            lhs: Lhs::Linear(mk_transfer(p.cost.clone())),
            rhs: Rhs::Entropic { entropy: log_entropy(s.clone()), link: None, lambda: 1.0 },
            mu: p.mu.clone(),
            nu: p.nu.clone(),
            settings: SearchSettings { exec, ..SearchSettings::default() },
        };
        group.bench_function(name, |b| b.iter(|| check_te_inequality(&spec).unwrap().primal_gap));
    }
    group.finish();
}

criterion_group!(benches, lp_sweep, inequality_search);
criterion_main!(benches);
