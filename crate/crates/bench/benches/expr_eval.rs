use std::collections::HashMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use varcalc_core::expr::{parse, parse_with_params, CompiledExpr, Environment};

const SOURCE: &str = "(z^2 - a^2*t^2)^2/v^3 + sin(x)*cos(y) + exp(-x^2)";

fn eval(c: &mut Criterion) {
    let e = parse_with_params(SOURCE, &["a", "v"]).unwrap();
    let env: Environment = [
        ("z", 0.3),
        ("a", 1.0),
        ("t", 0.7),
        ("v", 1.0),
        ("x", 0.2),
        ("y", -0.4),
    ]
    .into_iter()
    .collect();
    c.bench_function("expr/tree_walk", |b| {
        b.iter(|| black_box(&e).evaluate(&env).unwrap())
    });

    let params: HashMap<String, f64> = [("a".to_string(), 1.0), ("v".to_string(), 1.0)].into();
    let compiled = CompiledExpr::compile(&e, &["t", "x", "y", "z"], &params).unwrap();
    let slots = [0.7, 0.2, -0.4, 0.3];
    c.bench_function("expr/compiled", |b| {
        b.iter(|| compiled.eval(black_box(&slots)))
    });

    c.bench_function("expr/differentiate", |b| {
        b.iter(|| black_box(&e).differentiate("z"))
    });
    c.bench_function("expr/parse", |b| {
        b.iter(|| parse(black_box(SOURCE)).unwrap())
    });
}

criterion_group!(benches, eval);
criterion_main!(benches);
