use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use segattn::arch::{Generator, GeneratorSpec, Topology};
use segattn::nn::ParamStore;
use segattn::train::{RmspropConfig, RmspropState};
use segattn::{Graph, Tensor};

fn ramp(shape: &[usize]) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| ((i * 7919) % 211) as f32 / 211.0 - 0.5).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv3x3");
    for (ch, hw) in [(8, 64), (32, 32), (64, 16)] {
        let x = ramp(&[ch, hw, hw]);
        let w = ramp(&[ch, ch, 3, 3]);
        let b = ramp(&[ch]);
        group.bench_with_input(BenchmarkId::new("forward_backward", format!("{ch}x{hw}")), &(), |bench, _| {
            bench.iter(|| {
                let mut g = Graph::new();
                let (xv, wv, bv) = (g.variable(x.clone()), g.variable(w.clone()), g.variable(b.clone()));
                let y = g.conv2d(xv, wv, bv, 1, 1).unwrap();
                let s = g.sum(y).unwrap();
                g.backward(s).unwrap();
                g.grad(wv).map(|t| t.data()[0])
            })
        });
    }
    group.finish();
}

fn generator_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("generator_forward_64");
    group.sample_size(20);
    let image = ramp(&[1, 64, 64]);
    for t in Topology::ALL {
        let gen = Generator::<f32>::build(GeneratorSpec::new(t, 8), 0).unwrap();
        group.bench_function(t.tag(), |bench| bench.iter(|| gen.predict(&image).unwrap()));
    }
    group.finish();
}

fn rmsprop_step(c: &mut Criterion) {
    let mut store = ParamStore::<f32>::new();
    for i in 0..8 {
        store.register(format!("w{i}"), ramp(&[64, 64, 3, 3]));
    }
    // Gradients of sum(w * w) give every parameter a nonzero gradient.
    let mut g = Graph::new();
    let bound = store.bind(&mut g, true);
    let mut total = None;
    for &v in bound.vars() {
        let sq = g.mul(v, v).unwrap();
        let s = g.sum(sq).unwrap();
        total = Some(match total {
            None => s,
            Some(t) => g.add(t, s).unwrap(),
        });
    }
    g.backward(total.unwrap()).unwrap();
    store.accumulate_grads(&g, &bound);
    let mut opt = RmspropState::new(RmspropConfig::default(), &store);
    c.bench_function("rmsprop_step_295k", |bench| bench.iter(|| opt.step(&mut store).unwrap()));
}

criterion_group!(benches, conv, generator_forward, rmsprop_step);
criterion_main!(benches);
