use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use straightkit::augment::{DeformField, Sampling};
use straightkit::backbone::{extract_backbone, BackboneParams};
use straightkit::seed;
use straightkit::synthgen::{make_case, CaseSpec};
use straightkit::translator::graph::ConvGeometry;
use straightkit::translator::{generator_forward, Graph, Tensor, UNetConfig};

fn random(shape: [usize; 4], rng: &mut impl Rng) -> Tensor<f32> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_s2");
    let mut rng = seed::rng(0);
    for (cin, cout, size) in [(1, 16, 64), (16, 32, 32), (64, 64, 8)] {
        let x = random([4, cin, size, size], &mut rng);
        let w = random([cout, cin, 4, 4], &mut rng);
        let b = random([1, cout, 1, 1], &mut rng);
        let geo = ConvGeometry { stride: 2, pad: 1 };
        let id = format!("{cin}x{size}->{cout}");
        group.bench_function(BenchmarkId::new("forward", &id), |bench| {
            bench.iter(|| {
                let mut g = Graph::new();
                let (xi, wi, bi) = (g.input(x.clone()), g.param("w", w.clone()), g.param("b", b.clone()));
                black_box(g.conv2d(xi, wi, bi, geo).unwrap());
            })
        });
        group.bench_function(BenchmarkId::new("forward_backward", &id), |bench| {
            let target = Tensor::zeros([4, cout, size / 2, size / 2]);
            bench.iter(|| {
                let mut g = Graph::new();
                let (xi, wi, bi) = (g.input(x.clone()), g.param("w", w.clone()), g.param("b", b.clone()));
                let y = g.conv2d(xi, wi, bi, geo).unwrap();
                let t = g.input(target.clone());
                let loss = g.l1(y, t).unwrap();
                black_box(g.backward(loss).unwrap());
            })
        });
    }
    group.finish();
}

fn generator(c: &mut Criterion) {
    let unet = UNetConfig::default();
    let params = unet.init::<f32>(&mut seed::rng(1));
    let x = random([1, 1, 64, 64], &mut seed::rng(2));
    c.bench_function("generator_forward_64", |bench| {
        bench.iter(|| black_box(generator_forward::<f32, ChaCha8Rng>(&unet, &params, &x, None).unwrap()))
    });
}

fn warp(c: &mut Criterion) {
    let case = make_case(&CaseSpec::for_canvas(256, 1), 3).unwrap();
    c.bench_function("elastic_warp_256", |bench| {
        let mut s = 0u64;
        bench.iter(|| {
            s += 1;
            let field = DeformField::random(3, 18.0, s, 256, 256).unwrap();
            black_box(field.warp(&case.bent, Sampling::Bilinear).unwrap())
        })
    });
}

fn backbone(c: &mut Criterion) {
    let case = make_case(&CaseSpec::for_canvas(256, 2), 4).unwrap();
    let params = BackboneParams::default();
    c.bench_function("backbone_extraction_256", |bench| {
        bench.iter(|| black_box(extract_backbone(&case.bent, &params).unwrap()))
    });
}

criterion_group!(benches, conv, generator, warp, backbone);
criterion_main!(benches);
