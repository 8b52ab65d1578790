use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use diffpogan_bench::{random_matrix, widths};
use diffpogan_core::diffusion::{make_schedule, sample_action, PolicyNet};
use diffpogan_core::engine::{Activation, MlpParams, MlpSpec, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mlp(c: &mut Criterion) {
    let mut group = c.benchmark_group("mlp");
    for width in widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = MlpParams::init(&MlpSpec::new(22, vec![width; 3], 2), &mut rng);
        let x = random_matrix(256, 22, &mut rng);
        group.bench_with_input(BenchmarkId::new("infer", width), &width, |b, _| {
            b.iter(|| params.infer(&x).unwrap())
        });
        group.bench_with_input(
            BenchmarkId::new("forward_backward", width),
            &width,
            |b, _| {
                b.iter(|| {
                    let mut tape = Tape::new();
                    let bound = params.bind(&mut tape, true);
                    let input = tape.constant(x.clone());
                    let y = bound.forward(&mut tape, input).unwrap();
                    let sq = tape.square(y);
                    let loss = tape.mean(sq);
                    tape.backward(loss).unwrap()
                })
            },
        );
    }
    group.finish();
}

fn sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("sample_action");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let policy = PolicyNet::new(4, 2, &[64, 64, 64], Activation::Mish, &mut rng);
    let states = random_matrix(128, 4, &mut rng);
    for steps in [2usize, 5, 20] {
        let sched = make_schedule(steps, 0.1, 10.0).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(steps), &steps, |b, _| {
            b.iter(|| sample_action(&policy, &states, &sched, &mut rng).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, mlp, sampling);
criterion_main!(benches);
