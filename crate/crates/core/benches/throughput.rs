//! IoU matrix and NMS throughput. Prints the machine it ran on first, since
//! the numbers mean little without it.

use criterion::{black_box, criterion_group, criterion_main, Criterion, Throughput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spheredet_core::eval::{nms, Detection};
use spheredet_core::iou::iou_matrix;
use spheredet_core::SphericalBox;

fn boxes(n: usize, seed: u64) -> Vec<SphericalBox> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: f64 = r.gen_range(-1.0..1.0);
            SphericalBox::new(
                z.asin().to_degrees(),
                r.gen_range(-180.0..180.0),
                r.gen_range(10.0..60.0),
                r.gen_range(10.0..60.0),
            )
            .unwrap()
        })
        .collect()
}

fn machine() {
    let cores = std::thread::available_parallelism().map_or(0, |n| n.get());
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into());
    eprintln!(
        "machine: {} {}, {cores} cores, {cpu}, {} rayon threads",
        std::env::consts::OS,
        std::env::consts::ARCH,
        rayon::current_num_threads()
    );
}

fn bench(c: &mut Criterion) {
    machine();
    let bx = boxes(10_000, 13);

    let mut g = c.benchmark_group("iou_matrix");
    g.throughput(Throughput::Elements(1000 * 2000));
    g.bench_function("1000x2000", |b| {
        b.iter(|| iou_matrix(black_box(&bx[..1000]), black_box(&bx[..2000])))
    });
    g.finish();

    let mut r = ChaCha8Rng::seed_from_u64(14);
    let dets: Vec<Detection> = bx
        .iter()
        .map(|b| Detection::new(*b, 1, r.gen_range(0.0..1.0)).unwrap())
        .collect();
    let mut g = c.benchmark_group("nms_10k");
    g.sample_size(10);
    for thr in [0.45, 0.7] {
        g.bench_function(format!("threshold_{thr}"), |b| {
            b.iter(|| nms(black_box(&dets), thr))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
