use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use murkwater::backscatter::backscatter_image;
use murkwater::config::ExperimentConfig;
use murkwater::estimator::{select_block_minima, AutoEstimator};
use murkwater::image::RadianceImage;
use murkwater::scene::render_stack_with;

fn config() -> ExperimentConfig {
    ExperimentConfig::parse("sensor.width = 96\nsensor.height = 96\nmedium.c = 1.0").unwrap()
}

#[cfg(feature = "parallel")]
fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let all = rayon::current_num_threads().max(1);
    let mut sizes = vec![1];
    if all > 1 {
        sizes.push(all);
    }
    sizes
        .into_iter()
        .map(|n| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap();
            (format!("rayon-{n}"), pool)
        })
        .collect()
}

fn run_each(c: &mut Criterion, group: &str, work: &(dyn Fn() + Sync)) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    #[cfg(feature = "parallel")]
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| pool.install(work))
        });
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(work));
    g.finish();
}

fn bench_backscatter(c: &mut Criterion) {
    let cfg = config();
    let setup = cfg.setup().unwrap();
    let depth = RadianceImage::filled(cfg.sensor_width, cfg.sensor_height, 1.5);
    let src = setup.rig.sources()[0];
    run_each(c, "backscatter_image", &|| {
        backscatter_image(&setup.sensor, &src, &setup.medium, &depth, &setup.quad).unwrap();
    });
}

fn bench_render(c: &mut Criterion) {
    let cfg = config();
    let setup = cfg.setup().unwrap();
    let opts = cfg.render_options();
    run_each(c, "render_stack", &|| {
        render_stack_with(&setup, &opts, 1).unwrap();
    });
}

fn bench_ransac(c: &mut Criterion) {
    let cfg = config();
    let stack = render_stack_with(&cfg.setup().unwrap(), &cfg.render_options(), 1).unwrap();
    let image = stack.radiance_images().remove(0);
    let est = AutoEstimator {
        blocks: 16,
        iterations: 20_000,
        noise_std: Some(cfg.noise * stack.full_scale),
        ..AutoEstimator::default()
    };
    select_block_minima(&image, est.blocks).unwrap();
    run_each(c, "ransac_fit", &|| {
        est.fit(&[&image], 0).unwrap();
    });
}

criterion_group!(benches, bench_backscatter, bench_render, bench_ransac);
criterion_main!(benches);
