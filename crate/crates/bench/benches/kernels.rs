use criterion::{criterion_group, criterion_main, Criterion};
use demorph_bench::{face_pair, latents, RES};
use demorph_core::demorpher::{DemorphCheckpoint, DemorphConfig};
use demorph_core::imaging::{kurtosis_of, psnr, ssim};
use demorph_core::latentcodec::{CodecCheckpoint, CodecConfig, Compressor};
use demorph_core::morphing::morph;
use std::hint::black_box;

fn metrics(c: &mut Criterion) {
    let ((a, _), (b, _)) = face_pair();
    c.bench_function("psnr_64", |bch| bch.iter(|| psnr(black_box(&a), black_box(&b)).unwrap()));
    c.bench_function("ssim_64", |bch| bch.iter(|| ssim(black_box(&a), black_box(&b)).unwrap()));
    c.bench_function("kurtosis_64", |bch| bch.iter(|| kurtosis_of(black_box(a.data())).unwrap()));
}

fn warp(c: &mut Criterion) {
    let ((a, la), (b, lb)) = face_pair();
    c.bench_function("morph_64", |bch| bch.iter(|| morph(&a, &la, &b, &lb, black_box(0.5)).unwrap()));
}

fn networks(c: &mut Criterion) {
    let ((a, _), (b, _)) = face_pair();
    let codec = CodecCheckpoint::untrained(&CodecConfig::default(), RES, RES).unwrap();
    let images = [&a, &b, &a, &b, &a, &b, &a, &b];
    c.bench_function("codec_encode_batch8", |bch| bch.iter(|| codec.encode_batch(black_box(&images)).unwrap()));
    let ckpt = DemorphCheckpoint::untrained(&DemorphConfig::desk(), (4, 8, 8), "bench").unwrap();
    let z = latents(8, 4, 8, 8);
    let refs: Vec<_> = z.iter().collect();
    c.bench_function("generator_forward_batch8", |bch| {
        bch.iter(|| ckpt.generator_forward(black_box(&refs), None).unwrap())
    });
}

criterion_group!(benches, metrics, warp, networks);
criterion_main!(benches);
