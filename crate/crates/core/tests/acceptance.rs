//! Acceptance suite. Runs every criterion in order and prints one
//! `PASS`/`FAIL` line per criterion; exits non-zero if any failed.
//!
//! Criteria share one seeded toy corpus (1000 identities at 64×64), its
//! scenario-3 split and a codec trained on the 500 train-side faces.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use demorph_core::biometric::{achieved_fmr, calibrate_threshold, match_score, Embedding, MatchThreshold, ToyProvider};
use demorph_core::demorpher::{
    self, cgan_loss, kurtosis_loss, l1_loss, total_loss, DemorphConfig, LatentDataset, LatentPair, LossParts,
    LossVariant,
};
use demorph_core::evaluation::{
    assign, bw_iqa, evaluate_with, restoration_accuracy, tmr_at_fmr, DemorphResult, EvalOptions, GroundTruthStub,
    Iqa, ReplicationStub, ResultEmbeddings, TrainedDemorpher,
};
use demorph_core::imaging::{kurtosis_of, psnr, ssim, Image};
use demorph_core::latentcodec::{self, CodecCheckpoint, CodecConfig, Compressor, Latent};
use demorph_core::morphing::{delaunay, morph, piecewise_warp, Landmarks, Point};
use demorph_core::protocol::{
    build_morph_dataset, gen_toy_faces, make_scenario_split, sample_pairs, toy_face, Manifest, Registry, Scenario,
    ScenarioSplit, Side,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CORPUS_SEED: u64 = 7;
const CORPUS_SIZE: usize = 1000;
const RES: usize = 64;
const TRAIN_MORPHS: usize = 2000;
const TEST_MORPHS: usize = 200;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

struct Fixture {
    _dir: tempfile::TempDir,
    registry: Registry,
    split: ScenarioSplit,
    codec: CodecCheckpoint,
    codec_secs: f64,
    train: Manifest,
    test: Manifest,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let registry = gen_toy_faces(CORPUS_SIZE, RES, CORPUS_SEED, &dir.path().join("faces")).unwrap();
    let split = make_scenario_split(&registry.ids(), Scenario::Disjoint, CORPUS_SEED).unwrap();
    let morph_dir = dir.path().join("morphs");
    let train_pairs = sample_pairs(&split, Side::Train, TRAIN_MORPHS, CORPUS_SEED).unwrap();
    let test_pairs = sample_pairs(&split, Side::Test, TEST_MORPHS, CORPUS_SEED).unwrap();
    let train = build_morph_dataset(&registry, &train_pairs, 0.5, Scenario::Disjoint, Side::Train, &morph_dir, 1).unwrap();
    let test = build_morph_dataset(&registry, &test_pairs, 0.5, Scenario::Disjoint, Side::Test, &morph_dir, 1).unwrap();
    let faces = train_faces(&registry, &split);
    let t = Instant::now();
    let codec = latentcodec::train_codec(&faces, &CodecConfig::default()).unwrap();
    let codec_secs = t.elapsed().as_secs_f64();
    Fixture {
        _dir: dir,
        registry,
        split,
        codec,
        codec_secs,
        train,
        test,
    }
}

fn train_faces(registry: &Registry, split: &ScenarioSplit) -> Vec<Image> {
    split
        .ids(Side::Train)
        .iter()
        .map(|id| registry.load_face(id).unwrap().0)
        .collect()
}

// ---------------------------------------------------------------- oracles

fn oracle_kurtosis(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    m4 / (m2 * m2 + 1e-8)
}

fn oracle_psnr(a: &Image, b: &Image) -> f64 {
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data().len() as f64;
    if mse == 0.0 {
        return 99.0;
    }
    (-10.0 * mse.log10()).min(99.0)
}

/// Direct 2-D weighted moments over each fully contained window.
fn oracle_ssim(a: &Image, b: &Image) -> f64 {
    const K: usize = 11;
    let g: Vec<f64> = (0..K).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let mut w2 = vec![0.0; K * K];
    for i in 0..K {
        for j in 0..K {
            w2[i * K + j] = g[i] * g[j];
        }
    }
    let total: f64 = w2.iter().sum();
    w2.iter_mut().for_each(|v| *v /= total);
    let (h, w, ch) = a.shape();
    let (c1, c2) = (1e-4, 9e-4);
    let mut per_channel = 0.0;
    for c in 0..ch {
        let mut acc = 0.0;
        let mut count = 0.0;
        for y in 0..=h - K {
            for x in 0..=w - K {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..K {
                    for j in 0..K {
                        mx += w2[i * K + j] * a.get(y + i, x + j, c);
                        my += w2[i * K + j] * b.get(y + i, x + j, c);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..K {
                    for j in 0..K {
                        let dx = a.get(y + i, x + j, c) - mx;
                        let dy = b.get(y + i, x + j, c) - my;
                        vx += w2[i * K + j] * dx * dx;
                        vy += w2[i * K + j] * dy * dy;
                        cov += w2[i * K + j] * dx * dy;
                    }
                }
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1.0;
            }
        }
        per_channel += acc / count;
    }
    per_channel / ch as f64
}

fn random_image(r: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Image {
    Image::from_fn(h, w, c, |_, _, _| r.random::<f64>()).unwrap()
}

fn perturbed(r: &mut ChaCha8Rng, img: &Image, amp: f64) -> Image {
    let (h, w, c) = img.shape();
    Image::from_fn(h, w, c, |y, x, k| img.get(y, x, k) + amp * (r.random::<f64>() - 0.5)).unwrap()
}

// ---------------------------------------------------------------- criteria

fn c1_metric_oracles() -> Outcome {
    let t = Instant::now();
    let mut r = rng(101);
    let (mut dk, mut dp, mut ds) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..100 {
        let (h, w, c) = if k % 4 == 0 { (24, 40, 1) } else { (32, 32, 3) };
        let a = random_image(&mut r, h, w, c);
        let b = if k % 2 == 0 {
            random_image(&mut r, h, w, c)
        } else {
            perturbed(&mut r, &a, 0.2)
        };
        dk = dk.max((kurtosis_of(a.data()).unwrap() - oracle_kurtosis(a.data())).abs());
        dp = dp.max((psnr(&a, &b).unwrap() - oracle_psnr(&a, &b)).abs());
        ds = ds.max((ssim(&a, &b).unwrap() - oracle_ssim(&a, &b)).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        dk <= 1e-9 && dp <= 1e-6 && ds <= 1e-6 && secs < 10.0,
        format!("max |Δ| kurtosis {dk:.1e}, psnr {dp:.1e}, ssim {ds:.1e}; {secs:.2}s"),
    )
}

/// Per-pixel reference: find the covering triangle, invert its affine map
/// explicitly and sample bilinearly.
fn oracle_warp(img: &Image, src: &[Point], dst: &[Point], tris: &[[usize; 3]]) -> Image {
    let (h, w, ch) = img.shape();
    let mut out = img.clone();
    let bilinear = |x: f64, y: f64, c: usize| {
        let x = x.clamp(0.0, (w - 1) as f64);
        let y = y.clamp(0.0, (h - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        (1.0 - fy) * ((1.0 - fx) * img.get(y0, x0, c) + fx * img.get(y0, x1, c))
            + fy * ((1.0 - fx) * img.get(y1, x0, c) + fx * img.get(y1, x1, c))
    };
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64, y as f64);
            for t in tris {
                let [a, b, c] = [dst[t[0]], dst[t[1]], dst[t[2]]];
                // dst = M · [l1, l2] + a with columns (b - a), (c - a).
                let (m00, m01, m10, m11) = (b.x - a.x, c.x - a.x, b.y - a.y, c.y - a.y);
                let det = m00 * m11 - m01 * m10;
                if det.abs() < 1e-12 {
                    continue;
                }
                let (dx, dy) = (px - a.x, py - a.y);
                let l1 = (m11 * dx - m01 * dy) / det;
                let l2 = (-m10 * dx + m00 * dy) / det;
                let l0 = 1.0 - l1 - l2;
                if l0 < -1e-9 || l1 < -1e-9 || l2 < -1e-9 {
                    continue;
                }
                let [sa, sb, sc] = [src[t[0]], src[t[1]], src[t[2]]];
                let sx = sa.x + l1 * (sb.x - sa.x) + l2 * (sc.x - sa.x);
                let sy = sa.y + l1 * (sb.y - sa.y) + l2 * (sc.y - sa.y);
                for k in 0..ch {
                    out.set(y, x, k, bilinear(sx, sy, k));
                }
                break;
            }
        }
    }
    out
}

fn c2_warp_oracle() -> Outcome {
    const N: usize = 48;
    let mut worst = 0.0f64;
    for cfg in 0..20u64 {
        let mut r = rng(200 + cfg);
        let img = Image::from_fn(N, N, 3, |y, x, c| {
            0.5 + 0.4 * ((x as f64 * 0.31 + c as f64).sin() * (y as f64 * 0.23).cos())
        })
        .unwrap();
        let k = 5 + (cfg as usize % 6);
        let src_pts: Vec<Point> = (0..k)
            .map(|_| Point::new(r.random_range(10.0..38.0), r.random_range(10.0..38.0)))
            .collect();
        let dst_pts: Vec<Point> = src_pts
            .iter()
            .map(|p| Point::new(p.x + r.random_range(-3.0..3.0), p.y + r.random_range(-3.0..3.0)))
            .collect();
        let src = Landmarks::new(src_pts, N, N).unwrap().with_anchors();
        let dst = Landmarks::new(dst_pts, N, N).unwrap().with_anchors();
        let Ok(mesh) = delaunay(dst.points()) else {
            return outcome(false, format!("configuration {cfg} did not triangulate"));
        };
        let got = piecewise_warp(&img, &src, &dst, &mesh).unwrap();
        let want = oracle_warp(&img, src.points(), dst.points(), &mesh.triangles);
        for (a, b) in got.data().iter().zip(want.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    let mut self_morph = 0.0f64;
    for idx in 0..4 {
        let (face, lm) = toy_face(3, idx, RES).unwrap();
        for alpha in [0.0, 0.5, 1.0] {
            let (m, _) = morph(&face, &lm, &face, &lm, alpha).unwrap();
            for (a, b) in m.data().iter().zip(face.data()) {
                self_morph = self_morph.max((a - b).abs());
            }
        }
    }
    outcome(
        worst <= 1.0 / 255.0 && self_morph <= 1e-6,
        format!("warp vs oracle max |Δ| {worst:.2e} over 20 configurations; self-morph max |Δ| {self_morph:.1e}"),
    )
}

fn random_latent(r: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Latent {
    let scale = r.random_range(0.1..3.0);
    Latent::new(c, h, w, (0..c * h * w).map(|_| scale * (r.random::<f64>() - 0.5).powi(3)).collect()).unwrap()
}

fn c3_loss_arithmetic() -> Outcome {
    let total = total_loss(
        LossParts {
            adversarial: 1.0,
            l1: 2.0,
            kurtosis: 4.0,
        },
        0.5,
        0.5,
    );
    let mut r = rng(303);
    let o = LatentPair::new(random_latent(&mut r, 4, 8, 8), random_latent(&mut r, 4, 8, 8)).unwrap();
    let self_kurt = kurtosis_loss(&o, &o).unwrap();
    let mut min_term = f64::INFINITY;
    for _ in 0..1000 {
        let n = r.random_range(1..9);
        let real: Vec<f64> = (0..n).map(|_| r.random_range(-20.0..20.0)).collect();
        let fake: Vec<f64> = (0..n).map(|_| r.random_range(-20.0..20.0)).collect();
        let (ld, lg) = cgan_loss(&real, &fake).unwrap();
        let out = LatentPair::new(random_latent(&mut r, 4, 8, 8), random_latent(&mut r, 4, 8, 8)).unwrap();
        let tgt = LatentPair::new(random_latent(&mut r, 4, 8, 8), random_latent(&mut r, 4, 8, 8)).unwrap();
        let l1 = l1_loss(&out, &tgt).unwrap();
        let k = kurtosis_loss(&out, &tgt).unwrap();
        min_term = min_term.min(ld).min(lg).min(l1).min(k);
    }
    outcome(
        total == 4.0 && self_kurt == 0.0 && min_term >= 0.0,
        format!("total(1,2,4) = {total}; K(o,o) = {self_kurt}; min term over 1000 batches {min_term:.3e}"),
    )
}

fn c4_gradient_checks() -> Outcome {
    let t = Instant::now();
    let codec_cfg = CodecConfig {
        downscale_factor: 4,
        base_width: 8,
        kl_weight: 0.5,
        ..CodecConfig::default()
    };
    let faces: Vec<Image> = (0..4).map(|i| toy_face(9, i, 16).unwrap().0).collect();
    let codec = latentcodec::gradient_check(&faces, &codec_cfg, 24, 4).unwrap();
    let mut r = rng(404);
    let mut data = LatentDataset::default();
    for _ in 0..2 {
        let (a, b) = (random_latent(&mut r, 4, 8, 8), random_latent(&mut r, 4, 8, 8));
        let m: Vec<f64> = a.data().iter().zip(b.data()).map(|(p, q)| 0.5 * (p + q)).collect();
        data.morphs.push(Latent::new(4, 8, 8, m).unwrap());
        data.targets.push(LatentPair::new(a, b).unwrap());
    }
    let dcfg = DemorphConfig {
        generator_widths: vec![8, 16],
        discriminator_width: 4,
        ..DemorphConfig::default()
    };
    let gen = demorpher::gradient_check(&data, &dcfg, 24, 4).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        codec < 1e-3 && gen < 1e-3 && secs < 60.0,
        format!("worst relative error recon+KL {codec:.1e}, generator objective {gen:.1e}; {secs:.1}s"),
    )
}

fn c5_codec(fx: &Fixture) -> Outcome {
    let faces = train_faces(&fx.registry, &fx.split);
    let refs: Vec<&Image> = faces.iter().collect();
    let z = fx.codec.encode_batch(&refs).unwrap();
    let zr: Vec<&Latent> = z.iter().collect();
    let rec = fx.codec.decode_batch(&zr).unwrap();
    let mean_psnr = faces.iter().zip(&rec).map(|(a, b)| psnr(a, b).unwrap()).sum::<f64>() / faces.len() as f64;
    let held_out: Vec<Image> = fx.split.ids(Side::Test)[..50]
        .iter()
        .map(|id| fx.registry.load_face(id).unwrap().0)
        .collect();
    let held_psnr = held_out
        .iter()
        .map(|f| psnr(f, &fx.codec.decode(&fx.codec.encode(f).unwrap()).unwrap()).unwrap())
        .sum::<f64>()
        / held_out.len() as f64;
    let shape = z[0].shape();
    let shape_ok = z.iter().all(|l| l.shape() == shape) && shape == (8, 8, 4) && z[0].data().len() == 8 * 8 * 4;
    outcome(
        faces.len() == 500 && mean_psnr >= 20.0 && fx.codec_secs <= 600.0 && shape_ok,
        format!(
            "{} faces, trained in {:.0}s, mean PSNR {mean_psnr:.2} dB (held-out {held_psnr:.2} dB), latent h×w×c {shape:?}",
            faces.len(),
            fx.codec_secs,
        ),
    )
}

fn c6_overfit_and_determinism(fx: &Fixture) -> Outcome {
    let data = demorpher::encode_manifest(
        &Manifest {
            records: fx.train.records[..1].to_vec(),
            ..fx.train.clone()
        },
        &fx.codec,
    )
    .unwrap();
    let cfg = DemorphConfig {
        swap_prob: 0.0,
        epochs: 2000,
        batch_size: 1,
        lambda1: 100.0,
        dropout: 0.0,
        learning_rate: 1e-3,
        ..DemorphConfig::default()
    };
    let fp = fx.codec.fingerprint();
    let a = demorpher::train_on_latents(&data, &fp, &cfg, |_| {}).unwrap();
    let b = demorpher::train_on_latents(&data, &fp, &cfg, |_| {}).unwrap();
    let o = a.generate(&data.morphs[0]).unwrap();
    let l1 = l1_loss(&o, &data.targets[0]).unwrap();
    let identical = a.to_container().to_bytes() == b.to_container().to_bytes();
    outcome(
        l1 < 0.05 && identical,
        format!("latent L1 after 2000 steps {l1:.4}; identical checkpoints: {identical}"),
    )
}

fn c7_end_to_end(fx: &Fixture) -> Outcome {
    let cfg = DemorphConfig {
        loss_variant: LossVariant::L1Kurt,
        ..DemorphConfig::desk()
    };
    let t = Instant::now();
    let ckpt = demorpher::train(&fx.train, &fx.codec, &cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let opts = EvalOptions {
        fmr_targets: vec![0.1],
        ..EvalOptions::default()
    };
    let model = TrainedDemorpher {
        codec: &fx.codec,
        ckpt: &ckpt,
    };
    let (report, _) = evaluate_with(&fx.test, &model, &ToyProvider, &opts).unwrap();
    let (stub, _) = evaluate_with(&fx.test, &ReplicationStub, &ToyProvider, &opts).unwrap();
    let ra = 100.0 * report.aggregates.restoration_accuracy["0.1"];
    let rep = 100.0 * report.aggregates.replication_rate;
    let stub_ra = 100.0 * stub.aggregates.restoration_accuracy["0.1"];
    outcome(
        report.rows.len() == TEST_MORPHS && secs <= 1800.0 && ra >= 60.0 && rep <= 20.0 && ra >= stub_ra + 20.0,
        format!(
            "{} train / {} test morphs, trained {} epochs in {secs:.0}s: RA@10%FMR {ra:.1}%, replication {rep:.1}%, \
             (x,x) stub RA {stub_ra:.1}%",
            fx.train.records.len(),
            report.rows.len(),
            cfg.epochs
        ),
    )
}

fn unit_embedding(r: &mut ChaCha8Rng) -> Embedding {
    Embedding::new((0..6).map(|_| r.random_range(-1.0..1.0)).collect(), "t").unwrap()
}

fn random_result(r: &mut ChaCha8Rng) -> DemorphResult {
    let mut img = || random_image(r, 16, 16, 3);
    let (m, o1, o2, i1, i2) = (img(), img(), img(), img(), img());
    DemorphResult {
        morph_id: "m".into(),
        morph: m,
        outputs: (o1, o2),
        ground_truths: (i1, i2),
        embeddings: ResultEmbeddings {
            morph: unit_embedding(r),
            outputs: (unit_embedding(r), unit_embedding(r)),
            truths: (unit_embedding(r), unit_embedding(r)),
        },
    }
}

fn threshold(tau: f64, fmr: f64) -> MatchThreshold {
    MatchThreshold {
        tau,
        fmr_target: fmr,
        impostor_count: 1,
        provider_id: "t".into(),
    }
}

fn c8_evaluation_algebra() -> Outcome {
    let mut r = rng(808);
    let (mut invariant, mut monotone, mut bw_ok) = (true, true, true);
    let mut worst_bw = 0.0f64;
    let impostors: Vec<f64> = (0..500).map(|_| r.random_range(-1.0..1.0)).collect();
    let fmrs = [0.001, 0.01, 0.05, 0.1, 0.3, 1.0];
    let taus: Vec<MatchThreshold> = fmrs
        .iter()
        .map(|&f| {
            let t = calibrate_threshold(&impostors, f, "t").unwrap();
            threshold(t.tau, f)
        })
        .collect();
    let mut batch = Vec::new();
    for k in 0..1000 {
        let res = random_result(&mut r);
        let swapped = res.with_truths_swapped();
        let th = threshold(r.random_range(-1.0..1.0), 0.1);
        let pair = [res.clone()];
        let pair_s = [swapped.clone()];
        invariant &= restoration_accuracy(&pair, &th).unwrap().to_bits()
            == restoration_accuracy(&pair_s, &th).unwrap().to_bits()
            && tmr_at_fmr(&pair, &th).unwrap().to_bits() == tmr_at_fmr(&pair_s, &th).unwrap().to_bits();
        for iqa in [Iqa::Ssim, Iqa::Psnr] {
            let got = bw_iqa(&res, iqa).unwrap();
            invariant &= got.to_bits() == bw_iqa(&swapped, iqa).unwrap().to_bits();
            let e = &res.embeddings;
            let q = |o: &Image, i: &Image| match iqa {
                Iqa::Ssim => ssim(o, i).unwrap(),
                Iqa::Psnr => psnr(o, i).unwrap(),
            };
            let b = |o: &Embedding, i: &Embedding| match_score(o, i).unwrap().clamp(0.0, 1.0);
            let (o, i) = (&res.outputs, &res.ground_truths);
            let ident = b(&e.outputs.0, &e.truths.0) * q(&o.0, &i.0) + b(&e.outputs.1, &e.truths.1) * q(&o.1, &i.1);
            let cross = b(&e.outputs.0, &e.truths.1) * q(&o.0, &i.1) + b(&e.outputs.1, &e.truths.0) * q(&o.1, &i.0);
            let want = ident.max(cross);
            worst_bw = worst_bw.max((got - want).abs());
            bw_ok &= (got - want).abs() <= 1e-9 * want.abs().max(1.0);
        }
        assign(&res).unwrap();
        batch.push(res);
        if k % 50 == 49 {
            let ras: Vec<f64> = taus.iter().map(|t| restoration_accuracy(&batch, t).unwrap()).collect();
            monotone &= ras.windows(2).all(|w| w[0] <= w[1]);
            batch.clear();
        }
    }
    outcome(
        invariant && monotone && bw_ok,
        format!(
            "1000 tuples: pairing invariance {invariant}, RA monotone in FMR {monotone}, BW oracle max |Δ| {worst_bw:.1e}"
        ),
    )
}

fn c9_calibration() -> Outcome {
    let mut r = rng(909);
    let (mut monotone, mut bounded) = (true, true);
    for _ in 0..100 {
        let n = r.random_range(1..400);
        let ties = r.random_bool(0.3);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = r.random_range(-1.0..1.0);
                if ties {
                    (s * 4.0).round() / 4.0
                } else {
                    s
                }
            })
            .collect();
        let mut prev = f64::INFINITY;
        for fmr in [0.0005, 0.001, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0] {
            let t = calibrate_threshold(&scores, fmr, "t").unwrap();
            monotone &= t.tau <= prev;
            prev = t.tau;
            bounded &= achieved_fmr(&scores, t.tau) <= fmr;
        }
    }
    let worked: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
    let tau = calibrate_threshold(&worked, 0.1, "t").unwrap().tau;
    outcome(
        monotone && bounded && tau == 0.9,
        format!("100 sets: τ monotone {monotone}, achieved FMR ≤ target {bounded}; worked example τ = {tau}"),
    )
}

fn c10_stub_oracles(fx: &Fixture) -> Outcome {
    let subset = Manifest {
        records: fx.test.records[..60].to_vec(),
        ..fx.test.clone()
    };
    let opts = EvalOptions::default();
    let (gt, _) = evaluate_with(&subset, &GroundTruthStub, &ToyProvider, &opts).unwrap();
    let (rep, _) = evaluate_with(&subset, &ReplicationStub, &ToyProvider, &opts).unwrap();
    let gt_ra: Vec<f64> = gt.aggregates.restoration_accuracy.values().copied().collect();
    let pass = gt_ra.iter().all(|v| *v == 1.0)
        && gt.aggregates.replication_rate == 0.0
        && rep.aggregates.replication_rate == 1.0
        && rep.aggregates.separation_rate == 0.0;
    outcome(
        pass,
        format!(
            "ground truth RA {gt_ra:?}, replication {}; (x,x) replication {}, separation {}",
            gt.aggregates.replication_rate, rep.aggregates.replication_rate, rep.aggregates.separation_rate
        ),
    )
}

fn dir_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn c11_protocol(fx: &Fixture) -> Outcome {
    let mut r = rng(1111);
    let mut disjoint = true;
    for k in 0..100u64 {
        let n = r.random_range(4..200);
        let ids: Vec<String> = (0..n).map(|i| format!("p{:04}", r.random_range(0..10_000) * 200 + i)).collect();
        let split = make_scenario_split(&ids, Scenario::Disjoint, k).unwrap();
        let train: BTreeSet<&String> = split.ids(Side::Train).iter().collect();
        disjoint &= split.ids(Side::Test).iter().all(|id| !train.contains(id));
    }
    let text = fx.test.to_jsonl().unwrap();
    let origin = Path::new("round-trip.jsonl");
    let stable = Manifest::parse(&text, origin).unwrap().to_jsonl().unwrap() == text
        && fx.train.to_jsonl().unwrap() == Manifest::parse(&fx.train.to_jsonl().unwrap(), origin).unwrap().to_jsonl().unwrap();
    let regenerate = |root: &Path| {
        let reg = gen_toy_faces(12, 32, 5, &root.join("faces")).unwrap();
        let split = make_scenario_split(&reg.ids(), Scenario::Disjoint, 5).unwrap();
        let pairs = sample_pairs(&split, Side::Train, 10, 5).unwrap();
        build_morph_dataset(&reg, &pairs, 0.5, Scenario::Disjoint, Side::Train, &root.join("morphs"), 5).unwrap();
        dir_bytes(root)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ba, bb) = (regenerate(a.path()), regenerate(b.path()));
    let identical = !ba.is_empty() && ba == bb;
    outcome(
        disjoint && stable && identical,
        format!(
            "scenario-3 intersection empty over 100 splits {disjoint}; manifests round-trip {stable}; \
             regeneration byte-identical over {} files {identical}",
            ba.len()
        ),
    )
}

fn main() {
    let start = Instant::now();
    let mut failed = Vec::new();
    let mut report = |id: u32, name: &str, o: Outcome| {
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("acceptance {id:>2} {verdict} {name}: {}", o.detail);
        if !o.pass {
            failed.push(id);
        }
    };
    report(1, "metric oracles", c1_metric_oracles());
    report(2, "warp oracle", c2_warp_oracle());
    report(3, "loss arithmetic", c3_loss_arithmetic());
    report(4, "gradient checks", c4_gradient_checks());
    report(8, "evaluation algebra", c8_evaluation_algebra());
    report(9, "calibration", c9_calibration());
    let fx = fixture();
    report(5, "codec desk training", c5_codec(&fx));
    report(6, "demorpher overfit and determinism", c6_overfit_and_determinism(&fx));
    report(10, "stub oracles", c10_stub_oracles(&fx));
    report(11, "protocol", c11_protocol(&fx));
    report(7, "end-to-end desk run", c7_end_to_end(&fx));
    println!(
        "acceptance: {} of 11 criteria passed in {:.0}s",
        11 - failed.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
