//! Acceptance run: one pass/fail line per criterion, nonzero exit if any fails.
//!
//! Built with `harness = false`; run with `cargo test -p fmeval-core --test acceptance`.
//! Set `ACCEPTANCE_ONLY=A1,A6` to run a subset.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fmeval_core::autoencoder::{
    checkpoint_bytes, init_params, read_checkpoint, sample_loss, sample_loss_and_grad, train_stage1, write_checkpoint,
    AEParams, TrainReport,
};
use fmeval_core::dataset::{read_dataset, write_dataset};
use fmeval_core::embedding::{
    embed_scenes, load_external_embeddings, select_space, write_embeddings, EmbeddingSource, HashEmbedder,
};
use fmeval_core::gt::{parse_gt_file, write_gt_file};
use fmeval_core::pipeline::{self, PipelineConfig};
use fmeval_core::scoring::{pearson, read_json, similarity_score, SampleScore};
use fmeval_core::synthetic::{gen_features, gen_scenes};
use fmeval_core::tensor::gradcheck::{max_rel_error, numeric_partials};
use fmeval_core::tensor::{
    conv2d_backward, conv2d_forward, cosine_sim, cosine_sim_with_grad, deconv2d_backward, deconv2d_forward, mse_loss,
    Activation,
};
use fmeval_core::{AEConfig, AeSettings, ConvSpec, Error, Representation, SeriesReport, Space, SynthConfig, Tensor};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = std::result::Result<String, String>;

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const SEED: u64 = 20240611;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn rng(stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(SEED ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn within(elapsed: Duration, limit: Duration) -> std::result::Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

// ---------------------------------------------------------------- A1

struct LayerCase {
    name: &'static str,
    spec: ConvSpec,
    input: [usize; 3],
}

/// Checks grad_x, grad_w and grad_b of one layer through the scalar `<y, r>`.
fn check_layer(case: &LayerCase, stream: u64) -> std::result::Result<(f64, usize), String> {
    let mut g = rng(stream);
    let spec = &case.spec;
    let x = randn(&mut g, &case.input);
    let w = randn(&mut g, &spec.weight_shape());
    let b = randn(&mut g, &[spec.out_channels]);
    let fwd = |x: &Tensor, w: &Tensor, b: &Tensor| {
        if spec.transposed {
            deconv2d_forward(x, spec, w, b)
        } else {
            conv2d_forward(x, spec, w, b)
        }
    };
    let y = fwd(&x, &w, &b).map_err(err)?;
    let r = randn(&mut g, y.shape());
    let grads = if spec.transposed {
        deconv2d_backward(&x, spec, &w, &y, &r)
    } else {
        conv2d_backward(&x, spec, &w, &y, &r)
    }
    .map_err(err)?;

    // one flat parameter vector: x, then w, then b
    let (nx, nw) = (x.len(), w.len());
    let mut point = x.data().to_vec();
    point.extend_from_slice(w.data());
    point.extend_from_slice(b.data());
    let mut analytic_all = grads.grad_x.data().to_vec();
    analytic_all.extend_from_slice(grads.grad_w.data());
    analytic_all.extend_from_slice(grads.grad_b.data());

    let mut coords: Vec<usize> = sample(&mut g, nx, 50.min(nx)).into_vec();
    let from_w = (100 - coords.len()).min(nw);
    coords.extend(sample(&mut g, nw, from_w).into_iter().map(|i| nx + i));
    coords.extend(nx + nw..point.len());
    let objective = |p: &[f64]| {
        let xs = Tensor::new(x.shape().to_vec(), p[..nx].to_vec()).unwrap();
        let ws = Tensor::new(w.shape().to_vec(), p[nx..nx + nw].to_vec()).unwrap();
        let bs = Tensor::new(b.shape().to_vec(), p[nx + nw..].to_vec()).unwrap();
        fwd(&xs, &ws, &bs).unwrap().dot(&r).unwrap()
    };
    let numeric = numeric_partials(objective, &point, &coords, FD_STEP).map_err(err)?;
    let analytic: Vec<f64> = coords.iter().map(|&i| analytic_all[i]).collect();
    Ok((max_rel_error(&analytic, &numeric), coords.len()))
}

fn a1_gradients() -> Outcome {
    let t = Instant::now();
    let relu = Activation::Relu;
    let cases = [
        LayerCase { name: "conv k3 s2 p1 relu", spec: ConvSpec::conv(4, 6, 3, 2, 1).with_activation(relu), input: [4, 8, 8] },
        LayerCase { name: "conv k4 s1 p0 identity", spec: ConvSpec::conv(6, 8, 4, 1, 0), input: [6, 4, 4] },
        LayerCase { name: "conv k(2,4) s1 p0 identity", spec: ConvSpec::conv(3, 5, 1, 1, 0).with_kernel(2, 4), input: [3, 4, 8] },
        LayerCase { name: "deconv k3 s2 p1 op1 relu", spec: ConvSpec::deconv(6, 4, 3, 2, 1, 1).with_activation(relu), input: [6, 4, 4] },
        LayerCase { name: "deconv k4 s1 p0 relu", spec: ConvSpec::deconv(8, 6, 4, 1, 0, 0).with_activation(relu), input: [8, 2, 2] },
        LayerCase { name: "deconv k3 s2 p1 op0 identity", spec: ConvSpec::deconv(4, 3, 3, 2, 1, 0), input: [4, 4, 5] },
    ];
    let mut lines = Vec::new();
    for (i, case) in cases.iter().enumerate() {
        let (e, n) = check_layer(case, 100 + i as u64)?;
        ensure(n >= 100, || format!("{}: only {n} coordinates", case.name))?;
        ensure(e <= FD_TOL, || format!("{}: max rel err {e:.2e}", case.name))?;
        lines.push(format!("{} {e:.1e}", case.name));
    }

    let mut g = rng(200);
    let x = randn(&mut g, &[128]);
    let x_hat = randn(&mut g, &[128]);
    let (_, grad) = mse_loss(&x, &x_hat).map_err(err)?;
    let numeric = numeric_partials(
        |p| mse_loss(&x, &Tensor::new(vec![128], p.to_vec()).unwrap()).unwrap().0,
        x_hat.data(),
        &(0..128).collect::<Vec<_>>(),
        FD_STEP,
    )
    .map_err(err)?;
    let e = max_rel_error(grad.data(), &numeric);
    ensure(e <= FD_TOL, || format!("mse: max rel err {e:.2e}"))?;
    lines.push(format!("mse {e:.1e}"));

    let a = randn(&mut g, &[128]);
    let b = randn(&mut g, &[128]);
    let (_, grad) = cosine_sim_with_grad(a.data(), b.data()).map_err(err)?;
    let numeric = numeric_partials(|p| cosine_sim(p, b.data()).unwrap(), a.data(), &(0..128).collect::<Vec<_>>(), FD_STEP)
        .map_err(err)?;
    let e = max_rel_error(&grad, &numeric);
    ensure(e <= FD_TOL, || format!("cosine: max rel err {e:.2e}"))?;
    lines.push(format!("cosine {e:.1e}"));

    // total stage-2 loss of a whole tiny autoencoder, every parameter blob sampled
    let settings = AeSettings { latent_dim: 8, hidden_channels: Some([4, 4, 4]), ..AeSettings::default() };
    let config = AEConfig::build([3, 6, 6], &settings, 5).map_err(err)?;
    let mut params = init_params(&config).map_err(err)?;
    // zero biases put pre-activations exactly on the ReLU kink, where finite
    // differences are meaningless; move to a generic point
    for t in params.blobs_mut().filter(|t| t.shape().len() == 1) {
        t.data_mut().iter_mut().for_each(|v| *v = g.random_range(-0.1..0.1));
    }
    let sample_x = randn(&mut g, &[3, 6, 6]);
    let gt = Representation::new("s", Space::Bev, EmbeddingSource::External, "t", randn(&mut g, &[1, 8])).map_err(err)?;
    let mut grads = AEParams::zeros(&config);
    sample_loss_and_grad(&config, &params, "s", &sample_x, Some(&gt), &mut grads).map_err(err)?;
    let analytic_all = grads.to_flat();
    let mut coords = Vec::new();
    let mut offset = 0;
    for blob in params.blobs() {
        coords.extend(sample(&mut g, blob.len(), 12.min(blob.len())).into_iter().map(|i| offset + i));
        offset += blob.len();
    }
    ensure(coords.len() >= 100, || format!("total loss: only {} coordinates", coords.len()))?;
    let mut probe = params.clone();
    let numeric = numeric_partials(
        |p| {
            probe.set_flat(p);
            sample_loss(&config, &probe, &sample_x, Some(&gt)).unwrap().total()
        },
        &params.to_flat(),
        &coords,
        FD_STEP,
    )
    .map_err(err)?;
    let analytic: Vec<f64> = coords.iter().map(|&i| analytic_all[i]).collect();
    let e = max_rel_error(&analytic, &numeric);
    ensure(e <= FD_TOL, || format!("total loss: max rel err {e:.2e}"))?;
    lines.push(format!("total loss {e:.1e} over {} coords", coords.len()));

    within(t.elapsed(), Duration::from_secs(60))?;
    Ok(format!("{} ({:.1?})", lines.join(", "), t.elapsed()))
}

// ---------------------------------------------------------------- A2

/// Six nested loops straight from the definition of cross-correlation.
fn naive_conv(x: &Tensor, spec: &ConvSpec, w: &Tensor, b: &Tensor) -> Tensor {
    let (c_in, h, wd) = (x.shape()[0], x.shape()[1] as isize, x.shape()[2] as isize);
    let oh = (h as usize + 2 * spec.pad_h - spec.kernel_h) / spec.stride_h + 1;
    let ow = (wd as usize + 2 * spec.pad_w - spec.kernel_w) / spec.stride_w + 1;
    let mut y = Tensor::zeros(&[spec.out_channels, oh, ow]);
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    for o in 0..spec.out_channels {
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = b.data()[o];
                for c in 0..c_in {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let yy = (i * spec.stride_h + ky) as isize - spec.pad_h as isize;
                            let xx = (j * spec.stride_w + kx) as isize - spec.pad_w as isize;
                            if yy >= 0 && yy < h && xx >= 0 && xx < wd {
                                acc += x.data()[(c * h as usize + yy as usize) * wd as usize + xx as usize]
                                    * w.data()[((o * c_in + c) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
                y.data_mut()[(o * oh + i) * ow + j] = acc;
            }
        }
    }
    y
}

fn a2_conv_oracle() -> Outcome {
    let mut g = rng(300);
    let (mut shapes, mut worst, mut worst_adj) = (0usize, 0.0f64, 0.0f64);
    for c_in in 1..=4 {
        for h in 1..=8 {
            for wd in 1..=8 {
                for k in 1..=3 {
                    for s in 1..=2 {
                        for p in 0..=1 {
                            if h + 2 * p < k || wd + 2 * p < k {
                                continue;
                            }
                            let c_out = 1 + (c_in + h + wd) % 3;
                            let spec = ConvSpec::conv(c_in, c_out, k, s, p);
                            let x = randn(&mut g, &[c_in, h, wd]);
                            let w = randn(&mut g, &spec.weight_shape());
                            let b = randn(&mut g, &[c_out]);
                            let got = conv2d_forward(&x, &spec, &w, &b).map_err(err)?;
                            let want = naive_conv(&x, &spec, &w, &b);
                            ensure(got.shape() == want.shape(), || format!("shape {:?} vs {:?}", got.shape(), want.shape()))?;
                            let diff = got.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                            worst = worst.max(diff);
                            ensure(diff <= 1e-12, || format!("c{c_in} {h}x{wd} k{k} s{s} p{p}: |diff| {diff:.2e}"))?;

                            // adjoint: the transposed layer with the same weights, sized back to x
                            let (oh, ow) = (got.shape()[1], got.shape()[2]);
                            let op_h = h - ((oh - 1) * s + k - 2 * p);
                            let op_w = wd - ((ow - 1) * s + k - 2 * p);
                            let t_spec = ConvSpec::deconv(c_out, c_in, k, s, p, 0).with_out_pad(op_h, op_w);
                            // deconv weights are [in, out, kh, kw]: the conv weight read as [c_out, c_in, k, k]
                            let zero_o = Tensor::zeros(&[c_out]);
                            let zero_i = Tensor::zeros(&[c_in]);
                            let yv = randn(&mut g, got.shape());
                            let lhs = conv2d_forward(&x, &spec, &w, &zero_o).map_err(err)?.dot(&yv).map_err(err)?;
                            let back = deconv2d_forward(&yv, &t_spec, &w, &zero_i).map_err(err)?;
                            let rhs = x.dot(&back).map_err(err)?;
                            let gap = (lhs - rhs).abs();
                            worst_adj = worst_adj.max(gap);
                            ensure(gap <= 1e-10, || format!("adjoint c{c_in} {h}x{wd} k{k} s{s} p{p}: gap {gap:.2e}"))?;
                            shapes += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(format!("{shapes} configurations, max |diff| {worst:.1e}, max adjoint gap {worst_adj:.1e}"))
}

// ---------------------------------------------------------------- A3

fn a3_overfit() -> Outcome {
    let t = Instant::now();
    let synth = SynthConfig { n_samples: 8, ..SynthConfig::default() };
    let scenes = gen_scenes(&synth, SEED);
    let reps = embed_scenes(&scenes, Space::Bev, &HashEmbedder::default()).map_err(err)?;
    let ds = gen_features(&synth, Space::Bev, "overfit", &scenes, &reps, SEED).map_err(err)?;
    let last = *ds.phases().last().unwrap();
    let samples: Vec<_> = ds.phase(last).iter().collect();
    // wider and gentler than the pipeline defaults: those are sized for 8 phases of
    // noisy data, not for memorizing 8 samples
    let settings = AeSettings {
        latent_dim: 128,
        hidden_channels: Some([128, 128, 128]),
        stage1_epochs: 300,
        stage1_lr: 0.3,
        ..PipelineConfig::default().ae
    };
    let config = AEConfig::build([32, 8, 8], &settings, SEED).map_err(err)?;
    let mean_recon = |params: &AEParams| -> std::result::Result<f64, String> {
        let mut sum = 0.0;
        for m in &samples {
            sum += sample_loss(&config, params, &m.tensor, None).map_err(err)?.recon;
        }
        Ok(sum / samples.len() as f64)
    };
    let initial = mean_recon(&init_params(&config).map_err(err)?)?;
    let (params, _) = train_stage1(&config, &samples).map_err(err)?;
    let fin = mean_recon(&params)?;
    let ratio = fin / initial;
    ensure(ratio <= 0.01, || format!("recon {initial:.4} -> {fin:.4} (ratio {ratio:.4})"))?;
    within(t.elapsed(), Duration::from_secs(300))?;
    Ok(format!("recon {initial:.4} -> {fin:.2e} (ratio {ratio:.2e}, {:.1?})", t.elapsed()))
}

// ---------------------------------------------------------------- A4, A5, A7

fn run_pipeline(out: &Path, synth: SynthConfig) -> std::result::Result<SeriesReport, String> {
    let cfg = PipelineConfig { out: out.to_path_buf(), seed: Some(SEED), synth, ..PipelineConfig::default() };
    pipeline::cmd_run_all(&cfg).map_err(err)
}

fn a4_alignment(dir: &Path) -> Outcome {
    let t = Instant::now();
    let out = dir.join("noiseless");
    let report = run_pipeline(&out, SynthConfig { noise_sigma: 0.0, ..SynthConfig::default() })?;
    let final_mean = *report.mean_scores.last().unwrap();

    let train: TrainReport = read_json(out.join(pipeline::TRAIN_REPORT_FILE)).map_err(err)?;
    for e in &train.epochs {
        if let Some(a) = e.align {
            ensure((0.0..=2.0).contains(&a), || format!("epoch {} mean align {a}", e.epoch))?;
        }
    }
    let mut rdr = csv::Reader::from_path(out.join(pipeline::SCORES_FILE)).map_err(err)?;
    let mut n = 0;
    for row in rdr.deserialize::<SampleScore>() {
        let s = row.map_err(err)?;
        let align = 1.0 - s.score;
        ensure((0.0..=2.0).contains(&align), || format!("{} phase {}: align {align}", s.sample_id, s.phase))?;
        n += 1;
    }
    ensure(final_mean >= 0.9, || format!("final-phase mean S {final_mean:.4} < 0.9"))?;
    within(t.elapsed(), Duration::from_secs(600))?;
    Ok(format!("final-phase mean S {final_mean:.4}, {n} per-sample align values in [0, 2] ({:.1?})", t.elapsed()))
}

fn a5_correlation(dir: &Path) -> Outcome {
    let t = Instant::now();
    let report = run_pipeline(&dir.join("default-1"), SynthConfig::default())?;
    let elapsed = t.elapsed();
    let means: Vec<String> = report.mean_scores.iter().map(|m| format!("{m:.3}")).collect();
    let (map, nds) = (report.rho["mAP"], report.rho["NDS"]);
    let detail = format!("rho mAP {map:.4}, NDS {nds:.4}; S = [{}] ({elapsed:.1?})", means.join(" "));
    ensure(map >= 0.9 && nds >= 0.9, || detail.clone())?;
    within(elapsed, Duration::from_secs(900))?;
    Ok(detail)
}

fn a7_determinism(dir: &Path) -> Outcome {
    let first = dir.join("default-1");
    if !first.join(pipeline::REPORT_FILE).exists() {
        run_pipeline(&first, SynthConfig::default())?;
    }
    let second = dir.join("default-2");
    run_pipeline(&second, SynthConfig::default())?;
    for file in [pipeline::REPORT_FILE, pipeline::CHECKPOINT_FILE, pipeline::SCORES_FILE] {
        let a = fs::read(first.join(file)).map_err(err)?;
        let b = fs::read(second.join(file)).map_err(err)?;
        ensure(a == b, || format!("{file} differs between runs"))?;
    }
    Ok("report.json, checkpoint and scores byte-identical across two runs".into())
}

// ---------------------------------------------------------------- A6

fn a6_scoring() -> Outcome {
    let close = |a: f64, b: f64, tol: f64, what: &str| ensure((a - b).abs() <= tol, || format!("{what}: {a} vs {b}"));

    let cos = cosine_sim(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).map_err(err)?;
    close(cos, 32.0 / (14.0f64.sqrt() * 77.0f64.sqrt()), 1e-12, "cosine oracle")?;
    close(cos, 0.974632, 1e-6, "cosine example")?;
    close(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).map_err(err)?, 0.0, 0.0, "orthogonal")?;

    // 2d: rows built so camera cosines are 1, 0, 1, 0, 1, 0
    let e0: Vec<f64> = (0..768).map(|i| (i == 0) as u8 as f64).collect();
    let e1: Vec<f64> = (0..768).map(|i| (i == 1) as u8 as f64).collect();
    let gt_rows: Vec<f64> = (0..6).flat_map(|_| e0.clone()).collect();
    let fm_rows: Vec<f64> = (0..6).flat_map(|c| if c % 2 == 0 { e0.clone() } else { e1.clone() }).collect();
    let rep = |rows: Vec<f64>| {
        Representation::new("s", Space::Image, EmbeddingSource::External, "t", Tensor::new(vec![6, 768], rows).unwrap())
            .unwrap()
    };
    close(similarity_score(&rep(fm_rows), &rep(gt_rows.clone())).map_err(err)?, 0.5, 1e-15, "camera mean")?;

    let mut g = rng(600);
    let a = randn(&mut g, &[1, 768]);
    let b = randn(&mut g, &[1, 768]);
    let direct = {
        let (ad, bd) = (a.data(), b.data());
        let dot: f64 = ad.iter().zip(bd).map(|(x, y)| x * y).sum();
        dot / (ad.iter().map(|x| x * x).sum::<f64>().sqrt() * bd.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let ra = Representation::new("s", Space::Bev, EmbeddingSource::External, "t", a.clone()).map_err(err)?;
    let rb = Representation::new("s", Space::Bev, EmbeddingSource::External, "t", b).map_err(err)?;
    close(similarity_score(&ra, &rb).map_err(err)?, direct, 1e-12, "random pair")?;

    // hand-computed moments: means 7/3 and 3, cov sum 6, variance sums 14/3 and 8
    let rho = pearson(&[1.0, 2.0, 4.0], &[1.0, 3.0, 5.0]).map_err(err)?;
    close(rho, 6.0 / ((14.0f64 / 3.0) * 8.0).sqrt(), 1e-12, "pearson oracle")?;
    close(rho, 0.98198, 1e-5, "pearson example")?;
    close(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).map_err(err)?, 1.0, 1e-15, "pearson +1")?;
    close(pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).map_err(err)?, -1.0, 1e-15, "pearson -1")?;

    let s: Vec<f64> = (0..8).map(|_| g.random_range(-1.0..1.0)).collect();
    let m: Vec<f64> = (0..8).map(|_| g.random_range(0.0..1.0)).collect();
    let r = pearson(&s, &m).map_err(err)?;
    close(pearson(&m, &s).map_err(err)?, r, 1e-12, "symmetry")?;
    let affine: Vec<f64> = m.iter().map(|v| -2.5 * v + 7.0).collect();
    close(pearson(&s, &affine).map_err(err)?, -r, 1e-12, "affine invariance")?;
    let n = s.len() as f64;
    let (ms, mm) = (s.iter().sum::<f64>() / n, m.iter().sum::<f64>() / n);
    let cov: f64 = s.iter().zip(&m).map(|(a, b)| (a - ms) * (b - mm)).sum::<f64>() / (n - 1.0);
    let vs: f64 = s.iter().map(|a| (a - ms).powi(2)).sum::<f64>() / (n - 1.0);
    let vm: f64 = m.iter().map(|b| (b - mm).powi(2)).sum::<f64>() / (n - 1.0);
    close(r, cov / (vs * vm).sqrt(), 1e-12, "sample-moment pearson")?;

    match cosine_sim(&[0.0; 4], &[1.0, 0.0, 0.0, 0.0]) {
        Err(Error::DegenerateVector { .. }) => {}
        other => return Err(format!("zero vector gave {other:?}")),
    }
    let zero = Representation::new("s", Space::Bev, EmbeddingSource::External, "t", Tensor::zeros(&[1, 768])).map_err(err)?;
    match similarity_score(&zero, &ra) {
        Err(Error::DegenerateVector { .. }) => {}
        other => return Err(format!("zero representation gave {other:?}")),
    }
    match pearson(&[0.5; 4], &[1.0, 2.0, 3.0, 4.0]) {
        Err(Error::ZeroVariance { .. }) => {}
        other => return Err(format!("constant series gave {other:?}")),
    }
    Ok("cosine, camera-mean, pearson oracles and degenerate-input errors".into())
}

// ---------------------------------------------------------------- A8

fn a8_round_trips(dir: &Path) -> Outcome {
    let dir = dir.join("formats");
    let synth = SynthConfig { n_samples: 5, n_phases: 3, ..SynthConfig::default() };
    let mut checked = Vec::new();
    for space in [Space::Bev, Space::Image] {
        let scenes = gen_scenes(&synth, SEED);
        let reps = embed_scenes(&scenes, space, &HashEmbedder::default()).map_err(err)?;
        let ds = gen_features(&synth, space, "fmt", &scenes, &reps, SEED).map_err(err)?;
        let (a, b) = (dir.join(format!("{space}-ds-a")), dir.join(format!("{space}-ds-b")));
        write_dataset(&a, &ds).map_err(err)?;
        let back = read_dataset(&a).map_err(err)?;
        write_dataset(&b, &back).map_err(err)?;
        same_dir(&a, &b)?;
        for (x, y) in ds.iter().zip(back.iter()) {
            ensure(x.tensor.data().iter().zip(y.tensor.data()).all(|(u, v)| (*u as f32) as f64 == *v), || {
                format!("{space} dataset lost more than f32 rounding")
            })?;
        }

        let (ea, eb) = (dir.join(format!("{space}-emb-a.jsonl")), dir.join(format!("{space}-emb-b.jsonl")));
        write_embeddings(&ea, reps.values()).map_err(err)?;
        let loaded = select_space(load_external_embeddings(&ea).map_err(err)?, space);
        write_embeddings(&eb, loaded.values()).map_err(err)?;
        same_file(&ea, &eb)?;
        checked.push(format!("{space} dataset+embeddings"));
    }

    let scenes = gen_scenes(&synth, SEED);
    let (ga, gb) = (dir.join("gt-a.json"), dir.join("gt-b.json"));
    write_gt_file(&ga, &scenes).map_err(err)?;
    write_gt_file(&gb, &parse_gt_file(&ga).map_err(err)?).map_err(err)?;
    same_file(&ga, &gb)?;

    let settings = AeSettings { latent_dim: 16, hidden_channels: Some([8, 8, 8]), ..AeSettings::default() };
    let config = AEConfig::build([4, 6, 6], &settings, SEED).map_err(err)?;
    let params = init_params(&config).map_err(err)?;
    let (ca, cb) = (dir.join("a.aeck"), dir.join("b.aeck"));
    write_checkpoint(&ca, &config, &params).map_err(err)?;
    let back = read_checkpoint(&ca, &config).map_err(err)?;
    ensure(back == params, || "checkpoint params changed".into())?;
    write_checkpoint(&cb, &config, &back).map_err(err)?;
    same_file(&ca, &cb)?;
    ensure(checkpoint_bytes(&config, &back).map_err(err)? == fs::read(&ca).map_err(err)?, || {
        "checkpoint bytes differ from file".into()
    })?;
    checked.push("gt".into());
    checked.push("checkpoint".into());
    Ok(format!("byte-identical: {}", checked.join(", ")))
}

fn same_file(a: &Path, b: &Path) -> std::result::Result<(), String> {
    let (x, y) = (fs::read(a).map_err(err)?, fs::read(b).map_err(err)?);
    ensure(x == y, || format!("{} and {} differ", a.display(), b.display()))
}

fn same_dir(a: &Path, b: &Path) -> std::result::Result<(), String> {
    let mut names: Vec<_> = fs::read_dir(a).map_err(err)?.map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let count = fs::read_dir(b).map_err(err)?.count();
    ensure(names.len() == count, || format!("{} and {} hold different files", a.display(), b.display()))?;
    for n in names {
        same_file(&a.join(&n), &b.join(&n))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as `--list`; only listing needs an answer
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let only: Option<Vec<String>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').map(|s| s.trim().to_uppercase()).collect());
    let dir = tempfile::tempdir().expect("temp dir");
    let root = dir.path();

    let criteria: Vec<(&str, &str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("A1", "gradients match finite differences", Box::new(a1_gradients)),
        ("A2", "convolution matches the nested-loop oracle", Box::new(a2_conv_oracle)),
        ("A3", "stage-1 overfits 8 samples", Box::new(a3_overfit)),
        ("A4", "stage-2 aligns noiseless features", Box::new(move || a4_alignment(root))),
        ("A5", "phase scores correlate with metrics", Box::new(move || a5_correlation(root))),
        ("A6", "scoring oracles", Box::new(a6_scoring)),
        ("A7", "end-to-end determinism", Box::new(move || a7_determinism(root))),
        ("A8", "file formats round-trip", Box::new(move || a8_round_trips(root))),
    ];
    let mut results = BTreeMap::new();
    for (id, title, check) in &criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|x| x == id)) {
            continue;
        }
        let outcome = check();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{id} {tag} {title}: {detail}");
        results.insert(*id, outcome.is_ok());
    }
    if results.values().all(|&ok| ok) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
