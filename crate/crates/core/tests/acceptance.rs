//! Acceptance suite: one pass/fail line per criterion, run sequentially in
//! a single test so timings are single-core and output is ordered.

use std::time::Instant;

use avfusion_core::checkpoint::Checkpoint;
use avfusion_core::datapipe::{mix_at_snr, spectrogram, FeatureSequence, SpectrogramConfig};
use avfusion_core::error::Error;
use avfusion_core::eval::{metrics, ConfusionMatrix, Metrics, StreamKind};
use avfusion_core::gradcheck;
use avfusion_core::layers::{
    delta_backward, delta_forward, softmax_xent, Activation, DeltaConfig, DenseLayer,
};
use avfusion_core::model::{
    fusion_backward, fusion_logits_cached, FusionModel, StreamParams,
};
use avfusion_core::rbm::{pretrain_stack, znormalize, CdConfig};
use avfusion_core::recurrent::{blstm_backward, blstm_forward, lstm_backward, lstm_forward, BlstmParams, LstmParams};
use avfusion_core::rng::RngState;
use avfusion_core::tensor::Matrix;
use avfusion_core::training::{
    clip_lstm_gradients, fusion_grad_blocks, fusion_param_blocks, BlockKind, EarlyStopState,
    GradBlock,
};
use avfusion_core::workflow::{
    run_eval, run_pretrain, run_synth, run_train_fusion, run_train_stream, Modality, RunConfig,
    StreamSelection,
};

const FD_H: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn random(rng: &mut RngState, r: usize, c: usize) -> Matrix {
    let data = (0..r * c).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    Matrix::from_vec(r, c, data).unwrap()
}

fn temp_dir(tag: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("avf-acc-{}-{}", tag, std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    dir
}

// ---------------------------------------------------------------- criterion 1

fn criterion_1_gradients() -> Result<String, String> {
    let start = Instant::now();
    let mut worst_overall = 0.0f64;

    // Dense layers, both activations, params and input.
    for (seed, act) in [(11u64, Activation::Relu), (12, Activation::Linear)] {
        let mut rng = RngState::new(seed);
        let layer = DenseLayer::glorot(&mut rng, 5, 4, act).map_err(|e| e.to_string())?;
        let x = random(&mut rng, 4, 5);
        let r = random(&mut rng, 4, 4);
        let y = layer.forward(&x).map_err(|e| e.to_string())?;
        let g = layer.backward(&x, &y, &r).map_err(|e| e.to_string())?;
        let objective = |l: &DenseLayer, xx: &Matrix| -> f64 {
            let yy = l.forward(xx).unwrap();
            yy.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        let mut buf = layer.w.data().to_vec();
        let worst = gradcheck::check_gradient(&mut buf, g.dw.data(), FD_H, |v| {
            let mut ll = layer.clone();
            ll.w = Matrix::from_vec(4, 5, v.to_vec()).unwrap();
            objective(&ll, &x)
        });
        worst_overall = worst_overall.max(worst);
        let mut buf = layer.b.clone();
        let worst = gradcheck::check_gradient(&mut buf, &g.db, FD_H, |v| {
            let mut ll = layer.clone();
            ll.b = v.to_vec();
            objective(&ll, &x)
        });
        worst_overall = worst_overall.max(worst);
        let mut buf = x.data().to_vec();
        let worst = gradcheck::check_gradient(&mut buf, g.dx.data(), FD_H, |v| {
            objective(&layer, &Matrix::from_vec(4, 5, v.to_vec()).unwrap())
        });
        worst_overall = worst_overall.max(worst);
    }

    // Delta operator input gradient (the adjoint) against finite differences.
    {
        let mut rng = RngState::new(13);
        let cfg = DeltaConfig { window: 2 };
        let x = random(&mut rng, 6, 3);
        let r = random(&mut rng, 6, 9);
        let dx = delta_backward(&cfg, &r).map_err(|e| e.to_string())?;
        let mut buf = x.data().to_vec();
        let worst = gradcheck::check_gradient(&mut buf, dx.data(), FD_H, |v| {
            let xx = Matrix::from_vec(6, 3, v.to_vec()).unwrap();
            let y = delta_forward(&cfg, &xx).unwrap();
            y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        });
        worst_overall = worst_overall.max(worst);
    }

    // Softmax cross-entropy logits gradient.
    {
        let mut rng = RngState::new(14);
        let logits = random(&mut rng, 5, 4);
        let labels = vec![0usize, 3, 1, 2, 2];
        let (_, d_logits) = softmax_xent(&logits, &labels).map_err(|e| e.to_string())?;
        let mut buf = logits.data().to_vec();
        let worst = gradcheck::check_gradient(&mut buf, d_logits.data(), FD_H, |v| {
            let zz = Matrix::from_vec(5, 4, v.to_vec()).unwrap();
            softmax_xent(&zz, &labels).unwrap().0
        });
        worst_overall = worst_overall.max(worst);
    }

    // LSTM: every parameter block plus the input, T = 5 frames.
    {
        let mut rng = RngState::new(15);
        let p = LstmParams::glorot(&mut rng, 3, 3).map_err(|e| e.to_string())?;
        let x = random(&mut rng, 5, 3);
        let r = random(&mut rng, 5, 3);
        let (h, cache) = lstm_forward(&p, &x).map_err(|e| e.to_string())?;
        let (g, dx) = lstm_backward(&p, &x, &h, &cache, &r).map_err(|e| e.to_string())?;
        let objective = |pp: &LstmParams, xx: &Matrix| -> f64 {
            let (hh, _) = lstm_forward(pp, xx).unwrap();
            hh.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        macro_rules! fd_mat {
            ($field:ident) => {{
                let mut buf = p.$field.data().to_vec();
                let shape = p.$field.shape();
                let worst = gradcheck::check_gradient(&mut buf, g.$field.data(), FD_H, |v| {
                    let mut pp = p.clone();
                    pp.$field = Matrix::from_vec(shape.0, shape.1, v.to_vec()).unwrap();
                    objective(&pp, &x)
                });
                worst_overall = worst_overall.max(worst);
            }};
        }
        macro_rules! fd_vec {
            ($field:ident) => {{
                let mut buf = p.$field.clone();
                let worst = gradcheck::check_gradient(&mut buf, &g.$field, FD_H, |v| {
                    let mut pp = p.clone();
                    pp.$field = v.to_vec();
                    objective(&pp, &x)
                });
                worst_overall = worst_overall.max(worst);
            }};
        }
        fd_mat!(wi);
        fd_mat!(wf);
        fd_mat!(wg);
        fd_mat!(wo);
        fd_mat!(ui);
        fd_mat!(uf);
        fd_mat!(ug);
        fd_mat!(uo);
        fd_vec!(bi);
        fd_vec!(bf);
        fd_vec!(bg);
        fd_vec!(bo);
        let mut buf = x.data().to_vec();
        let worst = gradcheck::check_gradient(&mut buf, dx.data(), FD_H, |v| {
            objective(&p, &Matrix::from_vec(5, 3, v.to_vec()).unwrap())
        });
        worst_overall = worst_overall.max(worst);
    }

    // BLSTM: both directions spot-checked over all blocks via full fd on a
    // 4-frame instance.
    {
        let mut rng = RngState::new(16);
        let p = BlstmParams::glorot(&mut rng, 2, 2).map_err(|e| e.to_string())?;
        let x = random(&mut rng, 4, 2);
        let r = random(&mut rng, 4, 4);
        let (_, cache) = blstm_forward(&p, &x).map_err(|e| e.to_string())?;
        let ((gf, gb), dx) = blstm_backward(&p, &x, &cache, &r).map_err(|e| e.to_string())?;
        let objective = |pp: &BlstmParams, xx: &Matrix| -> f64 {
            let (yy, _) = blstm_forward(pp, xx).unwrap();
            yy.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
        };
        for (dir, g) in [(0usize, &gf), (1, &gb)] {
            macro_rules! fd_dir_mat {
                ($field:ident) => {{
                    let cell = if dir == 0 { &p.fwd } else { &p.bwd };
                    let mut buf = cell.$field.data().to_vec();
                    let shape = cell.$field.shape();
                    let worst =
                        gradcheck::check_gradient(&mut buf, g.$field.data(), FD_H, |v| {
                            let mut pp = p.clone();
                            let target = if dir == 0 { &mut pp.fwd } else { &mut pp.bwd };
                            target.$field =
                                Matrix::from_vec(shape.0, shape.1, v.to_vec()).unwrap();
                            objective(&pp, &x)
                        });
                    worst_overall = worst_overall.max(worst);
                }};
            }
            fd_dir_mat!(wi);
            fd_dir_mat!(wf);
            fd_dir_mat!(wg);
            fd_dir_mat!(wo);
            fd_dir_mat!(ui);
            fd_dir_mat!(uf);
            fd_dir_mat!(ug);
            fd_dir_mat!(uo);
        }
        let mut buf = x.data().to_vec();
        let worst = gradcheck::check_gradient(&mut buf, dx.data(), FD_H, |v| {
            objective(&p, &Matrix::from_vec(4, 2, v.to_vec()).unwrap())
        });
        worst_overall = worst_overall.max(worst);
    }

    // Composed fusion model: every parameter block of both streams, the
    // fusion BLSTM and the output layer, through the cross-entropy loss.
    // 5 frames and scale-2 inputs keep all gradients well above the
    // central-difference noise floor at h = 1e-5.
    {
        let mut rng = RngState::new(17);
        let audio = StreamParams::glorot(&mut rng, 5, &[4, 2], DeltaConfig { window: 2 }, 2)
            .map_err(|e| e.to_string())?;
        let video = StreamParams::glorot(&mut rng, 4, &[3, 2], DeltaConfig { window: 2 }, 2)
            .map_err(|e| e.to_string())?;
        let mut model =
            FusionModel::from_streams(vec![audio, video], 2, 3, &mut rng).map_err(|e| e.to_string())?;
        let scaled = |rng: &mut RngState, r: usize, c: usize| {
            let data = (0..r * c).map(|_| rng.uniform_in(-2.0, 2.0)).collect();
            Matrix::from_vec(r, c, data).unwrap()
        };
        let xa = scaled(&mut rng, 5, 5);
        let xv = scaled(&mut rng, 5, 4);
        let labels = vec![0usize, 2, 1, 1, 0];
        let inputs = vec![xa, xv];

        let (logits, cache) =
            fusion_logits_cached(&model, &inputs).map_err(|e| e.to_string())?;
        let (_, d_logits) = softmax_xent(&logits, &labels).map_err(|e| e.to_string())?;
        let grads = fusion_backward(&model, &cache, &d_logits).map_err(|e| e.to_string())?;
        let gblocks = fusion_grad_blocks(&grads);
        let n_blocks = gblocks.len();
        for bi in 0..n_blocks {
            let analytic = gblocks[bi].values.clone();
            for slot in 0..analytic.len() {
                let numeric = {
                    let mut probe = |delta: f64| -> f64 {
                        {
                            let mut blocks = fusion_param_blocks(&mut model);
                            blocks[bi].values[slot] += delta;
                        }
                        let (lg, _) = fusion_logits_cached(&model, &inputs).unwrap();
                        let (loss, _) = softmax_xent(&lg, &labels).unwrap();
                        {
                            let mut blocks = fusion_param_blocks(&mut model);
                            blocks[bi].values[slot] -= delta;
                        }
                        loss
                    };
                    (probe(FD_H) - probe(-FD_H)) / (2.0 * FD_H)
                };
                let rel = gradcheck::relative_error(analytic[slot], numeric);
                worst_overall = worst_overall.max(rel);
                if rel >= FD_TOL {
                    return Err(format!(
                        "fusion block {} slot {}: rel err {:.2e}",
                        gblocks[bi].name, slot, rel
                    ));
                }
            }
        }
    }

    let elapsed = start.elapsed();
    if worst_overall >= FD_TOL {
        return Err(format!("worst relative error {:.3e} >= 1e-4", worst_overall));
    }
    if elapsed.as_secs() >= 120 {
        return Err(format!("gradient suite took {:?} (budget 2 min)", elapsed));
    }
    Ok(format!(
        "worst relative error {:.2e}, {:.1}s",
        worst_overall,
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2_delta() -> Result<String, String> {
    let cfg = DeltaConfig { window: 2 };
    let mut rng = RngState::new(21);

    // Linearity within 1e-12.
    for _ in 0..5 {
        let x = random(&mut rng, 7, 3);
        let y = random(&mut rng, 7, 3);
        let (a, b) = (rng.uniform_in(-2.0, 2.0), rng.uniform_in(-2.0, 2.0));
        let mut combo = x.clone();
        combo.scale(a);
        combo.add_scaled(&y, b).map_err(|e| e.to_string())?;
        let lhs = delta_forward(&cfg, &combo).map_err(|e| e.to_string())?;
        let mut rhs = delta_forward(&cfg, &x).map_err(|e| e.to_string())?;
        rhs.scale(a);
        rhs.add_scaled(&delta_forward(&cfg, &y).unwrap(), b).unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            if (l - r).abs() >= 1e-12 {
                return Err(format!("linearity violated: {} vs {}", l, r));
            }
        }
    }

    // Adjoint consistency within 1e-10.
    for t_len in [1usize, 2, 4, 8] {
        let x = random(&mut rng, t_len, 3);
        let u = random(&mut rng, t_len, 9);
        let ax = delta_forward(&cfg, &x).unwrap();
        let atu = delta_backward(&cfg, &u).unwrap();
        let lhs: f64 = ax.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(atu.data()).map(|(a, b)| a * b).sum();
        if (lhs - rhs).abs() >= 1e-10 {
            return Err(format!("adjoint violated at T={}: {} vs {}", t_len, lhs, rhs));
        }
    }

    // Constant -> zero derivatives, exactly.
    let x = Matrix::from_rows(&vec![vec![2.5, -0.5]; 8]).unwrap();
    let y = delta_forward(&cfg, &x).unwrap();
    for t in 0..8 {
        if y.row(t)[2..].iter().any(|&v| v != 0.0) {
            return Err("constant sequence produced nonzero derivatives".into());
        }
    }

    // Ramp -> slope exactly 1 on interior frames.
    let ramp = Matrix::from_rows(&(0..12).map(|t| vec![t as f64]).collect::<Vec<_>>()).unwrap();
    let y = delta_forward(&cfg, &ramp).unwrap();
    for t in 2..10 {
        if (y.get(t, 1) - 1.0).abs() > 1e-12 {
            return Err(format!("ramp slope at {}: {}", t, y.get(t, 1)));
        }
    }
    Ok("linearity, adjoint, constant, ramp all exact".into())
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3_signal() -> Result<String, String> {
    // 48 kHz spectrogram geometry.
    let cfg = SpectrogramConfig::default();
    if cfg.window_samples(48000) != 1920 || cfg.hop_samples(48000) != 480 {
        return Err("window/hop geometry wrong at 48 kHz".into());
    }
    let samples = vec![0.05; 48000];
    let feats = spectrogram(&samples, 48000, &cfg).map_err(|e| e.to_string())?;
    if feats.fps != 100.0 {
        return Err(format!("frame rate {} != 100 fps", feats.fps));
    }

    // mix_at_snr over 100 random cases within 1e-9 dB.
    let mut rng = RngState::new(31);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = 100 + rng.index(1000);
        let clean: Vec<f64> = (0..n).map(|_| rng.uniform_in(-0.9, 0.9)).collect();
        let noise: Vec<f64> = (0..n).map(|_| rng.uniform_in(-0.9, 0.9)).collect();
        let target = rng.uniform_in(-10.0, 30.0);
        let mixed = mix_at_snr(&clean, &noise, target).map_err(|e| e.to_string())?;
        let p_clean = clean.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let p_resid = mixed
            .iter()
            .zip(&clean)
            .map(|(m, c)| (m - c) * (m - c))
            .sum::<f64>()
            / n as f64;
        let achieved = 10.0 * (p_clean / p_resid).log10();
        worst = worst.max((achieved - target).abs());
    }
    if worst >= 1e-9 {
        return Err(format!("worst SNR error {:.3e} dB >= 1e-9", worst));
    }

    // upsample_linear exact on affine signals within 1e-12.
    let (a, b) = (0.73, -2.1);
    let rows: Vec<Vec<f64>> = (0..9).map(|t| vec![a * t as f64 + b, -a * t as f64]).collect();
    let x = FeatureSequence {
        data: Matrix::from_rows(&rows).unwrap(),
        fps: 25.0,
    };
    let y = avfusion_core::datapipe::upsample_linear(&x, 100.0).map_err(|e| e.to_string())?;
    for k in 0..y.frames() {
        let pos = k as f64 / 4.0;
        if (y.data.get(k, 0) - (a * pos + b)).abs() >= 1e-12
            || (y.data.get(k, 1) + a * pos).abs() >= 1e-12
        {
            return Err(format!("affine upsample off at frame {}", k));
        }
    }
    Ok(format!("100 fps exact; worst SNR error {:.1e} dB; affine exact", worst))
}

// ---------------------------------------------------------------- criterion 4

fn rank_structured_clusters(rng: &mut RngState, n: usize, dim: usize, k: usize) -> Matrix {
    let dirs: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| rng.gaussian()).collect())
        .collect();
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let d = &dirs[i % k];
        let sign = if (i / k) % 2 == 0 { 1.0 } else { -1.0 };
        let coef = sign * (1.0 + 0.3 * rng.gaussian());
        rows.push(d.iter().map(|&v| coef * v + 0.1 * rng.gaussian()).collect());
    }
    Matrix::from_rows(&rows).unwrap()
}

fn criterion_4_rbm() -> Result<String, String> {
    let start = Instant::now();
    let run = || -> Result<Vec<f64>, Error> {
        let mut rng = RngState::new(4242);
        let raw = rank_structured_clusters(&mut rng, 500, 64, 2);
        let (data, _, _) = znormalize(&raw)?;
        // Defaults are exactly 20 epochs, batch 100, L2 0.0002, learning
        // rate 0.001, CD-1.
        let cfg = CdConfig::default();
        assert_eq!(
            (cfg.epochs, cfg.batch_size, cfg.cd_steps),
            (20, 100, 1)
        );
        assert_eq!((cfg.l2, cfg.learning_rate), (0.0002, 0.001));
        let out = pretrain_stack(&[16], &data, &cfg, &mut rng)?;
        Ok(out.epoch_errors[0].clone())
    };
    let errs = run().map_err(|e| e.to_string())?;
    let errs2 = run().map_err(|e| e.to_string())?;
    if errs != errs2 {
        return Err("pretraining is not deterministic under a fixed seed".into());
    }
    let (first, last) = (errs[0], errs[19]);
    let elapsed = start.elapsed();
    if last > 0.8 * first {
        return Err(format!(
            "reduction only {:.1}% (epoch1 {:.4} -> epoch20 {:.4})",
            100.0 * (1.0 - last / first),
            first,
            last
        ));
    }
    if elapsed.as_secs() >= 60 {
        return Err(format!("RBM run took {:?} (budget 1 min)", elapsed));
    }
    Ok(format!(
        "error {:.4} -> {:.4} ({:.0}% reduction), deterministic, {:.2}s",
        first,
        last,
        100.0 * (1.0 - last / first),
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5_metrics() -> Result<String, String> {
    // Brute-force oracle from raw pairs.
    let oracle = |classes: usize, pairs: &[(usize, usize)]| -> Metrics {
        let total = pairs.len() as f64;
        let correct = pairs.iter().filter(|&&(t, p)| t == p).count() as f64;
        let mut recall_sum = 0.0;
        let mut f1_sum = 0.0;
        for c in 0..classes {
            let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
            let true_c = pairs.iter().filter(|&&(t, _)| t == c).count() as f64;
            let pred_c = pairs.iter().filter(|&&(_, p)| p == c).count() as f64;
            let recall = if true_c > 0.0 { tp / true_c } else { 0.0 };
            let precision = if pred_c > 0.0 { tp / pred_c } else { 0.0 };
            f1_sum += if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            recall_sum += recall;
        }
        Metrics {
            cr: correct / total,
            uar: recall_sum / classes as f64,
            mean_f1: f1_sum / classes as f64,
        }
    };

    let mut rng = RngState::new(51);
    for case in 0..1000 {
        let classes = 2 + rng.index(6);
        let n = 1 + rng.index(60);
        let pairs: Vec<(usize, usize)> = (0..n)
            .map(|_| (rng.index(classes), rng.index(classes)))
            .collect();
        let got = metrics(&ConfusionMatrix::from_pairs(classes, &pairs)).map_err(|e| e.to_string())?;
        let want = oracle(classes, &pairs);
        if got.cr != want.cr || got.uar != want.uar || got.mean_f1 != want.mean_f1 {
            return Err(format!("oracle mismatch at case {}", case));
        }
    }

    // Hand-worked case.
    let mut cm = ConfusionMatrix::new(2);
    for _ in 0..8 {
        cm.record(0, 0);
    }
    for _ in 0..2 {
        cm.record(0, 1);
    }
    for _ in 0..5 {
        cm.record(1, 0);
    }
    for _ in 0..5 {
        cm.record(1, 1);
    }
    let m = metrics(&cm).unwrap();
    if (m.cr - 0.65).abs() > 1e-12 || (m.uar - 0.65).abs() > 1e-12 {
        return Err(format!("hand case CR/UAR: {} / {}", m.cr, m.uar));
    }
    if (m.mean_f1 - 0.6420).abs() > 1e-4 {
        return Err(format!("hand case mean F1 {} not within 0.6420 +- 1e-4", m.mean_f1));
    }
    Ok(format!(
        "1000 oracle cases exact; hand case CR {:.2} UAR {:.2} F1 {:.4}",
        m.cr, m.uar, m.mean_f1
    ))
}

// ------------------------------------------------------------ criteria 6 & 7

struct PipelineOutcome {
    fused_clean_cr: f64,
    fused_0db_cr: f64,
    audio_clean_cr: f64,
    audio_0db_cr: f64,
    /// Audio CR over [clean, 20, 15, 10, 5, 0] dB.
    audio_curve: Vec<f64>,
    elapsed_s: f64,
}

fn run_desk_pipeline(tag: &str, seed: u64) -> Result<PipelineOutcome, String> {
    let dir = temp_dir(tag);
    let mut cfg = RunConfig::desk(dir.clone());
    cfg.seed = seed;
    let start = Instant::now();
    run_synth(&cfg, true).map_err(|e| e.to_string())?;
    run_pretrain(&cfg).map_err(|e| e.to_string())?;
    run_train_stream(&cfg, Modality::Audio, false).map_err(|e| e.to_string())?;
    run_train_stream(&cfg, Modality::Video, false).map_err(|e| e.to_string())?;
    run_train_fusion(&cfg).map_err(|e| e.to_string())?;
    let rows = run_eval(&cfg, &StreamSelection::default(), None).map_err(|e| e.to_string())?;
    let elapsed_s = start.elapsed().as_secs_f64();
    let find = |stream: StreamKind, snr: Option<f64>| -> Result<f64, String> {
        rows.iter()
            .find(|r| r.stream == stream && r.snr_db == snr)
            .map(|r| r.report.mean.cr)
            .ok_or_else(|| format!("missing row {:?}/{:?}", stream, snr))
    };
    let mut audio_curve = vec![find(StreamKind::Audio, None)?];
    for level in [20.0, 15.0, 10.0, 5.0, 0.0] {
        audio_curve.push(find(StreamKind::Audio, Some(level))?);
    }
    let outcome = PipelineOutcome {
        fused_clean_cr: find(StreamKind::Fusion, None)?,
        fused_0db_cr: find(StreamKind::Fusion, Some(0.0))?,
        audio_clean_cr: find(StreamKind::Audio, None)?,
        audio_0db_cr: find(StreamKind::Audio, Some(0.0))?,
        audio_curve,
        elapsed_s,
    };
    std::fs::remove_dir_all(&dir).ok();
    Ok(outcome)
}

fn criteria_6_and_7() -> (Result<String, String>, Result<String, String>) {
    let seeds = [42u64, 7, 1234];
    let mut outcomes = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        match run_desk_pipeline(&format!("desk-{}", i), seed) {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                let msg = format!("pipeline seed {} failed: {}", seed, e);
                return (Err(msg.clone()), Err(msg));
            }
        }
    }

    // Criterion 6 judged on the first (preset) seed.
    let first = &outcomes[0];
    let c6 = if first.elapsed_s >= 600.0 {
        Err(format!("desk run took {:.0}s (budget 600s)", first.elapsed_s))
    } else if first.fused_clean_cr < 0.90 {
        Err(format!("fused clean CR {:.3} < 0.90", first.fused_clean_cr))
    } else {
        Ok(format!(
            "desk run {:.0}s, fused clean CR {:.3}",
            first.elapsed_s, first.fused_clean_cr
        ))
    };

    // Criterion 7 averaged over the three seeds.
    let n = outcomes.len() as f64;
    let mean = |f: &dyn Fn(&PipelineOutcome) -> f64| outcomes.iter().map(|o| f(o)).sum::<f64>() / n;
    let fused_0 = mean(&|o| o.fused_0db_cr);
    let audio_0 = mean(&|o| o.audio_0db_cr);
    let audio_clean = mean(&|o| o.audio_clean_cr);
    let margin = fused_0 - audio_0;
    let drop = audio_clean - audio_0;
    // Audio degradation should be essentially monotone as SNR drops
    // (one inversion of at most 2 points tolerated), checked on the
    // preset seed's curve [clean, 20, 15, 10, 5, 0].
    let curve = &outcomes[0].audio_curve;
    let mut inversions = 0usize;
    let mut worst_inversion = 0.0f64;
    for pair in curve.windows(2) {
        if pair[1] > pair[0] {
            inversions += 1;
            worst_inversion = worst_inversion.max(pair[1] - pair[0]);
        }
    }
    let monotone_ok = inversions == 0 || (inversions == 1 && worst_inversion <= 0.02);
    let c7 = if margin < 0.10 {
        Err(format!(
            "fused-over-audio margin at 0 dB only {:.1} points",
            100.0 * margin
        ))
    } else if drop < 0.15 {
        Err(format!("audio clean-to-0dB drop only {:.1} points", 100.0 * drop))
    } else if !monotone_ok {
        Err(format!(
            "audio degradation not monotone: {} inversions, worst {:.1} pts (curve {:?})",
            inversions,
            100.0 * worst_inversion,
            curve
        ))
    } else {
        Ok(format!(
            "0 dB: fused {:.3} vs audio {:.3} (+{:.0} pts); audio drop {:.0} pts; degradation monotone",
            fused_0,
            audio_0,
            100.0 * margin,
            100.0 * drop
        ))
    };
    (c6, c7)
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8_protocol() -> Result<String, String> {
    // Early stopping halts exactly at best_epoch + delay under a scripted
    // worsening-loss harness.
    let mut stop = EarlyStopState::new(5);
    let losses = [0.9, 0.7, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0];
    let mut halted_at = None;
    for (i, &loss) in losses.iter().enumerate() {
        let epoch = i + 1;
        stop.observe(epoch, loss);
        if stop.should_stop() {
            halted_at = Some(epoch);
            break;
        }
    }
    if stop.best_epoch != 3 || halted_at != Some(8) {
        return Err(format!(
            "early stop: best {} halt {:?} (want 3 and Some(8))",
            stop.best_epoch, halted_at
        ));
    }

    // Clipping rescales only LSTM blocks and preserves direction.
    let mut grads = vec![
        GradBlock {
            name: "stream.encoder.0.w".into(),
            kind: BlockKind::Dense,
            values: vec![50.0, -30.0],
        },
        GradBlock {
            name: "stream.blstm.fwd.wi".into(),
            kind: BlockKind::Lstm,
            values: vec![3.0, 3.0, 3.0, 3.0],
        },
        GradBlock {
            name: "stream.blstm.fwd.ui".into(),
            kind: BlockKind::Lstm,
            values: vec![0.1, -0.1],
        },
    ];
    clip_lstm_gradients(&mut grads, 3.0);
    if grads[0].values != vec![50.0, -30.0] {
        return Err("dense block was clipped".into());
    }
    if grads[2].values != vec![0.1, -0.1] {
        return Err("below-threshold LSTM block changed".into());
    }
    let clipped = &grads[1].values;
    let norm = clipped.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 3.0).abs() > 1e-12 {
        return Err(format!("clipped norm {} != 3", norm));
    }
    if clipped.iter().any(|&v| (v - 1.5).abs() > 1e-12) {
        return Err("direction not preserved".into());
    }

    // Fusion training refuses to start without both stream checkpoints.
    let dir = temp_dir("protocol");
    let mut cfg = RunConfig::desk(dir.clone());
    cfg.synth.subjects = 3;
    cfg.synth.utterances_per_subject = 1;
    cfg.synth.train_subjects = 1;
    cfg.synth.val_subjects = 1;
    cfg.synth.test_subjects = 1;
    run_synth(&cfg, true).map_err(|e| e.to_string())?;
    match run_train_fusion(&cfg) {
        Err(Error::Dependency { missing }) if missing.contains("audio") => {}
        other => {
            return Err(format!(
                "expected a dependency error naming the audio stream phase, got {:?}",
                other.map(|_| ())
            ))
        }
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok("early stop at best+5; clipping scoped to LSTM; fusion refuses without streams".into())
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9_determinism() -> Result<String, String> {
    // Full pipeline (all phases and artifacts) at reduced size, twice.
    let run = |tag: &str| -> Result<std::path::PathBuf, String> {
        let dir = temp_dir(tag);
        let mut cfg = RunConfig::desk(dir.clone());
        cfg.synth.utterances_per_subject = 3;
        cfg.train.max_epochs = 4;
        cfg.pretrain.epochs = 3;
        cfg.pretrain_frame_cap = 1500;
        cfg.runs = 2;
        cfg.snr_levels = vec![10.0, 0.0];
        run_synth(&cfg, true).map_err(|e| e.to_string())?;
        run_pretrain(&cfg).map_err(|e| e.to_string())?;
        run_train_stream(&cfg, Modality::Audio, false).map_err(|e| e.to_string())?;
        run_train_stream(&cfg, Modality::Video, false).map_err(|e| e.to_string())?;
        run_train_fusion(&cfg).map_err(|e| e.to_string())?;
        run_eval(&cfg, &StreamSelection::default(), None).map_err(|e| e.to_string())?;
        Ok(dir)
    };
    let a = run("det-a")?;
    let b = run("det-b")?;
    let artifacts = [
        "pretrain-audio.ckpt",
        "pretrain-video.ckpt",
        "stream-audio.ckpt",
        "stream-video.ckpt",
        "fusion.ckpt",
        "train-audio.csv",
        "train-video.csv",
        "train-fusion.csv",
        "report.csv",
    ];
    for name in artifacts {
        let fa = std::fs::read(a.join(name)).map_err(|e| format!("{}: {}", name, e))?;
        let fb = std::fs::read(b.join(name)).map_err(|e| format!("{}: {}", name, e))?;
        if fa != fb {
            return Err(format!("{} differs between identical-seed runs", name));
        }
        // Checkpoints must also load cleanly.
        if name.ends_with(".ckpt") {
            Checkpoint::from_bytes(&fa).map_err(|e| format!("{}: {}", name, e))?;
        }
    }
    std::fs::remove_dir_all(&a).ok();
    std::fs::remove_dir_all(&b).ok();
    Ok(format!("{} artifacts byte-identical across runs", artifacts.len()))
}

// ------------------------------------------------------------------- driver

#[test]
fn acceptance() {
    let mut results: Vec<(&str, Result<String, String>)> = Vec::new();

    results.push(("1 gradient correctness", criterion_1_gradients()));
    results.push(("2 delta operator", criterion_2_delta()));
    results.push(("3 signal processing exactness", criterion_3_signal()));
    results.push(("4 RBM pretraining", criterion_4_rbm()));
    results.push(("5 metric oracle equivalence", criterion_5_metrics()));
    let (c6, c7) = criteria_6_and_7();
    results.push(("6 end-to-end desk run", c6));
    results.push(("7 noise-trend reproduction", c7));
    results.push(("8 training-protocol conformance", criterion_8_protocol()));
    results.push(("9 determinism", criterion_9_determinism()));

    let mut failures = Vec::new();
    for (name, result) in &results {
        match result {
            Ok(detail) => println!("[PASS] criterion {} — {}", name, detail),
            Err(detail) => {
                println!("[FAIL] criterion {} — {}", name, detail);
                failures.push(format!("{}: {}", name, detail));
            }
        }
    }
    assert!(
        failures.is_empty(),
        "acceptance criteria failed:\n{}",
        failures.join("\n")
    );
}
