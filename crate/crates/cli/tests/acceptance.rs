//! Release acceptance checks. Runs without the libtest harness so that one
//! PASS/FAIL line per criterion is always printed; exits nonzero on any FAIL.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::ttest_reference::TTEST_REFERENCE;
use massl_cli::config::parse_config_str;
use massl_cli::experiment;
use massl_core::analysis::{
    compare_strategies, pool_labels, probe_r2, t_test_two_sided, FeatureMap, ProbeOptions, StrategyRuns,
};
use massl_core::data::{
    decode_dataset, encode_dataset, generate_synthetic, make_splits, DataError, Sample, SplitSizes,
};
use massl_core::losses::{
    attention_recon_loss, dice_loss, joint_loss, split_reconstruction, AttentionMasks, LossReport,
};
use massl_core::model::{decode_checkpoint, encode_checkpoint, CheckpointError, MasslModel, NetworkConfig};
use massl_core::training::{
    evaluate_dice, run_strategy, train_alternating, train_joint, NoObserver, StepKind, StepObserver, Strategy,
    TrainConfig, TrainData,
};
use massl_core::{Graph64, Model32, Model64, ParamGroup};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    for name in common::ALL_LAYERS {
        for seed in 0..common::INSTANCES as u64 {
            let err = common::layer_case(name, seed);
            if !(err <= worst.0) {
                worst = (err, format!("{name}#{seed}"));
            }
        }
    }
    for name in common::ALL_LOSSES {
        for seed in 0..common::INSTANCES as u64 {
            let err = common::loss_case(name, seed);
            if !(err <= worst.0) {
                worst = (err, format!("{name}#{seed}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst.0 < 1e-5 && secs < 60.0,
        format!(
            "{} layers + {} losses x {} instances, max rel err {:.2e} at {} (< 1e-5), {secs:.1} s (< 60 s)",
            common::ALL_LAYERS.len(),
            common::ALL_LOSSES.len(),
            common::INSTANCES,
            worst.0,
            worst.1
        ),
    )
}

fn stop_gradient_theorem() -> Outcome {
    let mut r = common::rng(2024);
    let mut nonzero = 0usize;
    let mut encoder_moved = 0usize;
    for trial in 0..10u64 {
        let side = [8, 16][trial as usize % 2];
        let net = NetworkConfig {
            levels: r.random_range(2..=3),
            base_channels: r.random_range(2..=4),
            height: side,
            width: side,
            recon_channels: 2,
            ..NetworkConfig::default()
        };
        let model = Model64::new(net.clone(), 100 + trial).map_err(|e| e.to_string())?;
        let batch = r.random_range(1..=2);
        let mut g = Graph64::new();
        let p = model.bind(&mut g, |_| true);
        let x = g
            .constant(
                &net.input_shape(batch),
                common::uniform(&mut r, batch * side * side, 0.0, 1.0),
            )
            .map_err(|e| e.to_string())?;
        let out = model.forward(&mut g, &p, x).map_err(|e| e.to_string())?;
        let masks = AttentionMasks::from_prediction(&mut g, out.segmentation);
        let (bg, fg) = split_reconstruction(&mut g, out.reconstruction).map_err(|e| e.to_string())?;
        let (l2, _) = attention_recon_loss(&mut g, x, bg, fg, masks).map_err(|e| e.to_string())?;
        g.backward(l2).map_err(|e| e.to_string())?;
        for (param, grad) in model.params().iter().zip(p.gradients(&g)) {
            let grad = grad.unwrap_or_default();
            match param.group() {
                ParamGroup::SegDecoder => nonzero += grad.iter().filter(|v| v.to_bits() != 0).count(),
                ParamGroup::Encoder => encoder_moved += grad.iter().any(|&v| v != 0.0) as usize,
                ParamGroup::ReconDecoder => {}
            }
        }
    }
    check(
        nonzero == 0 && encoder_moved > 0,
        format!(
            "10 random models: {nonzero} non-zero segmentation-decoder gradient entries; encoder receives gradient"
        ),
    )
}

#[derive(Default)]
struct GroupWatch {
    before: Vec<Vec<f32>>,
    steps: Vec<(StepKind, [bool; 3])>,
}

impl StepObserver<f32> for GroupWatch {
    fn before_step(&mut self, _kind: StepKind, model: &Model32) {
        self.before = ParamGroup::ALL.iter().map(|&g| model.group_values(g)).collect();
    }

    fn after_step(&mut self, kind: StepKind, model: &Model32, _report: &LossReport) {
        let mut changed = [false; 3];
        for (i, &g) in ParamGroup::ALL.iter().enumerate() {
            changed[i] = model.group_values(g) != self.before[i];
        }
        self.steps.push((kind, changed));
    }
}

fn group_isolation() -> Outcome {
    let net = NetworkConfig {
        levels: 2,
        base_channels: 4,
        height: 16,
        width: 16,
        ..NetworkConfig::default()
    };
    let all = generate_synthetic(10, 16, 16, 5);
    let labeled = all[..4].to_vec();
    let unlabeled: Vec<Sample> = all[4..].iter().map(Sample::without_mask).collect();
    let data = TrainData {
        labeled: &labeled,
        unlabeled: &unlabeled,
        validation: None,
    };
    // [seg step leaves recon, recon step leaves seg, gamma=1 leaves recon, gamma=0 leaves seg]
    let mut holds = [true; 4];
    let mut steps = [0usize; 4];
    for strategy in [Strategy::MasslAlter, Strategy::MsslAlter] {
        let mut model = MasslModel::new(strategy.network(&net), 3).map_err(|e| e.to_string())?;
        let mut watch = GroupWatch::default();
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::new(strategy)
        };
        train_alternating(&mut model, data, &cfg, &mut watch).map_err(|e| e.to_string())?;
        for (kind, [enc, seg, rec]) in watch.steps {
            let i = match kind {
                StepKind::Segmentation => 0,
                StepKind::Reconstruction => 1,
                StepKind::Joint => return Err("joint step inside alternating trainer".into()),
            };
            let moved_own = enc && if i == 0 { seg } else { rec };
            let frozen = if i == 0 { !rec } else { !seg };
            holds[i] &= moved_own && frozen;
            steps[i] += 1;
        }
    }
    for (i, gamma) in [(2, 1.0), (3, 0.0)] {
        for strategy in [Strategy::MasslJoint, Strategy::MsslJoint] {
            let mut model = MasslModel::new(strategy.network(&net), 4).map_err(|e| e.to_string())?;
            let mut watch = GroupWatch::default();
            let cfg = TrainConfig {
                epochs: 2,
                gamma: Some(gamma),
                ..TrainConfig::new(strategy)
            };
            train_joint(&mut model, data, &cfg, &mut watch).map_err(|e| e.to_string())?;
            for (_, [enc, seg, rec]) in watch.steps {
                holds[i] &= enc && if i == 2 { seg && !rec } else { rec && !seg };
                steps[i] += 1;
            }
        }
    }
    check(
        holds.iter().all(|&h| h) && steps.iter().all(|&s| s > 0),
        format!(
            "seg-step/recon-frozen {} ({} steps), recon-step/seg-frozen {} ({}), gamma=1/recon-frozen {} ({}), gamma=0/seg-frozen {} ({})",
            holds[0], steps[0], holds[1], steps[1], holds[2], steps[2], holds[3], steps[3]
        ),
    )
}

fn dice_oracle(p: &[f64], t: &[f64]) -> f64 {
    let mut inter = 0.0;
    let mut sp = 0.0;
    let mut st = 0.0;
    for i in 0..p.len() {
        inter += p[i] * t[i];
        sp += p[i];
        st += t[i];
    }
    1.0 - (2.0 * inter + 1.0) / (sp + st + 1.0)
}

fn attention_oracle(x: &[f64], pred: &[f64], bg: &[f64], fg: &[f64], batch: usize) -> f64 {
    let n = x.len() / batch;
    let mut total = 0.0;
    for b in 0..batch {
        let (mut wf, mut wb, mut ef, mut eb) = (0.0, 0.0, 0.0, 0.0);
        for v in b * n..(b + 1) * n {
            let mf = pred[v];
            let mb = 1.0 - mf;
            wf += mf;
            wb += mb;
            ef += (fg[v] - x[v] * mf) * (fg[v] - x[v] * mf);
            eb += (bg[v] - x[v] * mb) * (bg[v] - x[v] * mb);
        }
        let nf = n as f64;
        total += (wb / nf) * (eb / nf) + (wf / nf) * (ef / nf);
    }
    total / batch as f64
}

fn loss_oracles() -> Outcome {
    let mut r = common::rng(77);
    let mut dice_err = 0.0f64;
    let mut attn_err = 0.0f64;
    let mut endpoints_exact = true;
    for _ in 0..50 {
        let (batch, h, w) = [(1, 4, 4), (2, 2, 4), (2, 2, 2), (1, 3, 5)][r.random_range(0..4)];
        let n = batch * h * w;
        let shape = [batch, 1, h, w];
        let pred = common::uniform(&mut r, n, 0.01, 0.99);
        let target: Vec<f64> = (0..n).map(|_| r.random_bool(0.4) as u8 as f64).collect();
        let x = common::uniform(&mut r, n, 0.0, 1.0);
        let bg = common::uniform(&mut r, n, -0.5, 1.0);
        let fg = common::uniform(&mut r, n, -0.5, 1.0);

        let mut g = Graph64::new();
        let leaf = |g: &mut Graph64, v: &Vec<f64>| g.variable(&shape, v.clone()).map_err(|e| e.to_string());
        let p = leaf(&mut g, &pred)?;
        let t = g.constant(&shape, target.clone()).map_err(|e| e.to_string())?;
        let xi = g.constant(&shape, x.clone()).map_err(|e| e.to_string())?;
        let rb = leaf(&mut g, &bg)?;
        let rf = leaf(&mut g, &fg)?;
        let l1 = dice_loss(&mut g, p, t).map_err(|e| e.to_string())?;
        let masks = AttentionMasks::from_prediction(&mut g, p);
        let (l2, _) = attention_recon_loss(&mut g, xi, rb, rf, masks).map_err(|e| e.to_string())?;
        dice_err = dice_err.max((g.item(l1) - dice_oracle(&pred, &target)).abs());
        attn_err = attn_err.max((g.item(l2) - attention_oracle(&x, &pred, &bg, &fg, batch)).abs());

        // Endpoints: value and every leaf gradient equal the selected term alone.
        let single = |term: usize| -> Result<(f64, Vec<Vec<f64>>), String> {
            let mut g = Graph64::new();
            let p = g.variable(&shape, pred.clone()).map_err(|e| e.to_string())?;
            let t = g.constant(&shape, target.clone()).map_err(|e| e.to_string())?;
            let xi = g.constant(&shape, x.clone()).map_err(|e| e.to_string())?;
            let rb = g.variable(&shape, bg.clone()).map_err(|e| e.to_string())?;
            let rf = g.variable(&shape, fg.clone()).map_err(|e| e.to_string())?;
            let l1 = dice_loss(&mut g, p, t).map_err(|e| e.to_string())?;
            let masks = AttentionMasks::from_prediction(&mut g, p);
            let (l2, _) = attention_recon_loss(&mut g, xi, rb, rf, masks).map_err(|e| e.to_string())?;
            let loss = match term {
                1 => l1,
                2 => l2,
                _ => joint_loss(&mut g, l1, l2, if term == 3 { 1.0 } else { 0.0 }).map_err(|e| e.to_string())?,
            };
            g.backward(loss).map_err(|e| e.to_string())?;
            let grads = [p, rb, rf]
                .iter()
                .map(|&id| g.grad(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]))
                .collect();
            Ok((g.item(loss), grads))
        };
        let (v1, g1) = single(1)?;
        let (v2, g2) = single(2)?;
        let (vj1, gj1) = single(3)?;
        let (vj0, gj0) = single(4)?;
        endpoints_exact &= v1.to_bits() == vj1.to_bits() && v2.to_bits() == vj0.to_bits();
        endpoints_exact &= g1 == gj1 && g2 == gj0;
    }
    check(
        dice_err < 1e-12 && attn_err < 1e-12 && endpoints_exact,
        format!(
            "50 instances <= 16 voxels: Dice |err| {dice_err:.1e}, attention recon |err| {attn_err:.1e} (< 1e-12); gamma endpoints exact: {endpoints_exact}"
        ),
    )
}

fn probe_oracle() -> Outcome {
    let mut oracle_err = 0.0f64;
    let mut mixing_err = 0.0f64;
    let (c, side) = (6, 12);
    let plane = side * side;
    for seed in 0..10 {
        let mut r = common::rng(500 + seed);
        let mask: Vec<u8> = (0..plane).map(|_| r.random_bool(0.35) as u8).collect();
        let values = common::uniform(&mut r, c * plane, -1.0, 1.0);
        let fm = |values: Vec<f64>| FeatureMap {
            batch: 1,
            channels: c,
            height: side,
            width: side,
            values,
        };
        let opts = ProbeOptions::default();
        let r2 = probe_r2(&[fm(values.clone())], std::slice::from_ref(&mask), side, side, &opts)
            .map_err(|e| e.to_string())?
            .levels[0]
            .r2
            .ok_or("probe returned no R2")?;
        let y: Vec<f64> = mask.iter().map(|&m| m as f64).collect();
        let x: Vec<f64> = (0..plane)
            .flat_map(|v| {
                let values = &values;
                (0..c).map(move |ch| values[ch * plane + v])
            })
            .collect();
        oracle_err = oracle_err.max((r2 - common::oracle_r2(&x, &y, c)).abs());

        // Diagonally dominant, hence invertible.
        let mix: Vec<f64> = (0..c * c)
            .map(|i| {
                if i / c == i % c {
                    3.0 + r.random::<f64>()
                } else {
                    r.random_range(-0.4..0.4)
                }
            })
            .collect();
        let mixed: Vec<f64> = (0..c)
            .flat_map(|o| {
                let (mix, values) = (&mix, &values);
                (0..plane).map(move |v| (0..c).map(|i| mix[o * c + i] * values[i * plane + v]).sum::<f64>())
            })
            .collect();
        let r2_mixed = probe_r2(&[fm(mixed)], &[mask], side, side, &opts)
            .map_err(|e| e.to_string())?
            .levels[0]
            .r2
            .ok_or("probe returned no R2")?;
        mixing_err = mixing_err.max((r2 - r2_mixed).abs());
    }

    let mut pooled_exact = true;
    let mut r = common::rng(9);
    for factor in [1, 2, 4, 8] {
        let mask: Vec<u8> = (0..256).map(|_| r.random_bool(0.5) as u8).collect();
        let pooled = pool_labels(&mask, 16, 16, factor).map_err(|e| e.to_string())?;
        let side = 16 / factor;
        for by in 0..side {
            for bx in 0..side {
                let mut sum = 0u32;
                for y in by * factor..(by + 1) * factor {
                    for x in bx * factor..(bx + 1) * factor {
                        sum += mask[y * 16 + x] as u32;
                    }
                }
                pooled_exact &= pooled[by * side + bx] == sum as f64 / (factor * factor) as f64;
            }
        }
    }
    check(
        oracle_err < 1e-6 && mixing_err < 1e-6 && pooled_exact,
        format!(
            "10 instances: |dR2| vs oracle {oracle_err:.1e}, under channel mixing {mixing_err:.1e} (< 1e-6); pooled labels exact block means: {pooled_exact}"
        ),
    )
}

fn end_to_end_trend() -> Outcome {
    let start = Instant::now();
    let samples = generate_synthetic(120, 64, 64, 7);
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let by_id: BTreeMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let sizes = SplitSizes {
        labeled: 2,
        unlabeled: 40,
        validation: 0,
        test: 40,
    };
    let plans = make_splits(&ids, 5, sizes, 11, false).map_err(|e| e.to_string())?;
    let strategies = [Strategy::Cnn, Strategy::MsslAlter, Strategy::MasslAlter];
    let mut scores: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for plan in &plans {
        let pick = |ids: &[String], keep_mask: bool| -> Vec<Sample> {
            ids.iter()
                .map(|id| {
                    if keep_mask {
                        by_id[id.as_str()].clone()
                    } else {
                        by_id[id.as_str()].without_mask()
                    }
                })
                .collect()
        };
        let labeled = pick(&plan.labeled, true);
        let unlabeled = pick(&plan.unlabeled, false);
        let test = pick(&plan.test, true);
        for strategy in strategies {
            let cfg = TrainConfig {
                epochs: 60,
                seed: plan.fold as u64,
                ..TrainConfig::new(strategy)
            };
            let data = TrainData {
                labeled: &labeled,
                unlabeled: &unlabeled,
                validation: None,
            };
            let out = run_strategy::<f32>(&NetworkConfig::default(), &cfg, data, &mut NoObserver)
                .map_err(|e| format!("{strategy} fold {}: {e}", plan.fold))?;
            let dice = evaluate_dice(&out.model, &test, 8).map_err(|e| e.to_string())?;
            scores.entry(strategy.as_str()).or_default().push(dice);
        }
    }
    let mean = |s: Strategy| scores[s.as_str()].iter().sum::<f64>() / scores[s.as_str()].len() as f64;
    let (cnn, mssl, massl) = (
        mean(Strategy::Cnn),
        mean(Strategy::MsslAlter),
        mean(Strategy::MasslAlter),
    );
    let secs = start.elapsed().as_secs_f64();
    check(
        cnn >= 0.70 && massl >= cnn - 0.01 && massl >= mssl - 0.02 && secs <= 1800.0,
        format!(
            "5 seeds, 60 epochs: cnn {cnn:.4} (>= 0.70), massl_alter {massl:.4} (>= cnn - 0.01 = {:.4}, >= mssl_alter - 0.02 = {:.4}), mssl_alter {mssl:.4}; {secs:.0} s",
            cnn - 0.01,
            mssl - 0.02
        ),
    )
}

fn collect_files(root: &Path, rel: &Path, out: &mut BTreeMap<String, Vec<u8>>) -> std::io::Result<()> {
    for entry in fs::read_dir(root.join(rel))? {
        let entry = entry?;
        let rel = rel.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            collect_files(root, &rel, out)?;
        } else if rel.file_name().is_some_and(|n| n != "config.echo") {
            out.insert(rel.display().to_string(), fs::read(root.join(&rel))?);
        }
    }
    Ok(())
}

fn sweep_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data.bin");
    let run = |root: &str, threads: usize| -> Result<BTreeMap<String, Vec<u8>>, String> {
        let text = format!(
            "name = \"repro\"\noutput_root = {:?}\ndata_path = {:?}\nthreads = {threads}\n\
             height = 16\nwidth = 16\nlevels = 2\nbase_channels = 4\nsynth_count = 20\n\
             labeled = 2\nunlabeled = 6\nvalidation = 2\ntest = 4\nfolds = 2\nepochs = 2\npretrain_epochs = 1\n",
            dir.path().join(root).display().to_string(),
            data.display().to_string(),
        );
        let cfg = parse_config_str(&text).map_err(|e| e.to_string())?;
        experiment::synth(&cfg).map_err(|e| e.to_string())?;
        experiment::sweep(&cfg).map_err(|e| e.to_string())?;
        let run_dir = cfg.run_dir();
        let mut files = BTreeMap::new();
        collect_files(&run_dir, Path::new(""), &mut files).map_err(|e| e.to_string())?;
        Ok(files)
    };
    let a = run("a", 1)?;
    let b = run("b", 2)?;
    let metrics = a.keys().filter(|k| k.ends_with("metrics.csv")).count();
    let checkpoints = a.keys().filter(|k| k.ends_with("checkpoint.bin")).count();
    check(
        a == b && metrics == 14 && checkpoints == 14,
        format!(
            "{} files compared ({metrics} metrics, {checkpoints} checkpoints, tables); identical: {}",
            a.len(),
            a == b
        ),
    )
}

fn statistics() -> Outcome {
    let mut p_err = 0.0f64;
    let mut t_err = 0.0f64;
    for (a, b, t, p) in TTEST_REFERENCE {
        let r = t_test_two_sided(a, b).map_err(|e| e.to_string())?;
        p_err = p_err.max((r.p - p).abs());
        t_err = t_err.max((r.t - t).abs() / t.abs().max(1.0));
    }
    let runs = vec![
        StrategyRuns {
            strategy: "a".into(),
            scores: vec![0.50, 0.55, 0.60, 0.65],
        },
        StrategyRuns {
            strategy: "b".into(),
            scores: vec![0.81, 0.79, 0.83, 0.77],
        },
    ];
    let report = compare_strategies(&runs).map_err(|e| e.to_string())?;
    // (0.50 + 0.55 + 0.60 + 0.65) / 4 = 2.30 / 4; (0.81 + 0.79 + 0.83 + 0.77) / 4 = 3.20 / 4
    let mean_err = (report.summaries[0].mean - 0.575)
        .abs()
        .max((report.summaries[1].mean - 0.80).abs());
    check(
        p_err < 1e-6 && t_err < 1e-6 && mean_err < 1e-9,
        format!(
            "{} reference pairs: max |dp| {p_err:.1e}, max rel |dt| {t_err:.1e} (< 1e-6); compare means |err| {mean_err:.1e} (< 1e-9)",
            TTEST_REFERENCE.len()
        ),
    )
}

fn format_robustness() -> Outcome {
    let mut samples = generate_synthetic(4, 8, 8, 3);
    samples[2] = samples[2].without_mask();
    let ds = encode_dataset(&samples).map_err(|e| e.to_string())?;
    let back = decode_dataset(&ds).map_err(|e| e.to_string())?;
    let ds_exact = back == samples && encode_dataset(&back).map_err(|e| e.to_string())? == ds;

    let net = NetworkConfig {
        levels: 2,
        base_channels: 2,
        height: 8,
        width: 8,
        recon_channels: 2,
        ..NetworkConfig::default()
    };
    let model = Model32::new(net, 1).map_err(|e| e.to_string())?;
    let ck = encode_checkpoint(&model);
    let ck_back: Model32 = decode_checkpoint(&ck).map_err(|e| e.to_string())?;
    let ck_exact = encode_checkpoint(&ck_back) == ck;

    let mut truncations_typed = true;
    let mut panics = 0usize;
    for len in 0..ds.len() {
        match catch_unwind(|| decode_dataset(&ds[..len])) {
            Ok(Err(DataError::Truncated { .. } | DataError::BadMagic | DataError::Header(_))) => {}
            Ok(_) => truncations_typed = false,
            Err(_) => panics += 1,
        }
    }
    for len in 0..ck.len() {
        match catch_unwind(|| decode_checkpoint::<f32>(&ck[..len])) {
            Ok(Err(CheckpointError::Truncated { .. } | CheckpointError::BadMagic | CheckpointError::Header(_))) => {}
            Ok(_) => truncations_typed = false,
            Err(_) => panics += 1,
        }
    }
    let mut r = common::rng(31);
    let mut corruptions = 0;
    for _ in 0..2000 {
        let mut d = ds.clone();
        let mut c = ck.clone();
        for _ in 0..r.random_range(1..4) {
            let i = r.random_range(0..d.len());
            d[i] = r.random();
            let j = r.random_range(0..c.len());
            c[j] = r.random();
        }
        panics += catch_unwind(AssertUnwindSafe(|| decode_dataset(&d))).is_err() as usize;
        panics += catch_unwind(AssertUnwindSafe(|| decode_checkpoint::<f32>(&c))).is_err() as usize;
        corruptions += 2;
    }
    check(
        ds_exact && ck_exact && truncations_typed && panics == 0,
        format!(
            "round trips byte-exact: dataset {ds_exact}, checkpoint {ck_exact}; every truncation typed: {truncations_typed}; {corruptions} random corruptions, {panics} panics"
        ),
    )
}

fn main() {
    std::panic::set_hook(Box::new(|_| {}));
    let criteria: [Criterion; 9] = [
        ("gradient suite", gradient_suite),
        ("stop-gradient theorem", stop_gradient_theorem),
        ("group isolation", group_isolation),
        ("loss oracles", loss_oracles),
        ("probe oracle", probe_oracle),
        ("end-to-end trend", end_to_end_trend),
        ("sweep reproducibility", sweep_reproducibility),
        ("statistics", statistics),
        ("format robustness", format_robustness),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("acceptance {}: {name}: PASS - {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("acceptance {}: {name}: FAIL - {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
