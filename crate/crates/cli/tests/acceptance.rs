//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and fails if any fails.

use std::f32::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uavlab::augment::{
    gaussian_noise, pitch_shift_unbounded, polarity_inversion, time_stretch, AugmentationKind, AugmentationSpec,
    InflationConfig,
};
use uavlab::autodiff::{Graph, Mode, NodeId, Tensor};
use uavlab::dsp::{
    peak_frequency, standardize, synth_dataset, Provenance, RawWaveform, StandardWaveform, SAMPLE_RATE, STANDARD_LEN,
};
use uavlab::features::{melspec_cnn, stft, FrontEnd, StftConfig, Window};
use uavlab::gradcheck::{self, random, random_away_from_zero, random_distinct, STEP};
use uavlab::models::{build_ast, build_cnn, count_params, AstConfig, CnnConfig, Model, ModelConfig};
use uavlab::peft::{inject, AdapterConfig, Method, OftConfig, Role};
use uavlab::trainkit::{
    evaluate, make_folds, prepare_sets, run_kfold, stratified_split, MetricsReport, RunLog, SplitSpec, TrainConfig,
};
use uavlab::Error;
use uavlab_cli::config::ExperimentConfig;
use uavlab_cli::io::read_json;
use uavlab_cli::run::RunMetrics;
use uavlab_cli::{cmd_synth, cmd_train};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

const BIN_HZ: f64 = SAMPLE_RATE as f64 / STANDARD_LEN as f64;
const HEAD: usize = 8_457;

fn within_seconds(start: Instant, limit: f64, what: &str) -> Result<f64, String> {
    let s = start.elapsed().as_secs_f64();
    ensure!(s < limit, "{what} took {s:.2} s, limit {limit} s");
    Ok(s)
}

fn parameter_exactness_cnn() -> Outcome {
    let start = Instant::now();
    let m = build_cnn(CnnConfig::default()).map_err(err)?;
    let n = count_params(m.params(), false);
    ensure!(n == 5_006_825, "CNN has {n} parameters");
    let s = within_seconds(start, 1.0, "CNN build and count")?;
    Ok(format!("{n} parameters in {s:.3} s"))
}

fn parameter_exactness_ast() -> Outcome {
    let start = Instant::now();
    let m = build_ast(AstConfig::default()).map_err(err)?;
    let p = m.params();
    let total = count_params(p, false);
    let s = within_seconds(start, 1.0, "AST build and count")?;
    ensure!(total == 86_195_721, "AST has {total} parameters");
    let embeddings = p.count_prefix("embeddings.");
    ensure!(embeddings == 1_131_264, "embeddings {embeddings}");
    for i in 0..12 {
        let b = p.count_prefix(&format!("encoder.layer.{i}."));
        ensure!(b == 7_087_872, "block {i} has {b}");
    }
    let norm = p.count_prefix("layernorm.");
    ensure!(norm == 1_536, "final norm {norm}");
    let head = p.count_prefix("classifier.");
    ensure!(head == HEAD, "head {head}");
    Ok(format!("{total} = {embeddings} + 12 x 7087872 + {norm} + {head}, in {s:.3} s"))
}

fn flatten_derivation() -> Outcome {
    let f = melspec_cnn(&synth_dataset(1, 1)[0]);
    ensure!(f.shape() == (128, 157), "mel shape {:?}", f.shape());
    let cfg = CnnConfig::default().with_input(f.n_mels, f.n_frames);
    let flat = cfg.derived_flatten_dim();
    ensure!(flat == 19_456, "derived flatten {flat}");
    let m = build_cnn(cfg).map_err(err)?;
    let w = m.params().get("fc1.weight").ok_or("no fc1.weight")?;
    ensure!(w.shape() == [256, 19_456], "fc1 weight {:?}", w.shape());
    let x = Tensor::<f32>::new([1, f.n_mels, f.n_frames], f.values.clone()).map_err(err)?;
    let logits = m.predict(x).map_err(err)?;
    ensure!(logits.shape() == [1, 9], "logits {:?}", logits.shape());
    Ok("128x157 -> 64x16x19 = 19456 -> Linear(19456, 256)".into())
}

fn peft_anchors() -> Outcome {
    let base = Model::<f32>::build(&ModelConfig::Ast(AstConfig::default()), 0).map_err(err)?;
    let trainable = |cfg: AdapterConfig| -> Result<usize, String> {
        let mut m = base.clone();
        let r = inject(&mut m, &cfg, 0).map_err(err)?;
        ensure!(
            r.trainable_count == m.params().count_params(true),
            "{} report disagrees with recount",
            cfg.method.name()
        );
        Ok(r.trainable_count)
    };
    let lora_formula = |roles: &[Role]| -> usize {
        12 * roles.iter().map(|r| {
            let (o, i) = r.shape(768, 3072);
            8 * (o + i)
        }).sum::<usize>() + HEAD
    };
    let mut lines = Vec::new();

    let mut ff = AdapterConfig::new(Method::Fourierft, &Role::ALL);
    ff.fourierft.n_coeffs = 3000;
    let n = trainable(ff)?;
    let dev = n as f64 / 220_000.0 - 1.0;
    ensure!(n == 224_457 && dev.abs() <= 0.10, "fourierft {n} ({:+.2}%)", 100.0 * dev);
    lines.push(format!("fourierft {n} ({:+.1}%)", 100.0 * dev));

    let mut ada = AdapterConfig::new(Method::Adalora, &Role::ALL);
    ada.adalora.init_rank = 100;
    let n = trainable(ada)?;
    let dev = n as f64 / 16_673_800.0 - 1.0;
    ensure!(dev.abs() <= 0.05, "adalora {n} ({:+.2}%)", 100.0 * dev);
    lines.push(format!("adalora {n} ({:+.1}%)", 100.0 * dev));

    let oft = AdapterConfig {
        oft: OftConfig { n_blocks: 16, packed: false },
        ..AdapterConfig::new(Method::Oft, &Role::ALL)
    };
    let n = trainable(oft)?;
    let dev = n as f64 / 9_000_000.0 - 1.0;
    ensure!(dev.abs() <= 0.25, "oft {n} ({:+.2}%)", 100.0 * dev);
    lines.push(format!("oft {n} ({:+.1}%)", 100.0 * dev));

    for roles in [&[Role::Query, Role::Value][..], &Role::ALL[..]] {
        let n = trainable(AdapterConfig::new(Method::Lora, roles))?;
        ensure!(n == lora_formula(roles), "lora {n} vs formula {}", lora_formula(roles));
        lines.push(format!("lora[{}] {n}", roles.len()));
    }
    let attn = [Role::Query, Role::Key, Role::Value, Role::AttnOutput];
    let attn_mlp = [Role::Query, Role::Key, Role::Value, Role::AttnOutput, Role::Intermediate];
    for roles in [&attn[..], &attn_mlp[..]] {
        let n = trainable(AdapterConfig::new(Method::Ia3, roles))?;
        let formula = 12 * roles.iter().map(|r| r.shape(768, 3072).0).sum::<usize>() + HEAD;
        ensure!(n == formula, "ia3 {n} vs formula {formula}");
        lines.push(format!("ia3[{}] {n}", roles.len()));
    }
    Ok(lines.join(", "))
}

fn toy_input<T: uavlab::autodiff::Element>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.gen_range(-1.0..1.0)))
}

fn identity_at_init() -> Outcome {
    let start = Instant::now();
    let base = Model::<f32>::build(&ModelConfig::Ast(AstConfig::toy()), 1).map_err(err)?;
    let x = toy_input::<f32>(&[2, 128, 128], 2);
    let reference = base.predict(x.clone()).map_err(err)?;
    let mut worst = 0.0f64;
    for method in [Method::Lora, Method::Adalora, Method::Ia3, Method::Oft, Method::Fourierft] {
        let mut cfg = AdapterConfig::new(method, &Role::ALL);
        cfg.fourierft.n_coeffs = 200;
        cfg.oft.n_blocks = 4;
        let mut m = base.clone();
        inject(&mut m, &cfg, 3).map_err(err)?;
        let diff = m.predict(x.clone()).map_err(err)?.max_abs_diff(&reference) as f64;
        ensure!(diff <= 1e-5, "{}: max |dlogits| = {diff:e}", method.name());
        worst = worst.max(diff);
    }
    let s = within_seconds(start, 10.0, "identity checks")?;
    Ok(format!("worst max |dlogits| {worst:e} over 5 methods in {s:.2} s"))
}

fn op_grads<F>(worst: &mut f64, name: &str, inputs: &[Tensor<f64>], mode: Mode, build: F) -> Result<(), String>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> uavlab::Result<NodeId>,
{
    let reports = gradcheck::check(inputs, mode, 7, STEP, build).map_err(err)?;
    let w = gradcheck::worst(&reports);
    ensure!(w <= 1e-4, "{name}: relative error {w:e}");
    *worst = worst.max(w);
    Ok(())
}

fn op_suite(worst: &mut f64) -> Result<usize, String> {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[2, 3, 4], -1.0, 1.0, &mut r);
    let b = random(&[3, 4], -1.0, 1.0, &mut r);
    let c = random(&[4], -1.0, 1.0, &mut r);
    let m3 = random(&[2, 4, 2], -1.0, 1.0, &mut r);
    let w43 = random(&[4, 3], -1.0, 1.0, &mut r);
    let w34 = random(&[3, 4], -1.0, 1.0, &mut r);
    let b3 = random(&[3], -1.0, 1.0, &mut r);
    let img = random(&[2, 2, 4, 4], -1.0, 1.0, &mut r);
    let k33 = random(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
    let k22 = random(&[3, 2, 2, 2], -1.0, 1.0, &mut r);
    let pool = random_distinct(&[1, 2, 4, 5], &mut r);
    let bn_x = random(&[3, 2, 2, 3], -1.0, 1.0, &mut r);
    let gamma2 = random(&[2], 0.5, 1.5, &mut r);
    let beta2 = random(&[2], -0.5, 0.5, &mut r);
    let rm = Tensor::new([2], vec![0.1, -0.2]).map_err(err)?;
    let rv = Tensor::new([2], vec![0.9, 1.3]).map_err(err)?;
    let wide = random(&[2, 3, 4], -2.0, 2.0, &mut r);
    let gamma4 = random(&[4], 0.5, 1.5, &mut r);
    let beta4 = random(&[4], -0.5, 0.5, &mut r);
    let relu_x = random_away_from_zero(&[3, 4], 0.05, &mut r);
    let y = random(&[2, 1, 4], -1.0, 1.0, &mut r);
    let t = random(&[1, 2, 4], -1.0, 1.0, &mut r);
    let logits = random(&[3, 4], -2.0, 2.0, &mut r);
    let q = random(&[1, 2, 3, 4], -1.0, 1.0, &mut r);
    let k = random(&[1, 2, 3, 4], -1.0, 1.0, &mut r);
    let v = random(&[1, 2, 3, 4], -1.0, 1.0, &mut r);
    let mut inv = random(&[2, 3, 3], -0.3, 0.3, &mut r);
    for bi in 0..2 {
        for i in 0..3 {
            inv.data_mut()[bi * 9 + i * 4] += 2.0;
        }
    }
    let packed = random(&[2, 6], -1.0, 1.0, &mut r);

    let e = Mode::Eval;
    let mut n = 0;
    let mut run = |name: &str,
                   inputs: &[Tensor<f64>],
                   mode: Mode,
                   f: &dyn Fn(&mut Graph<f64>, &[NodeId]) -> uavlab::Result<NodeId>|
     -> Result<(), String> {
        n += 1;
        op_grads(worst, name, inputs, mode, f)
    };
    run("add", &[a.clone(), b.clone()], e, &|g, x| g.add(x[0], x[1]))?;
    run("sub", &[a.clone(), c.clone()], e, &|g, x| g.sub(x[0], x[1]))?;
    run("mul", &[a.clone(), b.clone()], e, &|g, x| g.mul(x[0], x[1]))?;
    run("scale", std::slice::from_ref(&a), e, &|g, x| Ok(g.scale(x[0], -2.5)))?;
    run("matmul", &[a.clone(), m3], e, &|g, x| g.matmul(x[0], x[1]))?;
    run("matmul shared", &[a.clone(), w43], e, &|g, x| g.matmul(x[0], x[1]))?;
    run("linear", &[a.clone(), w34, b3.clone()], e, &|g, x| g.linear(x[0], x[1], Some(x[2])))?;
    run("conv2d", &[img.clone(), k33, b3.clone()], e, &|g, x| {
        g.conv2d(x[0], x[1], Some(x[2]), (1, 1), (1, 1))
    })?;
    run("conv2d strided", &[img, k22, b3], e, &|g, x| g.conv2d(x[0], x[1], Some(x[2]), (2, 1), (0, 0)))?;
    run("maxpool2d", &[pool], e, &|g, x| g.maxpool2d(x[0]))?;
    for mode in [Mode::Train, Mode::Eval] {
        run("batchnorm2d", &[bn_x.clone(), gamma2.clone(), beta2.clone()], mode, &|g, x| {
            Ok(g.batchnorm2d(x[0], x[1], x[2], &rm, &rv, 0.1, 1e-5)?.0)
        })?;
    }
    run("layernorm", &[wide.clone(), gamma4, beta4], e, &|g, x| g.layernorm(x[0], x[1], x[2], 1e-12))?;
    run("relu", &[relu_x], e, &|g, x| Ok(g.relu(x[0])))?;
    run("gelu", std::slice::from_ref(&wide), e, &|g, x| Ok(g.gelu(x[0])))?;
    run("softmax", &[wide], e, &|g, x| g.softmax(x[0]))?;
    run("dropout", std::slice::from_ref(&b), Mode::Train, &|g, x| g.dropout(x[0], 0.3))?;
    run("reshape", std::slice::from_ref(&a), e, &|g, x| g.reshape(x[0], &[6, 4]))?;
    run("transpose", std::slice::from_ref(&a), e, &|g, x| g.transpose(x[0], 0, 2))?;
    run("permute", std::slice::from_ref(&a), e, &|g, x| g.permute(x[0], &[1, 2, 0]))?;
    run("concat", &[y, a.clone()], e, &|g, x| g.concat(&[x[0], x[1]], 1))?;
    run("slice", std::slice::from_ref(&a), e, &|g, x| g.slice(x[0], 1, 1, 2))?;
    run("expand", &[t], e, &|g, x| g.expand(x[0], 3))?;
    run("sum", std::slice::from_ref(&a), e, &|g, x| Ok(g.sum(x[0])))?;
    run("mean", &[a], e, &|g, x| Ok(g.mean(x[0])))?;
    run("cross_entropy", &[logits], e, &|g, x| g.cross_entropy(x[0], &[0, 3, 1]))?;
    run("attention", &[q, k, v], e, &|g, x| g.scaled_dot_product_attention(x[0], x[1], x[2]))?;
    run("inverse", &[inv], e, &|g, x| g.inverse(x[0]))?;
    run("skew_from_packed", &[packed], e, &|g, x| g.skew_from_packed(x[0], 4))?;
    Ok(n)
}

fn adapter_loss(m: &Model<f64>, x: &Tensor<f64>, labels: &[usize], leaf: &str) -> Result<(f64, Tensor<f64>), String> {
    let mut g = Graph::new(Mode::Eval, 0);
    let xi = g.constant(x.clone());
    let logits = m.forward(&mut g, xi).map_err(err)?;
    let loss = g.cross_entropy(logits, labels).map_err(err)?;
    let grads = g.backward(loss).map_err(err)?.by_name();
    let grad = grads.get(leaf).cloned().ok_or_else(|| format!("no gradient for {leaf}"))?;
    Ok((g.value(loss).data()[0], grad))
}

fn adapter_suite(worst: &mut f64) -> Result<usize, String> {
    let cfg = AstConfig {
        hidden: 16,
        layers: 1,
        heads: 2,
        intermediate: 32,
        in_mels: 32,
        in_frames: 32,
        n_classes: 3,
        dropout_p: 0.0,
        ..AstConfig::default()
    };
    let x = toy_input::<f64>(&[2, 32, 32], 12);
    let labels = [0, 2];
    let leaves = [
        (Method::Lora, "lora_B"),
        (Method::Adalora, "adalora_E"),
        (Method::Ia3, "ia3_l"),
        (Method::Oft, "oft_S"),
        (Method::Fourierft, "fourierft_c"),
    ];
    for (method, leaf) in leaves {
        let mut m = Model::<f64>::build(&ModelConfig::Ast(cfg.clone()), 4).map_err(err)?;
        let mut a = AdapterConfig::new(method, &[Role::Query, Role::Intermediate]);
        a.rank = 3;
        a.adalora.init_rank = 3;
        a.adalora.target_rank = 1;
        a.oft.n_blocks = 4;
        a.fourierft.n_coeffs = 10;
        a.fourierft.scaling = 50.0;
        inject(&mut m, &a, 1).map_err(err)?;
        let name = format!("encoder.layer.0.intermediate.dense.{leaf}");
        let shape = m.params().get(&name).ok_or("missing leaf")?.shape().to_vec();
        let start = toy_input::<f64>(&shape, 13).map(|v| 0.3 * v);
        m.params_mut().set(&name, start.clone()).map_err(err)?;
        let (_, analytic) = adapter_loss(&m, &x, &labels, &name)?;
        let (mut num_sq, mut diff_sq, mut ana_sq) = (0.0, 0.0, 0.0);
        for idx in (0..start.numel()).step_by((start.numel() / 12).max(1)) {
            let mut probe = |delta: f64| -> Result<f64, String> {
                let mut p = start.clone();
                p.data_mut()[idx] += delta;
                m.params_mut().set(&name, p).map_err(err)?;
                Ok(adapter_loss(&m, &x, &labels, &name)?.0)
            };
            let numeric = (probe(STEP)? - probe(-STEP)?) / (2.0 * STEP);
            let an = analytic.data()[idx];
            num_sq += numeric * numeric;
            ana_sq += an * an;
            diff_sq += (an - numeric) * (an - numeric);
        }
        let rel = diff_sq.sqrt() / num_sq.sqrt().max(ana_sq.sqrt());
        ensure!(ana_sq > 0.0, "{}: zero gradient", method.name());
        ensure!(rel <= 1e-4, "{}: relative error {rel:e}", method.name());
        *worst = worst.max(rel);
    }
    Ok(leaves.len())
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0;
    let ops = op_suite(&mut worst)?;
    let adapters = adapter_suite(&mut worst)?;
    let s = within_seconds(start, 120.0, "gradient checks")?;
    Ok(format!("{ops} op checks + {adapters} adapter leaves, worst relative error {worst:.1e}, {s:.1} s"))
}

fn tone(freq: f32, amp: f32) -> StandardWaveform {
    let s = (0..STANDARD_LEN)
        .map(|i| amp * (2.0 * PI * freq * i as f32 / SAMPLE_RATE as f32).sin())
        .collect();
    StandardWaveform::new(s, Some(0), Provenance::Original).expect("valid tone")
}

fn dsp_oracles() -> Outcome {
    let start = Instant::now();
    for (sr, freq) in [(44_100u32, 440.0f32), (22_050, 1000.0), (8_000, 300.0), (48_000, 2500.0)] {
        let x: Vec<f32> = (0..sr as usize * 5)
            .map(|i| 0.5 * (2.0 * PI * freq * i as f32 / sr as f32).sin())
            .collect();
        let w = standardize(&RawWaveform::mono(x, sr).map_err(err)?).map_err(err)?;
        let f = peak_frequency(w.samples(), SAMPLE_RATE);
        ensure!((f - freq as f64).abs() <= BIN_HZ + 1e-9, "resampled {sr} Hz tone peaks at {f}");
    }

    let x: Vec<f64> = (0..4096).map(|i| ((i * 7919) % 113) as f64 / 113.0 - 0.5).collect();
    let cfg = StftConfig {
        n_fft: 256,
        win_length: 256,
        hop_length: 256,
        window: Window::Rectangular,
        center: false,
    };
    let grid = stft(&x, &cfg).map_err(err)?;
    let mut energy = 0.0;
    for t in 0..grid.n_frames {
        for b in 0..grid.n_bins {
            let w = if b == 0 || b == 128 { 1.0 } else { 2.0 };
            energy += w * grid.get(b, t).norm_sqr();
        }
    }
    energy /= 256.0;
    let direct: f64 = x.iter().map(|v| v * v).sum();
    let parseval = (energy - direct).abs() / direct;
    ensure!(parseval < 1e-6, "Parseval relative error {parseval:e}");

    for (from, semis, to) in [(440.0, 12.0, 880.0), (880.0, -12.0, 440.0)] {
        let y = pitch_shift_unbounded(&tone(from, 0.5), semis).map_err(err)?;
        let f = peak_frequency(y.samples(), SAMPLE_RATE);
        ensure!((f - to).abs() <= BIN_HZ + 1e-9, "{semis:+} semitones: {f} Hz");
    }

    let w = &synth_dataset(1, 5)[4];
    let y = time_stretch(w, 1.0).map_err(err)?;
    let num: f64 = y.samples().iter().zip(w.samples()).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
    let den: f64 = w.samples().iter().map(|b| (*b as f64).powi(2)).sum();
    let stretch = (num / den).sqrt();
    ensure!(stretch < 0.05, "rate 1.0 relative L2 {stretch}");

    let t = tone(440.0, 0.5);
    ensure!(
        polarity_inversion(&polarity_inversion(&t)).samples() == t.samples(),
        "polarity inversion is not an involution"
    );

    let silent = StandardWaveform::new(vec![0.0; STANDARD_LEN], Some(0), Provenance::Original).map_err(err)?;
    let noisy = gaussian_noise(&silent, 0.01, &mut ChaCha8Rng::seed_from_u64(3)).map_err(err)?;
    let n = STANDARD_LEN as f64;
    let mean = noisy.samples().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = noisy.samples().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let var_dev = (var - 1e-4).abs() / 1e-4;
    ensure!(var_dev < 0.05, "noise variance {var:e}");

    let s = within_seconds(start, 60.0, "DSP oracles")?;
    Ok(format!(
        "Parseval {parseval:.1e}, stretch L2 {stretch:.4}, noise variance {:+.2}%, {s:.1} s",
        100.0 * (var / 1e-4 - 1.0)
    ))
}

fn base_config(name: &str, out: &Path, data: &Path, model: &str, extra: &str) -> Result<ExperimentConfig, String> {
    let text = format!(
        "schema_version = 1\nname = \"{name}\"\nout_dir = \"{}\"\n[dataset]\npath = \"{}\"\n{model}\n{extra}",
        out.display(),
        data.display()
    );
    ExperimentConfig::from_toml(&text).map_err(err)
}

fn test_accuracy(dir: &Path) -> Result<(f64, usize), String> {
    let m: RunMetrics = read_json(&dir.join("metrics.json")).map_err(err)?;
    let t = m.test.ok_or("no test metrics")?;
    Ok((t.accuracy, m.epochs_run))
}

fn end_to_end_cnn(out: &Path, data: &Path, synth_s: f64) -> Outcome {
    let start = Instant::now();
    let cfg = base_config(
        "cnn",
        out,
        data,
        "[model]\nkind = \"cnn\"",
        "[training]\nlr = 0.001\nbatch_size = 8\naccumulation_steps = 2\nepochs = 20\n",
    )?;
    let dir = cmd_train(&cfg).map_err(err)?;
    let (acc, epochs) = test_accuracy(&dir)?;
    let s = start.elapsed().as_secs_f64() + synth_s;
    ensure!(epochs <= 20, "{epochs} epochs");
    ensure!(acc >= 0.95, "test accuracy {acc:.4} after {epochs} epochs");
    ensure!(s <= 600.0, "took {s:.0} s");
    Ok(format!("test accuracy {acc:.4} after {epochs} epochs, {s:.0} s including synthesis"))
}

const TOY_AST: &str = "[model]\nkind = \"ast\"\nhidden = 64\nlayers = 2\nheads = 4\nintermediate = 256\nin_mels = 128\nin_frames = 128";

fn toy_ast_lora(out: &Path, data: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = base_config(
        "ast-lora",
        out,
        data,
        TOY_AST,
        "[adapter]\nmethod = \"lora\"\nrank = 8\n[training]\nlr = 0.001\nepochs = 20\n",
    )?;
    let dir = cmd_train(&cfg).map_err(err)?;
    let (acc, epochs) = test_accuracy(&dir)?;
    let s = start.elapsed().as_secs_f64();
    ensure!(acc >= 0.90, "test accuracy {acc:.4} after {epochs} epochs");
    ensure!(s <= 900.0, "took {s:.0} s");
    Ok(format!("test accuracy {acc:.4} after {epochs} epochs, {s:.0} s"))
}

fn protocol_properties() -> Outcome {
    let labels: Vec<usize> = (0..900).map(|i| i % 9).collect();
    let split = stratified_split(&labels, &SplitSpec::default()).map_err(err)?;
    ensure!(split.sizes() == [540, 180, 90, 90], "split sizes {:?}", split.sizes());
    for (part, want) in split.parts().iter().zip([60, 20, 10, 10]) {
        let mut counts = [0usize; 9];
        for &i in part.iter() {
            counts[labels[i]] += 1;
        }
        ensure!(counts == [want; 9], "per-class counts {counts:?}, expected {want}");
    }

    let plan = make_folds(&labels, 5, 0).map_err(err)?;
    let mut seen = vec![0usize; 900];
    for f in 0..5 {
        let (_, eval) = plan.fold(f).map_err(err)?;
        let mut counts = [0usize; 9];
        for &i in &eval {
            seen[i] += 1;
            counts[labels[i]] += 1;
        }
        ensure!(counts == [20; 9], "fold {f} per-class {counts:?}");
    }
    ensure!(seen.iter().all(|&c| c == 1), "a sample is held out more than once or never");

    let waves = synth_dataset(4, 2);
    let small: Vec<usize> = waves.iter().map(|w| w.label().unwrap_or(usize::MAX)).collect();
    let split = stratified_split(&small, &SplitSpec::default()).map_err(err)?;
    let aug = InflationConfig::new(1, vec![AugmentationSpec::with_default_range(AugmentationKind::PolarityInversion)]);
    let sets = prepare_sets(&waves, &split, FrontEnd::Ast { frames: 128 }, Some(&aug), 0).map_err(err)?;
    ensure!(sets.train.iter().any(|s| s.augmented), "no augmented training samples");
    ensure!(
        sets.test.iter().chain(&sets.test_val).all(|s| !s.augmented),
        "augmented sample in an evaluation split"
    );
    let model = Model::<f32>::build(&ModelConfig::Ast(AstConfig::toy()), 0).map_err(err)?;
    ensure!(
        matches!(evaluate(&model, &sets.train), Err(Error::Protocol(_))),
        "evaluate accepted augmented samples"
    );
    evaluate(&model, &sets.test).map_err(err)?;
    Ok("540/180/90/90 with 60/20/10/10 per class; 5 folds of 20 per class; augmented evaluation rejected".into())
}

fn metrics_oracle() -> Outcome {
    let m = MetricsReport::from_predictions(&[0, 0, 1, 1], &[0, 1, 1, 1], 2, 0.0).map_err(err)?;
    ensure!(m.accuracy == 0.75, "accuracy {}", m.accuracy);
    ensure!(m.macro_f1 == 11.0 / 15.0, "macro F1 {} vs {}", m.macro_f1, 11.0 / 15.0);

    let waves = synth_dataset(20, 6);
    let labels: Vec<usize> = waves.iter().map(|w| w.label().unwrap_or(usize::MAX)).collect();
    let plan = make_folds(&labels, 5, 1).map_err(err)?;
    let cfg = ModelConfig::Ast(AstConfig {
        dropout_p: 0.0,
        ..AstConfig::toy()
    });
    let factory = |fold: usize| {
        let mut m = Model::<f32>::build(&cfg, fold as u64)?;
        m.params_mut().set_trainable_where(|_| false);
        Ok(m)
    };
    let tc = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let (_, summary) = run_kfold(&factory, cfg.front_end(), &waves, &plan, &tc, 1).map_err(err)?;
    let chance = summary.accuracy.mean;
    ensure!((chance - 1.0 / 9.0).abs() <= 0.05, "frozen-model accuracy {chance:.4}");
    Ok(format!("accuracy 0.75, macro F1 11/15 exactly; frozen model {chance:.4} vs 1/9"))
}

fn reproducibility(out: &Path, data: &Path) -> Outcome {
    let mut logs = Vec::new();
    for name in ["repro-a", "repro-b"] {
        let cfg = base_config(
            name,
            out,
            data,
            TOY_AST,
            "[adapter]\nmethod = \"lora\"\n[training]\nepochs = 2\n",
        )?;
        let cfg = ExperimentConfig { seed: 11, ..cfg };
        let dir = cmd_train(&cfg).map_err(err)?;
        logs.push(RunLog::read(dir.join("runlog.jsonl")).map_err(err)?);
    }
    ensure!(logs[0].same_metrics(&logs[1]), "metric sequences differ");
    Ok(format!("{} identical epoch records", logs[0].records.len()))
}

fn run(results: &mut Vec<bool>, id: usize, title: &str, f: impl FnOnce() -> Outcome) {
    let started = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(format!("panic: {msg}"))
    });
    let s = started.elapsed().as_secs_f64();
    let (verdict, detail) = match &outcome {
        Ok(d) => ("PASS", d.as_str()),
        Err(e) => ("FAIL", e.as_str()),
    };
    println!("[{id:>2}] {verdict} {title} ({s:.1} s): {detail}");
    results.push(outcome.is_ok());
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let mut results = Vec::new();
    run(&mut results, 1, "CNN parameter count", parameter_exactness_cnn);
    run(&mut results, 2, "AST parameter count and sub-totals", parameter_exactness_ast);
    run(&mut results, 3, "mel shape and CNN flatten dimension", flatten_derivation);
    run(&mut results, 4, "PEFT trainable-count anchors", peft_anchors);
    run(&mut results, 5, "adapters are identity at injection", identity_at_init);
    run(&mut results, 6, "finite-difference gradients", gradient_correctness);
    run(&mut results, 7, "DSP oracles", dsp_oracles);

    let synth_start = Instant::now();
    let synth_cfg = ExperimentConfig::from_toml(&format!(
        "schema_version = 1\nname = \"synthetic\"\nout_dir = \"{}\"\n",
        tmp.path().display()
    ))
    .unwrap();
    let data: Result<PathBuf, String> = cmd_synth(&synth_cfg).map_err(err);
    let synth_s = synth_start.elapsed().as_secs_f64();
    let with_data = |f: &dyn Fn(&Path) -> Outcome| match &data {
        Ok(d) => f(d),
        Err(e) => Err(format!("synthesis failed: {e}")),
    };
    run(&mut results, 8, "synth + CNN training reaches 95% test accuracy", || {
        with_data(&|d| end_to_end_cnn(&out, d, synth_s))
    });
    run(&mut results, 9, "toy AST with LoRA r=8 reaches 90% test accuracy", || {
        with_data(&|d| toy_ast_lora(&out, d))
    });
    run(&mut results, 10, "split, fold and augmentation protocol", protocol_properties);
    run(&mut results, 11, "metrics oracle and chance level", metrics_oracle);
    run(&mut results, 12, "identical runs give identical run logs", || {
        with_data(&|d| reproducibility(&out, d))
    });

    let passed = results.iter().filter(|&&ok| ok).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    assert_eq!(passed, results.len(), "some acceptance criteria failed");
}
