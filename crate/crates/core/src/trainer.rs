//! Training: example construction, the squared-error objective and Adam.

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::codec::initial_image;
use crate::error::{Error, Result};
use crate::imageio::{Image, PaddedImage};
use crate::neuralnet::{init_params, psi_backward, psi_forward, save_checkpoint};
use crate::neuralnet::{ModelParams, PsiTape, Variant};
use crate::pocs::MagnitudeField;
use crate::transform::{forward_quantize, QuantTable};

/// Ground truth, DC-only starting image and magnitude bounds of one patch.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub target: PaddedImage,
    pub x0: PaddedImage,
    pub lambda: MagnitudeField,
}

pub fn make_example(patch: &Image, qf: u8) -> Result<TrainExample> {
    let target = PaddedImage::aligned(patch.clone())?;
    let table = QuantTable::for_quality(qf)?;
    let grid = forward_quantize(patch, &table)?;
    Ok(TrainExample {
        x0: initial_image(&grid, &table),
        lambda: MagnitudeField::from_levels(&grid, &table),
        target,
    })
}

/// `sum (target - psi(x0))^2` and its gradient in flat parameter order.
pub fn loss(params: &ModelParams, example: &TrainExample) -> Result<(f64, Vec<f64>)> {
    let mut tape = PsiTape::default();
    let out = psi_forward(&example.x0.image, params, &example.lambda, Some(&mut tape))?;
    let target = &example.target.image;
    if !out.same_dims(target) {
        return Err(Error::Shape("example target and initial image differ".into()));
    }
    let diff: Vec<f64> = out
        .samples()
        .iter()
        .zip(target.samples())
        .map(|(o, t)| o - t)
        .collect();
    let value: f64 = diff.iter().map(|d| d * d).sum();
    if !value.is_finite() {
        return Err(Error::Numerical(format!("loss is {value}")));
    }
    let grad_out = Image::new(
        out.width(),
        out.height(),
        diff.into_iter().map(|d| 2.0 * d).collect(),
    )?;
    Ok((value, psi_backward(&grad_out, &tape, params)?))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. Parameters are rounded to single
/// precision afterwards so that checkpoints reproduce them exactly.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Shape(format!(
            "{n} parameters, {} gradients, optimizer state for {}",
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..n {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        let p = params[i] - lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        params[i] = f64::from(p as f32);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub k: usize,
    pub pocs: bool,
    /// Quality factor that sets the projection bounds.
    pub qf: u8,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Written after every epoch when set.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Rdsr,
            k: 20,
            pocs: true,
            qf: 50,
            lr: 2e-4,
            batch: 10,
            epochs: 50,
            seed: 0,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=100).contains(&self.qf) {
            return Err(Error::Config(format!("quality factor {} outside 1..=100", self.qf)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {}", self.lr)));
        }
        ModelParams::zeros(self.variant, self.k).map(|_| ())
    }
}

/// Mean loss and mean gradient over a batch, reduced in item order.
pub fn batch_gradient(params: &ModelParams, batch: &[&TrainExample]) -> Result<(f64, Vec<f64>)> {
    let parts = batch
        .par_iter()
        .map(|ex| loss(params, ex))
        .collect::<Result<Vec<_>>>()?;
    let n = parts.len() as f64;
    let mut total = 0.0;
    let mut grads = vec![0.0; params.param_count()];
    for (l, g) in parts {
        total += l;
        for (a, b) in grads.iter_mut().zip(g) {
            *a += b;
        }
    }
    grads.iter_mut().for_each(|g| *g /= n);
    Ok((total / n, grads))
}

/// Seed offset separating the shuffle stream from parameter initialization.
const SHUFFLE_STREAM: u64 = 0x5348_5546;

/// Trains from freshly initialized parameters. Writes `epoch,mean_loss`
/// lines to `progress`, the mean taken over batches.
pub fn train(
    patches: &[Image],
    config: &TrainConfig,
    progress: &mut dyn Write,
) -> Result<ModelParams> {
    config.validate()?;
    if patches.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut params = init_params(config.variant, config.k, config.seed)?;
    params.pocs = config.pocs;
    if config.epochs == 0 {
        if let Some(path) = &config.checkpoint {
            save_checkpoint(&params, path)?;
        }
        return Ok(params);
    }

    let examples = patches
        .par_iter()
        .map(|p| make_example(p, config.qf))
        .collect::<Result<Vec<_>>>()?;
    let mut flat = params.flatten();
    let mut adam = AdamState::new(flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    writeln!(progress, "epoch,mean_loss")?;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch) {
            let batch: Vec<&TrainExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let (l, g) = batch_gradient(&params, &batch).map_err(|e| match e {
                Error::Numerical(m) => {
                    Error::Numerical(format!("diverged in epoch {epoch}, batch {batches}: {m}"))
                }
                other => other,
            })?;
            adam_step(&mut flat, &g, &mut adam, config.lr)?;
            params.assign_flat(&flat)?;
            sum += l;
            batches += 1;
        }
        let mean = sum / batches as f64;
        writeln!(progress, "{epoch},{mean:.6}")?;
        progress.flush()?;
        log::info!("epoch {epoch}/{}: mean loss {mean:.6}", config.epochs);
        if let Some(path) = &config.checkpoint {
            save_checkpoint(&params, path)?;
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::pixel_to_sample;
    use crate::neuralnet::parse_checkpoint;
    use crate::neuralnet::write_checkpoint;
    use crate::transform::BLOCK;
    use proptest::prelude::*;
    use rand::Rng;

    fn textured(n: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: f64 = rng.gen_range(0.2..0.6);
        let px: Vec<u8> = (0..n * n)
            .map(|i| {
                let (x, y) = ((i % n) as f64, (i / n) as f64);
                (128.0 + 70.0 * (f * x + 0.5 * y).sin() + rng.gen_range(-10.0..10.0)) as u8
            })
            .collect();
        Image::from_pixels(n, n, &px).unwrap()
    }

    #[test]
    fn example_of_constant_patch() {
        let patch = Image::filled(16, 16, pixel_to_sample(200));
        let ex = make_example(&patch, 50).unwrap();
        // DC quantization error only; step 16/128 at QF 50, DC = 8 * value
        let err = (ex.x0.image.get(3, 3) - patch.get(3, 3)).abs();
        assert!(err <= 0.5 * 16.0 / 128.0 / 8.0 + 1e-12, "{err}");
        let v = ex.x0.image.get(0, 0);
        assert!(ex.x0.image.samples().iter().all(|&s| s == v));
        for b in &ex.lambda.values {
            assert!(b[1..].iter().all(|&l| l == 0.0));
        }
    }

    #[test]
    fn example_of_zero_patch_has_zero_bounds() {
        let ex = make_example(&Image::zeros(8, 16), 50).unwrap();
        assert!(ex.lambda.values.iter().flatten().all(|&l| l == 0.0));
    }

    #[test]
    fn initial_image_is_blockwise_constant() {
        let ex = make_example(&textured(24, 1), 50).unwrap();
        let x0 = &ex.x0.image;
        for y in 0..24 {
            for x in 0..24 {
                let corner = x0.get(x / BLOCK * BLOCK, y / BLOCK * BLOCK);
                assert!((x0.get(x, y) - corner).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_unaligned_patch() {
        assert!(make_example(&Image::zeros(12, 8), 50).is_err());
    }

    #[test]
    fn zero_target_and_bounds_give_zero_loss() {
        let ex = make_example(&Image::zeros(16, 16), 50).unwrap();
        let params = init_params(Variant::Rdsr, 3, 2).unwrap();
        let (l, g) = loss(&params, &ex).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_fit_gives_zero_loss() {
        let params = init_params(Variant::Pdsr, 1, 4).unwrap();
        let mut ex = make_example(&textured(16, 3), 50).unwrap();
        let out = psi_forward(&ex.x0.image, &params, &ex.lambda, None).unwrap();
        ex.target = PaddedImage::aligned(out).unwrap();
        let (l, g) = loss(&params, &ex).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_gradient_matches_finite_difference() {
        let ex = make_example(&textured(16, 9), 25).unwrap();
        let params = init_params(Variant::Rdsr, 2, 6).unwrap();
        let (_, g) = loss(&params, &ex).unwrap();
        let flat = params.flatten();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut checked = 0;
        for _ in 0..12 {
            let i = rng.gen_range(0..flat.len());
            let h = 1e-5;
            let eval = |d: f64| {
                let mut p = params.clone();
                let mut f = flat.clone();
                f[i] += d;
                p.assign_flat(&f).unwrap();
                loss(&p, &ex).unwrap().0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let scale = fd.abs().max(g[i].abs()).max(1e-6);
            if (fd - g[i]).abs() / scale < 1e-3 {
                checked += 1;
            }
        }
        // kink crossings can spoil an occasional sample
        assert!(checked >= 10, "{checked}/12 samples agree");
    }

    #[test]
    fn adam_first_step() {
        let mut p = vec![0.5];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 2e-4).unwrap();
        assert!((p[0] - (0.5 - 2e-4)).abs() < 1e-7);
        assert_eq!(s.t, 1);
        assert!((s.m[0] - 0.1).abs() < 1e-15);
        assert!((s.v[0] - 0.001).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient() {
        let mut p = vec![0.25, -1.5];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 1e-3).unwrap();
        assert_eq!(p, vec![0.25, -1.5]);
        assert_eq!(s.t, 1);
        assert!(adam_step(&mut p, &[0.0], &mut s, 1e-3).is_err());
    }

    proptest! {
        #[test]
        fn adam_update_sign_survives_loss_scaling(
            grads in prop::collection::vec(-5.0f64..5.0, 1..50)
        ) {
            let n = grads.len();
            let base = vec![0.0; n];
            let mut a = base.clone();
            let mut b = base.clone();
            let (mut sa, mut sb) = (AdamState::new(n), AdamState::new(n));
            let scaled: Vec<f64> = grads.iter().map(|g| 10.0 * g).collect();
            adam_step(&mut a, &grads, &mut sa, 1e-3).unwrap();
            adam_step(&mut b, &scaled, &mut sb, 1e-3).unwrap();
            for i in 0..n {
                prop_assert!((sb.m[i] - 10.0 * sa.m[i]).abs() <= 1e-12 * sb.m[i].abs().max(1.0));
                prop_assert_eq!(a[i].signum(), b[i].signum());
            }
        }
    }

    #[test]
    fn overfits_single_example() {
        let ex = make_example(&textured(16, 5), 50).unwrap();
        let mut params = init_params(Variant::Rdsr, 2, 8).unwrap();
        let mut flat = params.flatten();
        let mut adam = AdamState::new(flat.len());
        let first = loss(&params, &ex).unwrap().0;
        let mut last = first;
        for _ in 0..100 {
            let (l, g) = loss(&params, &ex).unwrap();
            last = l;
            adam_step(&mut flat, &g, &mut adam, 1e-3).unwrap();
            params.assign_flat(&flat).unwrap();
        }
        assert!(last < first, "{last} >= {first}");
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            k: 2,
            epochs: 2,
            batch: 3,
            lr: 1e-3,
            seed: 12,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic_and_logs_epochs() {
        let patches: Vec<Image> = (0..5).map(|i| textured(16, i)).collect();
        let mut log_a = Vec::new();
        let mut log_b = Vec::new();
        let a = train(&patches, &tiny_config(), &mut log_a).unwrap();
        let b = train(&patches, &tiny_config(), &mut log_b).unwrap();
        assert_eq!(write_checkpoint(&a).unwrap(), write_checkpoint(&b).unwrap());
        assert_eq!(log_a, log_b);
        let text = String::from_utf8(log_a).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,mean_loss");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("2,"));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = TrainConfig {
            epochs: 0,
            pocs: false,
            ..tiny_config()
        };
        let p = train(&[textured(16, 0)], &cfg, &mut std::io::sink()).unwrap();
        let mut expect = init_params(Variant::Rdsr, 2, 12).unwrap();
        expect.pocs = false;
        assert_eq!(p, expect);
    }

    #[test]
    fn reloaded_checkpoint_gives_identical_loss() {
        let patches: Vec<Image> = (0..3).map(|i| textured(16, i + 20)).collect();
        let p = train(&patches, &tiny_config(), &mut std::io::sink()).unwrap();
        let q = parse_checkpoint(&write_checkpoint(&p).unwrap()).unwrap();
        let ex = make_example(&patches[0], 50).unwrap();
        assert_eq!(loss(&p, &ex).unwrap(), loss(&q, &ex).unwrap());
    }

    #[test]
    fn full_scale_configuration_is_accepted() {
        let cfg = TrainConfig::default();
        assert_eq!((cfg.qf, cfg.k, cfg.batch, cfg.epochs), (50, 20, 10, 50));
        assert_eq!(cfg.lr, 2e-4);
        cfg.validate().unwrap();
        for v in [Variant::Rdsr, Variant::Fdsr] {
            TrainConfig { variant: v, ..cfg.clone() }.validate().unwrap();
        }
    }

    #[test]
    fn bad_configs() {
        let empty: [Image; 0] = [];
        assert!(train(&empty, &tiny_config(), &mut std::io::sink()).is_err());
        for cfg in [
            TrainConfig { qf: 0, ..tiny_config() },
            TrainConfig { batch: 0, ..tiny_config() },
            TrainConfig { lr: -1.0, ..tiny_config() },
            TrainConfig { variant: Variant::Pdsr, ..tiny_config() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
    }
}
