use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::conv::{conv2d, conv2d_backward, Activation, ConvLayer};
use super::Tensor;
use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::pocs::{project, project_backward, project_in_place, MagnitudeField, ProjectionTape};

/// Parameters in one three-layer stack:
/// `(5*5*1*64 + 64) + (1*1*64*32 + 32) + (3*3*32*1 + 1)`.
pub const STAGE_PARAMS: usize = 4033;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// One network followed by one projection.
    Pdsr,
    /// One network applied `K` times, each followed by a projection.
    Rdsr,
    /// `K` distinct networks, each followed by a projection.
    Fdsr,
}

impl Variant {
    pub fn code(self) -> u8 {
        match self {
            Variant::Pdsr => 0,
            Variant::Rdsr => 1,
            Variant::Fdsr => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Variant::Pdsr),
            1 => Some(Variant::Rdsr),
            2 => Some(Variant::Fdsr),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Pdsr => "pdsr",
            Variant::Rdsr => "rdsr",
            Variant::Fdsr => "fdsr",
        }
    }

    /// Number of distinct stages for recursion depth `k`.
    pub fn stage_count(self, k: usize) -> usize {
        match self {
            Variant::Pdsr | Variant::Rdsr => 1,
            Variant::Fdsr => k,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pdsr" => Ok(Variant::Pdsr),
            "rdsr" => Ok(Variant::Rdsr),
            "fdsr" => Ok(Variant::Fdsr),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

/// Conv 5x5 1->64 ReLU, Conv 1x1 64->32 ReLU, Conv 3x3 32->1.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub layers: [ConvLayer; 3],
}

impl Stage {
    pub fn zeros() -> Self {
        Stage {
            layers: [
                ConvLayer::zeros(64, 1, 5, 5, Activation::Relu),
                ConvLayer::zeros(32, 64, 1, 1, Activation::Relu),
                ConvLayer::zeros(1, 32, 3, 3, Activation::None),
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
    }

    fn assign(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
    }
}

/// Weights for one of the sign-retrieval variants.
///
/// The flat parameter order used by the optimizer and checkpoints is: for
/// each stage, for each layer, the kernel (row-major `out, in, kh, kw`)
/// followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub variant: Variant,
    pub k: usize,
    /// When false the projection after each stage is the identity map.
    pub pocs: bool,
    pub stages: Vec<Stage>,
}

impl ModelParams {
    pub fn zeros(variant: Variant, k: usize) -> Result<Self> {
        let p = ModelParams {
            variant,
            k,
            pocs: true,
            stages: vec![Stage::zeros(); variant.stage_count(k)],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("recursion depth must be at least 1".into()));
        }
        if self.variant == Variant::Pdsr && self.k != 1 {
            return Err(Error::Config(format!("PDSR requires K = 1, got {}", self.k)));
        }
        let expect = self.variant.stage_count(self.k);
        if self.stages.len() != expect {
            return Err(Error::Config(format!(
                "{} with K = {} needs {expect} stages, found {}",
                self.variant.name(),
                self.k,
                self.stages.len()
            )));
        }
        Ok(())
    }

    /// The stage applied at recursion step `step`.
    pub fn stage_for(&self, step: usize) -> &Stage {
        match self.variant {
            Variant::Pdsr | Variant::Rdsr => &self.stages[0],
            Variant::Fdsr => &self.stages[step],
        }
    }

    fn stage_index(&self, step: usize) -> usize {
        match self.variant {
            Variant::Pdsr | Variant::Rdsr => 0,
            Variant::Fdsr => step,
        }
    }

    pub fn param_count(&self) -> usize {
        self.stages.iter().map(Stage::param_count).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for s in &self.stages {
            s.flatten_into(&mut out);
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        for (s, chunk) in self.stages.iter_mut().zip(flat.chunks(STAGE_PARAMS)) {
            s.assign(chunk);
        }
        Ok(())
    }
}

/// He-normal kernels (std `sqrt(2 / fan_in)`), zero biases, stored at
/// single precision so checkpoints round-trip exactly.
pub fn init_params(variant: Variant, k: usize, seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(variant, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for stage in &mut params.stages {
        for layer in &mut stage.layers {
            let std = (2.0 / layer.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite positive std");
            for w in &mut layer.weight {
                *w = f64::from(normal.sample(&mut rng) as f32);
            }
        }
    }
    Ok(params)
}

/// Cached activations of one stage.
#[derive(Debug, Clone)]
pub struct StageTape {
    pub input: Tensor,
    pub hidden1: Tensor,
    pub hidden2: Tensor,
    /// The network output before projection.
    pub output: Tensor,
    pub projection: Option<ProjectionTape>,
}

impl StageTape {
    /// ReLU activity pattern and projection mask, for detecting kink crossings.
    pub fn pattern(&self) -> Vec<bool> {
        let mut out: Vec<bool> = self
            .hidden1
            .data
            .iter()
            .chain(&self.hidden2.data)
            .map(|&v| v > 0.0)
            .collect();
        if let Some(p) = &self.projection {
            out.extend(p.pass.iter().flatten());
        }
        out
    }
}

/// One entry per executed stage of [`psi_forward`].
#[derive(Debug, Clone, Default)]
pub struct PsiTape {
    pub stages: Vec<StageTape>,
}

impl PsiTape {
    pub fn pattern(&self) -> Vec<bool> {
        self.stages.iter().flat_map(StageTape::pattern).collect()
    }
}

/// Applies one three-layer stack to a single-channel image.
pub fn phi_forward(x: &Image, stage: &Stage, tape: Option<&mut StageTape>) -> Result<Image> {
    let input = Tensor::from_image(x);
    let hidden1 = conv2d(&input, &stage.layers[0])?;
    let hidden2 = conv2d(&hidden1, &stage.layers[1])?;
    let output = conv2d(&hidden2, &stage.layers[2])?;
    let image = output.clone().into_image();
    if let Some(t) = tape {
        *t = StageTape {
            input,
            hidden1,
            hidden2,
            output,
            projection: None,
        };
    }
    Ok(image)
}

/// Backward through one stack: accumulates parameter gradients into
/// `grads` (flat stage layout) and returns the input gradient if asked.
pub fn phi_backward(
    grad_out: &Image,
    tape: &StageTape,
    stage: &Stage,
    grads: &mut [f64],
    need_input: bool,
) -> Result<Option<Image>> {
    if grads.len() != STAGE_PARAMS {
        return Err(Error::Shape(format!("{} stage gradient slots", grads.len())));
    }
    let g3 = conv2d_backward(
        &Tensor::from_image(grad_out),
        &tape.hidden2,
        &tape.output,
        &stage.layers[2],
        true,
    )?;
    let g2 = conv2d_backward(
        g3.input.as_ref().expect("requested"),
        &tape.hidden1,
        &tape.hidden2,
        &stage.layers[1],
        true,
    )?;
    let g1 = conv2d_backward(
        g2.input.as_ref().expect("requested"),
        &tape.input,
        &tape.hidden1,
        &stage.layers[0],
        need_input,
    )?;
    let mut pos = 0;
    for g in [&g1, &g2, &g3] {
        for v in g.weight.iter().chain(&g.bias) {
            grads[pos] += v;
            pos += 1;
        }
    }
    Ok(g1.input.map(Tensor::into_image))
}

/// The composite map: `K` rounds of network followed by projection.
pub fn psi_forward(
    x0: &Image,
    params: &ModelParams,
    lambda: &MagnitudeField,
    mut tape: Option<&mut PsiTape>,
) -> Result<Image> {
    params.validate()?;
    if x0.width() != lambda.width() || x0.height() != lambda.height() {
        return Err(Error::Shape(format!(
            "initial image {}x{} against a {}x{} magnitude field",
            x0.width(),
            x0.height(),
            lambda.width(),
            lambda.height()
        )));
    }
    if let Some(t) = tape.as_deref_mut() {
        t.stages.clear();
    }
    let mut x = x0.clone();
    for step in 0..params.k {
        let stage = params.stage_for(step);
        match tape.as_deref_mut() {
            Some(t) => {
                let mut st = StageTape {
                    input: Tensor::zeros(0, 0, 0),
                    hidden1: Tensor::zeros(0, 0, 0),
                    hidden2: Tensor::zeros(0, 0, 0),
                    output: Tensor::zeros(0, 0, 0),
                    projection: None,
                };
                let z = phi_forward(&x, stage, Some(&mut st))?;
                x = if params.pocs {
                    let (p, pt) = project(&z, lambda)?;
                    st.projection = Some(pt);
                    p
                } else {
                    z
                };
                t.stages.push(st);
            }
            None => {
                x = phi_forward(&x, stage, None)?;
                if params.pocs {
                    project_in_place(&mut x, lambda)?;
                }
            }
        }
    }
    Ok(x)
}

/// Parameter gradients (flat order) of `<grad_out, psi(x0)>`.
///
/// Gradients of a shared stage are summed over all of its uses.
pub fn psi_backward(grad_out: &Image, tape: &PsiTape, params: &ModelParams) -> Result<Vec<f64>> {
    params.validate()?;
    if tape.stages.len() != params.k {
        return Err(Error::Config(format!(
            "tape holds {} stages, model runs {}",
            tape.stages.len(),
            params.k
        )));
    }
    let mut grads = vec![0.0; params.param_count()];
    let mut g = grad_out.clone();
    for step in (0..params.k).rev() {
        let st = &tape.stages[step];
        if params.pocs {
            let pt = st
                .projection
                .as_ref()
                .ok_or_else(|| Error::Config("tape lacks a projection record".into()))?;
            g = project_backward(&g, pt)?;
        }
        let idx = params.stage_index(step);
        let slot = &mut grads[idx * STAGE_PARAMS..(idx + 1) * STAGE_PARAMS];
        match phi_backward(&g, st, params.stage_for(step), slot, step > 0)? {
            Some(gi) => g = gi,
            None => break,
        }
    }
    Ok(grads)
}
