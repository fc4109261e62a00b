//! The scale-conditioned detail-rate network `f(I(t), t, θ)`.
//!
//! A plain stack of same-resolution convolutions, ReLU between layers and
//! none after the last. The first layer reads the image channels plus one
//! constant plane holding the current scale `t`.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{kernels, Shape, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VectorFieldConfig {
    pub depth: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    pub image_channels: usize,
    pub init_seed: u64,
}

impl Default for VectorFieldConfig {
    fn default() -> Self {
        VectorFieldConfig {
            depth: 8,
            hidden_channels: 32,
            kernel_size: 3,
            image_channels: 3,
            init_seed: 0,
        }
    }
}

impl VectorFieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::contract(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.hidden_channels == 0 {
            return Err(Error::contract("hidden_channels must be >= 1"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::contract(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.image_channels != 1 && self.image_channels != 3 {
            return Err(Error::contract(format!(
                "image_channels must be 1 or 3, got {}",
                self.image_channels
            )));
        }
        Ok(())
    }

    /// `(out_ch, in_ch)` of every layer in order.
    pub fn layer_channels(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|i| {
                let inp = if i == 0 { self.image_channels + 1 } else { self.hidden_channels };
                let out = if i + 1 == self.depth { self.image_channels } else { self.hidden_channels };
                (out, inp)
            })
            .collect()
    }

    fn padding(&self) -> usize {
        (self.kernel_size - 1) / 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    /// `(out_ch, in_ch, k, k)`
    pub weight: Tensor<T>,
    /// `(1, out_ch, 1, 1)`
    pub bias: Tensor<T>,
}

/// Network parameters θ, layers in application order.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorFieldParams<T> {
    config: VectorFieldConfig,
    layers: Vec<ConvLayer<T>>,
}

impl<T: Scalar> VectorFieldParams<T> {
    /// All-zero parameters; the resulting field is identically zero.
    pub fn zeros(config: VectorFieldConfig) -> Result<Self> {
        config.validate()?;
        let k = config.kernel_size;
        let layers = config
            .layer_channels()
            .into_iter()
            .map(|(out, inp)| ConvLayer {
                weight: Tensor::zeros(Shape::new(out, inp, k, k)),
                bias: Tensor::zeros(Shape::new(1, out, 1, 1)),
            })
            .collect();
        Ok(VectorFieldParams { config, layers })
    }

    /// Uniform weights in `±sqrt(6 / fan_in)`, zero biases, fully determined by
    /// `config.init_seed`.
    pub fn init(config: VectorFieldConfig) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        for layer in &mut params.layers {
            let s = layer.weight.shape();
            let bound = (6.0 / s.item() as f64).sqrt();
            for w in layer.weight.data_mut() {
                *w = T::of(rng.gen_range(-bound..bound));
            }
        }
        Ok(params)
    }

    pub(crate) fn from_layers(config: VectorFieldConfig, layers: Vec<ConvLayer<T>>) -> Result<Self> {
        let expect = Self::zeros(config)?;
        if layers.len() != expect.layers.len() {
            return Err(Error::contract(format!(
                "expected {} layers, got {}",
                expect.layers.len(),
                layers.len()
            )));
        }
        for (i, (got, want)) in layers.iter().zip(&expect.layers).enumerate() {
            if got.weight.shape() != want.weight.shape() || got.bias.shape() != want.bias.shape() {
                return Err(Error::contract(format!(
                    "layer {i}: weight {} bias {} but config needs {} / {}",
                    got.weight.shape(),
                    got.bias.shape(),
                    want.weight.shape(),
                    want.bias.shape()
                )));
            }
        }
        Ok(VectorFieldParams { config, layers })
    }

    pub fn config(&self) -> &VectorFieldConfig {
        &self.config
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer<T>] {
        &mut self.layers
    }

    /// Zeros the final layer so the field starts identically zero while the
    /// earlier layers keep their random features.
    pub fn zero_last_layer(&mut self) {
        if let Some(last) = self.layers.last_mut() {
            last.weight.data_mut().iter_mut().for_each(|v| *v = T::zero());
            last.bias.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Weight then bias of each layer, in declaration order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> VectorFieldParams<U> {
        VectorFieldParams {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        }
    }

    /// Records the parameters on `tape` as leaves.
    pub fn register(&self, tape: &mut Tape<T>, requires_grad: bool) -> ParamVars {
        ParamVars {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| {
                    (
                        tape.leaf(l.weight.clone(), requires_grad),
                        tape.leaf(l.bias.clone(), requires_grad),
                    )
                })
                .collect(),
        }
    }

    fn check_state(&self, s: Shape) -> Result<()> {
        if s.channels != self.config.image_channels {
            return Err(Error::contract(format!(
                "field expects {} image channels, state has {} (shape {s})",
                self.config.image_channels, s.channels
            )));
        }
        Ok(())
    }
}

/// Tape handles of a registered [`VectorFieldParams`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    config: VectorFieldConfig,
    layers: Vec<(Var, Var)>,
}

impl ParamVars {
    pub fn config(&self) -> &VectorFieldConfig {
        &self.config
    }

    /// Weight then bias handles, matching [`VectorFieldParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// `f(state, t)` without recording.
pub fn eval_field<T: Scalar>(params: &VectorFieldParams<T>, state: &Tensor<T>, t: f64) -> Result<Tensor<T>> {
    params.check_state(state.shape())?;
    let pad = params.config.padding();
    let scale_plane = kernels::fill_channel(state.shape(), T::of(t));
    let mut x = kernels::concat_channels(state, &scale_plane)?;
    let last = params.layers.len() - 1;
    for (i, layer) in params.layers.iter().enumerate() {
        x = kernels::conv2d(&x, &layer.weight, &layer.bias, pad)?;
        if i < last {
            x = kernels::relu(&x);
        }
    }
    Ok(x)
}

/// `f(state, t)` recorded on `tape`; differentiable in `state` and the params.
pub fn eval_field_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ParamVars,
    state: Var,
    t: f64,
) -> Result<Var> {
    let s = tape.value(state).shape();
    if s.channels != params.config.image_channels {
        return Err(Error::contract(format!(
            "field expects {} image channels, state has {} (shape {s})",
            params.config.image_channels, s.channels
        )));
    }
    let pad = params.config.padding();
    let scale_plane = tape.fill_channel(state, T::of(t));
    let mut x = tape.concat_channels(state, scale_plane)?;
    let last = params.layers.len() - 1;
    for (i, &(w, b)) in params.layers.iter().enumerate() {
        x = tape.conv2d(x, w, b, pad)?;
        if i < last {
            x = tape.relu(x);
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(channels: usize) -> VectorFieldConfig {
        VectorFieldConfig {
            depth: 3,
            hidden_channels: 5,
            kernel_size: 3,
            image_channels: channels,
            init_seed: 11,
        }
    }

    fn random_state(shape: Shape, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn layer_shapes_follow_config() {
        let p = VectorFieldParams::<f32>::init(VectorFieldConfig::default()).unwrap();
        assert_eq!(p.layers()[0].weight.shape(), Shape::new(32, 4, 3, 3));
        assert_eq!(p.layers()[7].weight.shape(), Shape::new(3, 32, 3, 3));
        assert_eq!(p.layers()[3].weight.shape(), Shape::new(32, 32, 3, 3));
        assert_eq!(p.layers()[7].bias.shape(), Shape::new(1, 3, 1, 1));
        assert!(p.layers().iter().all(|l| l.bias.data().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = VectorFieldParams::<f32>::init(small_cfg(3)).unwrap();
        let b = VectorFieldParams::<f32>::init(small_cfg(3)).unwrap();
        assert_eq!(a, b);
        let c = VectorFieldParams::<f32>::init(VectorFieldConfig { init_seed: 12, ..small_cfg(3) }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            VectorFieldConfig { depth: 1, ..small_cfg(1) },
            VectorFieldConfig { hidden_channels: 0, ..small_cfg(1) },
            VectorFieldConfig { kernel_size: 4, ..small_cfg(1) },
            VectorFieldConfig { image_channels: 2, ..small_cfg(1) },
        ] {
            assert!(VectorFieldParams::<f32>::init(cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn zero_params_give_zero_field() {
        let p = VectorFieldParams::<f64>::zeros(small_cfg(3)).unwrap();
        let s = random_state(Shape::new(2, 3, 6, 7), 1);
        let out = eval_field(&p, &s, 2.7).unwrap();
        assert_eq!(out.shape(), s.shape());
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resolution_preserved() {
        let p = VectorFieldParams::<f32>::init(small_cfg(3)).unwrap();
        for (h, w) in [(8, 8), (17, 23), (48, 48)] {
            let s = random_state(Shape::new(1, 3, h, w), 2).cast::<f32>();
            assert_eq!(eval_field(&p, &s, 2.0).unwrap().shape(), s.shape());
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let p = VectorFieldParams::<f32>::init(small_cfg(3)).unwrap();
        let s = Tensor::zeros(Shape::new(1, 1, 8, 8));
        assert!(matches!(eval_field(&p, &s, 2.0), Err(Error::Contract(_))));
    }

    #[test]
    fn scale_channel_reaches_output() {
        let p = VectorFieldParams::<f64>::init(small_cfg(3)).unwrap();
        let s = random_state(Shape::new(1, 3, 8, 8), 3);
        let a = eval_field(&p, &s, 1.5).unwrap();
        let b = eval_field(&p, &s, 3.0).unwrap();
        assert!(a.max_abs_diff(&b) > 0.0);
    }

    #[test]
    fn cutting_scale_channel_removes_t_dependence() {
        let mut p = VectorFieldParams::<f32>::init(small_cfg(3)).unwrap();
        let first = &mut p.layers_mut()[0].weight;
        let s = first.shape();
        // zero every weight that reads input channel index 3 (the scale plane)
        for o in 0..s.batch {
            for ky in 0..s.height {
                for kx in 0..s.width {
                    let idx = ((o * s.channels + 3) * s.height + ky) * s.width + kx;
                    first.data_mut()[idx] = 0.0;
                }
            }
        }
        let st = random_state(Shape::new(1, 3, 9, 9), 4).cast::<f32>();
        let a = eval_field(&p, &st, 1.1).unwrap();
        let b = eval_field(&p, &st, 4.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tape_and_direct_paths_agree_bitwise() {
        let p = VectorFieldParams::<f32>::init(small_cfg(1)).unwrap();
        let s = random_state(Shape::new(2, 1, 10, 6), 5).cast::<f32>();
        let direct = eval_field(&p, &s, 2.2).unwrap();
        let mut tape = Tape::new();
        let vars = p.register(&mut tape, true);
        let sv = tape.leaf(s.clone(), false);
        let out = eval_field_on_tape(&mut tape, &vars, sv, 2.2).unwrap();
        assert_eq!(tape.value(out), &direct);
        assert_eq!(eval_field(&p, &s, 2.2).unwrap(), direct);
    }

    #[test]
    fn fresh_init_output_is_bounded() {
        // Default-size network on a random [0,1] image across the whole scale range.
        let p = VectorFieldParams::<f32>::init(VectorFieldConfig { image_channels: 3, ..Default::default() })
            .unwrap();
        let s = random_state(Shape::new(1, 3, 24, 24), 6).cast::<f32>();
        for t in [1.0, 2.0, 4.0] {
            let out = eval_field(&p, &s, t).unwrap();
            let n = out.len() as f64;
            let mean = out.data().iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = out.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            assert!(out.is_finite() && var.sqrt() < 3.0, "t = {t}: std {}", var.sqrt());
        }
    }
}
