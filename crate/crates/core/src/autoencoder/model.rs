use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{self, LayerGrad, KERNEL, STRIDE};
use super::tensor::Tensor4;
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::voxel::Repr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    TransposedConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(
        kind: LayerKind,
        in_channels: usize,
        out_channels: usize,
        activation: Activation,
    ) -> Self {
        Self {
            kind,
            in_channels,
            out_channels,
            kernel: KERNEL,
            stride: STRIDE,
            activation,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel.pow(3)
    }

    fn validate(&self) -> Result<()> {
        if self.kernel != KERNEL || self.stride != STRIDE {
            return Err(Error::InvalidArgument(format!(
                "only kernel {KERNEL} / stride {STRIDE} layers are supported, got {} / {}",
                self.kernel, self.stride
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument("layer with zero channels".into()));
        }
        Ok(())
    }

    /// Input count feeding one output voxel, used to scale the init.
    fn fan_in(&self) -> f64 {
        let taps = self.kernel.pow(3) as f64;
        match self.kind {
            LayerKind::Conv => self.in_channels as f64 * taps,
            LayerKind::TransposedConv => {
                self.in_channels as f64 * taps / (self.stride.pow(3) as f64)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(spec: LayerSpec) -> Self {
        Self {
            weights: vec![0.0; spec.weight_len()],
            bias: vec![0.0; spec.out_channels],
            spec,
        }
    }

    fn forward_linear(&self, input: &Tensor4) -> Tensor4 {
        match self.spec.kind {
            LayerKind::Conv => {
                conv::conv_forward(input, &self.weights, &self.bias, self.spec.out_channels)
            }
            LayerKind::TransposedConv => {
                conv::tconv_forward(input, &self.weights, &self.bias, self.spec.out_channels)
            }
        }
    }

    fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        if input.channels() != self.spec.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "layer expects {} channels, got {}",
                self.spec.in_channels,
                input.channels()
            )));
        }
        if self.spec.kind == LayerKind::Conv && input.dims().iter().any(|d| d % STRIDE != 0) {
            return Err(Error::ShapeMismatch(format!(
                "odd spatial size {:?}",
                input.dims()
            )));
        }
        let act = self.spec.activation;
        Ok(self.forward_linear(input).map(|v| act.apply(v)))
    }
}

/// Channel widths of the three analysis layers; synthesis mirrors them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub channels: [usize; 3],
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            channels: [16, 32, 16],
        }
    }
}

impl Architecture {
    pub fn latent_channels(&self) -> usize {
        self.channels[2]
    }

    pub fn layer_specs(&self) -> (Vec<LayerSpec>, Vec<LayerSpec>) {
        let [c0, c1, c2] = self.channels;
        use Activation::*;
        use LayerKind::*;
        let analysis = vec![
            LayerSpec::new(Conv, 1, c0, Relu),
            LayerSpec::new(Conv, c0, c1, Relu),
            LayerSpec::new(Conv, c1, c2, Relu),
        ];
        let synthesis = vec![
            LayerSpec::new(TransposedConv, c2, c1, Relu),
            LayerSpec::new(TransposedConv, c1, c0, Relu),
            LayerSpec::new(TransposedConv, c0, 1, Sigmoid),
        ];
        (analysis, synthesis)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    pub analysis: Vec<Layer>,
    pub synthesis: Vec<Layer>,
    pub repr: Repr,
    pub seed: u64,
    pub train_config: Option<TrainConfig>,
}

impl AutoencoderParams {
    /// Fresh parameters: weights uniform in `±sqrt(6 / fan_in)`, drawn as
    /// `f32` so that a checkpoint reproduces them exactly, and zero biases.
    pub fn init(arch: Architecture, repr: Repr, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, s) = arch.layer_specs();
        let mut make = |spec: LayerSpec| -> Result<Layer> {
            spec.validate()?;
            let bound = (6.0 / spec.fan_in()).sqrt() as f32;
            let weights = (0..spec.weight_len())
                .map(|_| rng.random_range(-bound..bound) as f64)
                .collect();
            Ok(Layer {
                weights,
                bias: vec![0.0; spec.out_channels],
                spec,
            })
        };
        let analysis = a.into_iter().map(&mut make).collect::<Result<Vec<_>>>()?;
        let synthesis = s.into_iter().map(&mut make).collect::<Result<Vec<_>>>()?;
        Self::from_layers(analysis, synthesis, repr, seed)
    }

    /// Assembles parameters from explicit layers, checking that the layer
    /// chain is consistent.
    pub fn from_layers(
        analysis: Vec<Layer>,
        synthesis: Vec<Layer>,
        repr: Repr,
        seed: u64,
    ) -> Result<Self> {
        if analysis.len() != 3 || synthesis.len() != 3 {
            return Err(Error::InvalidArgument(
                "expected three analysis and three synthesis layers".into(),
            ));
        }
        if repr == Repr::Tsdf {
            return Err(Error::InvalidArgument(
                "autoencoder supports binary and tdf inputs".into(),
            ));
        }
        let mut prev = 1;
        for (i, layer) in analysis.iter().chain(&synthesis).enumerate() {
            let spec = &layer.spec;
            spec.validate()?;
            let want_kind = if i < 3 {
                LayerKind::Conv
            } else {
                LayerKind::TransposedConv
            };
            if spec.kind != want_kind {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} has kind {:?}",
                    spec.kind
                )));
            }
            if spec.in_channels != prev {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} takes {} channels, previous layer gives {prev}",
                    spec.in_channels
                )));
            }
            if layer.weights.len() != spec.weight_len() || layer.bias.len() != spec.out_channels {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} parameter arrays do not match its spec"
                )));
            }
            prev = spec.out_channels;
        }
        if prev != 1 {
            return Err(Error::ShapeMismatch(
                "synthesis must end with one channel".into(),
            ));
        }
        Ok(Self {
            analysis,
            synthesis,
            repr,
            seed,
            train_config: None,
        })
    }

    pub fn latent_channels(&self) -> usize {
        self.analysis[2].spec.out_channels
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            channels: [
                self.analysis[0].spec.out_channels,
                self.analysis[1].spec.out_channels,
                self.analysis[2].spec.out_channels,
            ],
        }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.analysis.iter().chain(&self.synthesis)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.analysis.iter_mut().chain(&mut self.synthesis)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Rounds every parameter to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for layer in self.layers_mut() {
            for v in layer.weights.iter_mut().chain(&mut layer.bias) {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn ensure_repr(&self, expected: Repr) -> Result<()> {
        if self.repr != expected {
            return Err(Error::ReprMismatch {
                expected,
                found: self.repr,
            });
        }
        Ok(())
    }
}

/// Parameter gradients, one entry per layer (analysis then synthesis).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    pub fn zeros_like(params: &AutoencoderParams) -> Self {
        Self {
            layers: params
                .layers()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a
                .weights
                .iter_mut()
                .zip(&b.weights)
                .chain(a.bias.iter_mut().zip(&b.bias))
            {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(&mut l.bias) {
                *v *= s;
            }
        }
    }
}

fn check_input(x: &Tensor4, channels: usize, divisor: usize) -> Result<()> {
    if x.channels() != channels {
        return Err(Error::ShapeMismatch(format!(
            "expected {channels} channel(s), got {}",
            x.channels()
        )));
    }
    if x.dims().iter().any(|&d| d % divisor != 0) {
        return Err(Error::ShapeMismatch(format!(
            "spatial size {:?} is not divisible by {divisor}",
            x.dims()
        )));
    }
    Ok(())
}

/// Latent feature maps `(F, S/8, S/8, S/8)` of a single-channel input.
pub fn analysis_forward(x: &Tensor4, params: &AutoencoderParams) -> Result<Tensor4> {
    check_input(x, 1, 8)?;
    let mut h = params.analysis[0].forward(x)?;
    for layer in &params.analysis[1..] {
        h = layer.forward(&h)?;
    }
    Ok(h)
}

/// Reconstruction in `(0, 1)` from latent maps.
pub fn synthesis_forward(y: &Tensor4, params: &AutoencoderParams) -> Result<Tensor4> {
    check_input(y, params.latent_channels(), 1)?;
    let mut h = params.synthesis[0].forward(y)?;
    for layer in &params.synthesis[1..] {
        h = layer.forward(&h)?;
    }
    Ok(h)
}

/// Autoencoder that records activations so that a gradient can be
/// propagated back after a forward pass.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    params: AutoencoderParams,
    /// Input of layer 0 followed by the activated output of every layer.
    tape: Option<Vec<Tensor4>>,
}

impl Autoencoder {
    pub fn new(params: AutoencoderParams) -> Self {
        Self { params, tape: None }
    }

    pub fn params(&self) -> &AutoencoderParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut AutoencoderParams {
        self.tape = None;
        &mut self.params
    }

    pub fn into_params(self) -> AutoencoderParams {
        self.params
    }

    /// Full reconstruction, recorded for [`Autoencoder::backward`].
    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        check_input(x, 1, 8)?;
        let mut tape = Vec::with_capacity(7);
        tape.push(x.clone());
        for layer in self.params.layers() {
            let next = layer.forward(tape.last().expect("tape starts with the input"))?;
            tape.push(next);
        }
        let out = tape.last().cloned().expect("six layers ran");
        self.tape = Some(tape);
        Ok(out)
    }

    /// Gradients of all parameters given `dL/d output` of the last
    /// recorded forward pass. The recording is kept, so several gradients
    /// may be pulled back through the same pass.
    pub fn backward(&self, grad_output: &Tensor4) -> Result<Gradients> {
        let tape = self
            .tape
            .as_ref()
            .ok_or_else(|| Error::InvalidState("backward called before forward".into()))?;
        grad_output.same_shape(tape.last().expect("non-empty tape"))?;

        let layers: Vec<&Layer> = self.params.layers().collect();
        let mut grads = vec![None; layers.len()];
        let mut g = grad_output.clone();
        for (i, layer) in layers.iter().enumerate().rev() {
            let out = &tape[i + 1];
            let act = layer.spec.activation;
            for (gv, &y) in g.data_mut().iter_mut().zip(out.data()) {
                *gv *= act.derivative_from_output(y);
            }
            let input = &tape[i];
            let need_input = i > 0;
            let (lg, gi) = match layer.spec.kind {
                LayerKind::Conv => conv::conv_backward(input, &layer.weights, &g, need_input),
                LayerKind::TransposedConv => {
                    conv::tconv_backward(input, &layer.weights, &g, need_input)
                }
            };
            grads[i] = Some(lg);
            if let Some(gi) = gi {
                g = gi;
            }
        }
        Ok(Gradients {
            layers: grads
                .into_iter()
                .map(|g| g.expect("every layer visited"))
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_params(seed: u64) -> AutoencoderParams {
        let mut p = AutoencoderParams::init(
            Architecture {
                channels: [2, 2, 2],
            },
            Repr::Tdf,
            seed,
        )
        .unwrap();
        // Non-zero biases so ReLU kinks are not sitting on exact zeros.
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for layer in p.layers_mut() {
            for b in &mut layer.bias {
                *b = rng.random_range(-0.1..0.1);
            }
        }
        p
    }

    fn toy_input(seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_vec(
            1,
            [8, 8, 8],
            (0..512).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn shape_algebra() {
        let p = AutoencoderParams::init(Architecture::default(), Repr::Binary, 0).unwrap();
        let x = Tensor4::zeros(1, [16, 16, 16]);
        let y = analysis_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), (16, [2, 2, 2]));
        assert!(y.data().iter().all(|&v| v == 0.0));
        let r = synthesis_forward(&y, &p).unwrap();
        assert_eq!(r.shape(), (1, [16, 16, 16]));
        assert!(r.data().iter().all(|&v| v == 0.5));
        assert!(matches!(
            analysis_forward(&Tensor4::zeros(1, [12, 12, 12]), &p),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            synthesis_forward(&Tensor4::zeros(3, [2, 2, 2]), &p),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn backward_requires_forward() {
        let net = Autoencoder::new(toy_params(1));
        assert!(matches!(
            net.backward(&Tensor4::zeros(1, [8, 8, 8])),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let params = toy_params(3);
        let x = toy_input(4);
        // L = sum_i c_i * out_i with fixed random c.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c: Vec<f64> = (0..512).map(|_| rng.random::<f64>() - 0.5).collect();
        let loss = |p: &AutoencoderParams| -> f64 {
            let mut net = Autoencoder::new(p.clone());
            let out = net.forward(&x).unwrap();
            out.data().iter().zip(&c).map(|(o, w)| o * w).sum()
        };
        let mut net = Autoencoder::new(params.clone());
        net.forward(&x).unwrap();
        let g = net
            .backward(&Tensor4::from_vec(1, [8, 8, 8], c.clone()).unwrap())
            .unwrap();

        let h = 1e-5;
        let mut checked = 0;
        for li in 0..6 {
            let n_w = params.layers().nth(li).unwrap().weights.len();
            let n_b = params.layers().nth(li).unwrap().bias.len();
            // Every bias and a spread of weights.
            let picks: Vec<(bool, usize)> = (0..n_b)
                .map(|j| (false, j))
                .chain((0..n_w).step_by(7).map(|j| (true, j)))
                .collect();
            for (is_w, j) in picks {
                let perturb = |delta: f64| {
                    let mut p = params.clone();
                    let layer = p.layers_mut().nth(li).unwrap();
                    if is_w {
                        layer.weights[j] += delta;
                    } else {
                        layer.bias[j] += delta;
                    }
                    loss(&p)
                };
                let fd = (perturb(h) - perturb(-h)) / (2.0 * h);
                let an = if is_w {
                    g.layers[li].weights[j]
                } else {
                    g.layers[li].bias[j]
                };
                // Roundoff in the difference quotient is about eps * |L| / h,
                // so tiny gradients are compared against a floor.
                let scale = fd.abs().max(an.abs()).max(1e-3);
                assert!(
                    (fd - an).abs() / scale <= 1e-5,
                    "layer {li} {} {j}: fd {fd} vs analytic {an}",
                    if is_w { "w" } else { "b" }
                );
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn backward_is_linear_in_output_gradient() {
        let mut net = Autoencoder::new(toy_params(7));
        net.forward(&toy_input(8)).unwrap();
        let zero = net.backward(&Tensor4::zeros(1, [8, 8, 8])).unwrap();
        assert!(zero
            .layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|&v| v == 0.0)));
        let ones = Tensor4::from_vec(1, [8, 8, 8], vec![1.0; 512]).unwrap();
        let twos = Tensor4::from_vec(1, [8, 8, 8], vec![2.0; 512]).unwrap();
        let g1 = net.backward(&ones).unwrap();
        let g2 = net.backward(&twos).unwrap();
        for (a, b) in g1.layers.iter().zip(&g2.layers) {
            for (x, y) in a
                .weights
                .iter()
                .chain(&a.bias)
                .zip(b.weights.iter().chain(&b.bias))
            {
                assert_eq!(2.0 * x, *y);
            }
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = AutoencoderParams::init(Architecture::default(), Repr::Tdf, 9).unwrap();
        let b = AutoencoderParams::init(Architecture::default(), Repr::Tdf, 9).unwrap();
        let c = AutoencoderParams::init(Architecture::default(), Repr::Tdf, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a
            .layers()
            .all(|l| l.weights.iter().all(|&w| w as f32 as f64 == w)));
    }
}
