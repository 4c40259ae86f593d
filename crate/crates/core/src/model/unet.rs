use ndarray::{Array3, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{self, concat, split};
use super::Real;
use crate::tensorio::{IqtDomain, SPATIAL_MULTIPLE};
use crate::{Error, Result};

/// Shape hyper-parameters of the three-level U-Net.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub encoder_channels: [usize; 3],
    pub bottleneck_channels: usize,
    pub kernel: usize,
    pub pool: usize,
}

impl UNetConfig {
    /// Full-width network.
    pub fn full(domain: IqtDomain) -> Self {
        Self::with_widths(domain, [64, 128, 256], 512)
    }

    /// Small network used for gradient checks.
    pub fn reduced(domain: IqtDomain) -> Self {
        Self::with_widths(domain, [4, 8, 16], 32)
    }

    pub fn with_widths(domain: IqtDomain, encoder_channels: [usize; 3], bottleneck_channels: usize) -> Self {
        let c = domain.channels();
        UNetConfig {
            in_channels: c,
            out_channels: c,
            encoder_channels,
            bottleneck_channels,
            kernel: 3,
            pool: 2,
        }
    }

    pub fn domain(&self) -> Result<IqtDomain> {
        match self.in_channels {
            2 => Ok(IqtDomain::Kspace),
            1 => Ok(IqtDomain::Spatial),
            n => Err(Error::InvalidArgument(format!("in_channels must be 1 or 2, got {n}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.domain()?;
        if self.out_channels != self.in_channels {
            return Err(Error::InvalidArgument(format!(
                "out_channels {} must equal in_channels {}",
                self.out_channels, self.in_channels
            )));
        }
        if self.kernel != 3 || self.pool != 2 {
            return Err(Error::InvalidArgument("only 3x3 kernels with 2x2 pooling are supported".into()));
        }
        if self.encoder_channels.contains(&0) || self.bottleneck_channels == 0 {
            return Err(Error::InvalidArgument("channel widths must be positive".into()));
        }
        Ok(())
    }

    /// The layer list in execution order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let [c1, c2, c3] = self.encoder_channels;
        let cb = self.bottleneck_channels;
        let conv = |cin, cout| (LayerKind::Conv { kernel: 3, relu: true }, cin, cout);
        let up = |cin, cout| (LayerKind::UpConv, cin, cout);
        let shape = [
            conv(self.in_channels, c1),
            conv(c1, c1),
            conv(c1, c2),
            conv(c2, c2),
            conv(c2, c3),
            conv(c3, c3),
            conv(c3, cb),
            conv(cb, cb),
            up(cb, c3),
            conv(2 * c3, c3),
            conv(c3, c3),
            up(c3, c2),
            conv(2 * c2, c2),
            conv(c2, c2),
            up(c2, c1),
            conv(2 * c1, c1),
            conv(c1, c1),
            (LayerKind::Conv { kernel: 1, relu: false }, c1, self.out_channels),
        ];
        LAYER_NAMES
            .iter()
            .zip(shape)
            .map(|(&name, (kind, cin, cout))| LayerSpec { name, kind, cin, cout })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.weight_len() + l.cout).sum()
    }
}

pub const LAYER_NAMES: [&str; 18] = [
    "enc1.conv1",
    "enc1.conv2",
    "enc2.conv1",
    "enc2.conv2",
    "enc3.conv1",
    "enc3.conv2",
    "bottleneck.conv1",
    "bottleneck.conv2",
    "dec3.up",
    "dec3.conv1",
    "dec3.conv2",
    "dec2.up",
    "dec2.conv1",
    "dec2.conv2",
    "dec1.up",
    "dec1.conv1",
    "dec1.conv2",
    "head",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv { kernel: usize, relu: bool },
    /// 2x2 stride-2 transposed convolution.
    UpConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub kind: LayerKind,
    pub cin: usize,
    pub cout: usize,
}

impl LayerSpec {
    /// Logical weight shape: `[cout, cin, k, k]` for convolutions and
    /// `[cout, 2, 2, cin]` for the transposed convolution.
    pub fn weight_shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv { kernel, .. } => vec![self.cout, self.cin, kernel, kernel],
            LayerKind::UpConv => vec![self.cout, 2, 2, self.cin],
        }
    }

    pub fn weight_len(&self) -> usize {
        self.weight_shape().iter().product()
    }

    fn matrix_shape(&self) -> (usize, usize) {
        match self.kind {
            LayerKind::Conv { kernel, .. } => (self.cout, self.cin * kernel * kernel),
            LayerKind::UpConv => (self.cout * 4, self.cin),
        }
    }

    fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv { kernel, .. } => self.cin * kernel * kernel,
            LayerKind::UpConv => self.cin,
        }
    }
}

/// Location of one layer's weights and biases in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSlot {
    pub spec: LayerSpec,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

/// U-Net weights stored as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetModel<F: Real = f32> {
    config: UNetConfig,
    slots: Vec<ParamSlot>,
    params: Vec<F>,
    weight_init_seed: u64,
}

/// He-normal weights and zero biases, drawn in layer order.
pub fn build_unet(config: UNetConfig, seed: u64) -> Result<UNetModel<f32>> {
    UNetModel::new(config, seed)
}

/// Intermediate values kept from a forward pass for the backward pass.
struct Tape<F> {
    cols: Vec<ndarray::Array2<F>>,
    outs: Vec<Array3<F>>,
    in_dims: Vec<(usize, usize, usize)>,
    pool_args: Vec<Array3<u8>>,
    up_inputs: Vec<Array3<F>>,
}

impl<F> Tape<F> {
    fn new() -> Self {
        Tape {
            cols: Vec::new(),
            outs: Vec::new(),
            in_dims: Vec::new(),
            pool_args: Vec::new(),
            up_inputs: Vec::new(),
        }
    }
}

impl<F: Real> UNetModel<F> {
    pub fn new(config: UNetConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        model.weight_init_seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slot in model.slots.clone() {
            let std = (2.0 / slot.spec.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let n = slot.spec.weight_len();
            for p in &mut model.params[slot.weight_offset..slot.weight_offset + n] {
                *p = F::from_f64(normal.sample(&mut rng)).expect("representable");
            }
        }
        Ok(model)
    }

    /// All parameters zero.
    pub fn zeros(config: UNetConfig) -> Result<Self> {
        config.validate()?;
        let mut slots = Vec::new();
        let mut offset = 0;
        for spec in config.layers() {
            let weight_offset = offset;
            offset += spec.weight_len();
            slots.push(ParamSlot { spec, weight_offset, bias_offset: offset });
            offset += spec.cout;
        }
        Ok(UNetModel {
            config,
            slots,
            params: vec![F::zero(); offset],
            weight_init_seed: 0,
        })
    }

    pub fn from_params(config: UNetConfig, params: Vec<F>, weight_init_seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        if params.len() != model.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                model.params.len(),
                params.len()
            )));
        }
        model.params = params;
        model.weight_init_seed = weight_init_seed;
        Ok(model)
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn weight_init_seed(&self) -> u64 {
        self.weight_init_seed
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<G: Real>(&self) -> UNetModel<G> {
        UNetModel {
            config: self.config,
            slots: self.slots.clone(),
            params: self
                .params
                .iter()
                .map(|&p| G::from_f64(p.to_f64().expect("finite")).expect("representable"))
                .collect(),
            weight_init_seed: self.weight_init_seed,
        }
    }

    /// Weight matrix of layer `i` in its compute layout.
    pub fn weight(&self, i: usize) -> ArrayView2<'_, F> {
        let slot = &self.slots[i];
        let shape = slot.spec.matrix_shape();
        ArrayView2::from_shape(shape, &self.params[slot.weight_offset..slot.weight_offset + shape.0 * shape.1])
            .expect("slot fits")
    }

    pub fn bias(&self, i: usize) -> ArrayView1<'_, F> {
        let slot = &self.slots[i];
        ArrayView1::from(&self.params[slot.bias_offset..slot.bias_offset + slot.spec.cout])
    }

    pub fn check_input(&self, x: &Array3<F>) -> Result<()> {
        let (c, h, w) = x.dim();
        if c != self.config.in_channels {
            return Err(Error::Shape(format!("expected {} input channels, got {c}", self.config.in_channels)));
        }
        if h == 0 || w == 0 || h % SPATIAL_MULTIPLE != 0 || w % SPATIAL_MULTIPLE != 0 {
            return Err(Error::Shape(format!("spatial dims {h}x{w} must be positive multiples of {SPATIAL_MULTIPLE}")));
        }
        Ok(())
    }

    /// Inference pass. Output has the input's shape.
    pub fn forward(&self, x: &Array3<F>) -> Result<Array3<F>> {
        self.check_input(x)?;
        Ok(self.run(x, None))
    }

    /// Loss value and gradient of the loss with respect to every parameter,
    /// laid out like [`UNetModel::params`]. `loss` maps the network output to
    /// a loss value and its output gradient.
    pub fn loss_and_grad<L>(&self, x: &Array3<F>, loss: L) -> Result<(F, Vec<F>)>
    where
        L: FnOnce(&Array3<F>) -> Result<(F, Array3<F>)>,
    {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let out = self.run(x, Some(&mut tape));
        let (value, grad_out) = loss(&out)?;
        let mut grads = vec![F::zero(); self.params.len()];
        self.backward(grad_out, &tape, &mut grads);
        Ok((value, grads))
    }

    /// Forward pass that also returns the on/off state of every ReLU and the
    /// winner of every pooling window. Two parameter settings with the same
    /// pattern lie in the same linear piece of the network.
    pub fn forward_with_pattern(&self, x: &Array3<F>) -> Result<(Array3<F>, Vec<u8>)> {
        self.check_input(x)?;
        let mut tape = Tape::new();
        let out = self.run(x, Some(&mut tape));
        let mut pattern = Vec::new();
        // the last recorded output is the linear head
        for o in &tape.outs[..tape.outs.len() - 1] {
            pattern.extend(o.iter().map(|&v| u8::from(v > F::zero())));
        }
        for arg in &tape.pool_args {
            pattern.extend(arg.iter().copied());
        }
        Ok((out, pattern))
    }

    fn conv(&self, i: usize, x: &Array3<F>, tape: &mut Option<&mut Tape<F>>) -> Array3<F> {
        let LayerKind::Conv { kernel, relu } = self.slots[i].spec.kind else {
            unreachable!("layer {i} is a convolution")
        };
        let (out, cols) = layers::conv_forward(x, self.weight(i), self.bias(i), kernel, relu);
        if let Some(t) = tape {
            t.cols.push(cols);
            t.outs.push(out.clone());
            t.in_dims.push(x.dim());
        }
        out
    }

    fn pool(&self, x: &Array3<F>, tape: &mut Option<&mut Tape<F>>) -> Array3<F> {
        let (out, arg) = layers::maxpool_forward(x);
        if let Some(t) = tape {
            t.pool_args.push(arg);
        }
        out
    }

    fn up(&self, i: usize, x: &Array3<F>, tape: &mut Option<&mut Tape<F>>) -> Array3<F> {
        let out = layers::upconv_forward(x, self.weight(i), self.bias(i));
        if let Some(t) = tape {
            t.up_inputs.push(x.clone());
        }
        out
    }

    fn run(&self, x: &Array3<F>, mut tape: Option<&mut Tape<F>>) -> Array3<F> {
        let t = &mut tape;
        let e1 = self.conv(0, x, t);
        let e1 = self.conv(1, &e1, t);
        let p1 = self.pool(&e1, t);
        let e2 = self.conv(2, &p1, t);
        let e2 = self.conv(3, &e2, t);
        let p2 = self.pool(&e2, t);
        let e3 = self.conv(4, &p2, t);
        let e3 = self.conv(5, &e3, t);
        let p3 = self.pool(&e3, t);
        let b = self.conv(6, &p3, t);
        let b = self.conv(7, &b, t);
        let u3 = self.up(8, &b, t);
        let d3 = self.conv(9, &concat(&u3, &e3), t);
        let d3 = self.conv(10, &d3, t);
        let u2 = self.up(11, &d3, t);
        let d2 = self.conv(12, &concat(&u2, &e2), t);
        let d2 = self.conv(13, &d2, t);
        let u1 = self.up(14, &d2, t);
        let d1 = self.conv(15, &concat(&u1, &e1), t);
        let d1 = self.conv(16, &d1, t);
        self.conv(17, &d1, t)
    }

    fn grad_views<'g>(&self, i: usize, grads: &'g mut [F]) -> (ArrayViewMut2<'g, F>, ArrayViewMut1<'g, F>) {
        let slot = &self.slots[i];
        let shape = slot.spec.matrix_shape();
        let (w, rest) = grads[slot.weight_offset..].split_at_mut(shape.0 * shape.1);
        (
            ArrayViewMut2::from_shape(shape, w).expect("slot fits"),
            ArrayViewMut1::from(&mut rest[..slot.spec.cout]),
        )
    }

    fn conv_back(&self, i: usize, g: Array3<F>, tape: &Tape<F>, grads: &mut [F], need_dx: bool) -> Option<Array3<F>> {
        let LayerKind::Conv { kernel, relu } = self.slots[i].spec.kind else {
            unreachable!("layer {i} is a convolution")
        };
        let ti = conv_index(i);
        let weight = self.weight(i);
        let (gw, gb) = self.grad_views(i, grads);
        layers::conv_backward(g, &tape.outs[ti], &tape.cols[ti], weight, gw, gb, tape.in_dims[ti], kernel, relu, need_dx)
    }

    fn up_back(&self, i: usize, k: usize, g: &Array3<F>, tape: &Tape<F>, grads: &mut [F]) -> Array3<F> {
        let weight = self.weight(i);
        let (gw, gb) = self.grad_views(i, grads);
        layers::upconv_backward(g, &tape.up_inputs[k], weight, gw, gb)
    }

    fn backward(&self, grad_out: Array3<F>, tape: &Tape<F>, grads: &mut [F]) {
        let [c1, c2, c3] = self.config.encoder_channels;
        let g = self.conv_back(17, grad_out, tape, grads, true).unwrap();
        let g = self.conv_back(16, g, tape, grads, true).unwrap();
        let g = self.conv_back(15, g, tape, grads, true).unwrap();
        let (gu1, skip1) = split(g, c1);
        let g = self.up_back(14, 2, &gu1, tape, grads);
        let g = self.conv_back(13, g, tape, grads, true).unwrap();
        let g = self.conv_back(12, g, tape, grads, true).unwrap();
        let (gu2, skip2) = split(g, c2);
        let g = self.up_back(11, 1, &gu2, tape, grads);
        let g = self.conv_back(10, g, tape, grads, true).unwrap();
        let g = self.conv_back(9, g, tape, grads, true).unwrap();
        let (gu3, skip3) = split(g, c3);
        let g = self.up_back(8, 0, &gu3, tape, grads);
        let g = self.conv_back(7, g, tape, grads, true).unwrap();
        let g = self.conv_back(6, g, tape, grads, true).unwrap();
        let g = layers::maxpool_backward(&g, &tape.pool_args[2]) + skip3;
        let g = self.conv_back(5, g, tape, grads, true).unwrap();
        let g = self.conv_back(4, g, tape, grads, true).unwrap();
        let g = layers::maxpool_backward(&g, &tape.pool_args[1]) + skip2;
        let g = self.conv_back(3, g, tape, grads, true).unwrap();
        let g = self.conv_back(2, g, tape, grads, true).unwrap();
        let g = layers::maxpool_backward(&g, &tape.pool_args[0]) + skip1;
        let g = self.conv_back(1, g, tape, grads, true).unwrap();
        self.conv_back(0, g, tape, grads, false);
    }
}

fn conv_index(layer: usize) -> usize {
    // up-convolutions sit at 8, 11 and 14
    layer - [8, 11, 14].iter().filter(|&&u| u < layer).count()
}
