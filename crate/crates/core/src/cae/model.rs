use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_backward, conv2d_forward, conv2d_transpose_backward, conv2d_transpose_forward,
    mse_loss, relu_backward, relu_forward, ConvKernel, Tensor,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaeConfig {
    pub encoder_channels: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
    pub input_size: usize,
    pub input_channels: usize,
    pub tied_weights: bool,
}

impl Default for CaeConfig {
    /// Five layers of 15, 15, 15, 10, 10 channels, 5x5 kernels, stride 2,
    /// on 256x256 single-channel images: an 8x8x10 bottleneck.
    fn default() -> Self {
        Self {
            encoder_channels: vec![15, 15, 15, 10, 10],
            kernel_size: 5,
            stride: 2,
            input_size: 256,
            input_channels: 1,
            tied_weights: true,
        }
    }
}

impl CaeConfig {
    /// Spatial size before each layer and after the last: `L + 1` entries.
    pub fn spatial_chain(&self) -> Vec<usize> {
        let mut chain = vec![self.input_size];
        for _ in &self.encoder_channels {
            let last = *chain.last().unwrap();
            chain.push(last.div_ceil(self.stride.max(1)));
        }
        chain
    }

    /// Channel count before each layer and after the last.
    pub fn channel_chain(&self) -> Vec<usize> {
        std::iter::once(self.input_channels)
            .chain(self.encoder_channels.iter().copied())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.is_empty() {
            return Err(Error::Config("at least one encoder layer is required".into()));
        }
        if self.encoder_channels.contains(&0) || self.input_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.kernel_size == 0 || self.stride == 0 {
            return Err(Error::Config("kernel size and stride must be positive".into()));
        }
        if self.input_size == 0 {
            return Err(Error::Config("bottleneck spatial size would be 0".into()));
        }
        let chain = self.spatial_chain();
        if let Some((l, &s)) = chain[..chain.len() - 1]
            .iter()
            .enumerate()
            .find(|(_, &s)| s < self.kernel_size)
        {
            return Err(Error::Config(format!(
                "layer {l} sees a {s}x{s} input, smaller than the {k}x{k} kernel",
                k = self.kernel_size
            )));
        }
        Ok(())
    }

    /// `(height, width, channels)` of the code.
    pub fn bottleneck(&self) -> Result<(usize, usize, usize)> {
        self.validate()?;
        let s = *self.spatial_chain().last().unwrap();
        Ok((s, s, *self.encoder_channels.last().unwrap()))
    }

    pub fn code_len(&self) -> Result<usize> {
        let (h, w, c) = self.bottleneck()?;
        Ok(h * w * c)
    }

    pub fn layers(&self) -> usize {
        self.encoder_channels.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaeModel {
    pub config: CaeConfig,
    pub encoder: Vec<ConvKernel>,
    /// Bias of decoder layer `i`, sized to the input channels of encoder
    /// layer `L - 1 - i`.
    pub decoder_biases: Vec<Vec<f32>>,
    /// Decoder kernels; only present when weights are not tied.
    pub decoder_weights: Option<Vec<Tensor>>,
    pub rng_seed: u64,
}

/// Per-parameter-slot gradients, in [`CaeModel::parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub slots: Vec<Vec<f32>>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// Encoder inputs `a_0 .. a_L` (a_L is the code).
    pub encoder_acts: Vec<Tensor>,
    /// Encoder pre-activations `z_0 .. z_{L-1}`.
    pub encoder_pre: Vec<Tensor>,
    /// Decoder inputs `d_0 .. d_L` (d_0 is the code, d_L the reconstruction).
    pub decoder_acts: Vec<Tensor>,
    pub decoder_pre: Vec<Tensor>,
}

impl ForwardPass {
    pub fn code(&self) -> &Tensor {
        self.encoder_acts.last().unwrap()
    }

    pub fn reconstruction(&self) -> &Tensor {
        self.decoder_acts.last().unwrap()
    }
}

/// Builds a model with He-style uniform weights in `±sqrt(6 / fan_in)` and
/// zero biases, deterministically from `seed`.
pub fn build_model(config: CaeConfig, seed: u64) -> Result<CaeModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = config.kernel_size;
    let channels = config.channel_chain();
    let init = |cin: usize, cout: usize, rng: &mut ChaCha8Rng| {
        let bound = (6.0 / (k * k * cin) as f64).sqrt() as f32;
        let data = (0..k * k * cin * cout)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Tensor::new(vec![k, k, cin, cout], data).expect("finite init")
    };
    let encoder = channels
        .windows(2)
        .map(|w| ConvKernel::new(init(w[0], w[1], &mut rng), vec![0.0; w[1]]))
        .collect::<Result<Vec<_>>>()?;
    let decoder_biases = (0..config.layers())
        .rev()
        .map(|j| vec![0.0; channels[j]])
        .collect();
    let decoder_weights = (!config.tied_weights).then(|| {
        (0..config.layers())
            .rev()
            .map(|j| init(channels[j], channels[j + 1], &mut rng))
            .collect()
    });
    Ok(CaeModel {
        config,
        encoder,
        decoder_biases,
        decoder_weights,
        rng_seed: seed,
    })
}

impl CaeModel {
    /// Kernel used by decoder layer `i`: the mirrored encoder kernel when
    /// weights are tied.
    pub fn decoder_kernel(&self, i: usize) -> &Tensor {
        match &self.decoder_weights {
            Some(w) => &w[i],
            None => &self.encoder[self.config.layers() - 1 - i].weights,
        }
    }

    /// Parameter slots in a fixed order: for each encoder layer its weights
    /// then its bias; then for each decoder layer its weights (untied only)
    /// then its bias.
    pub fn parameters(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for k in &self.encoder {
            out.push(k.weights.data());
            out.push(&k.bias);
        }
        for (i, b) in self.decoder_biases.iter().enumerate() {
            if let Some(w) = &self.decoder_weights {
                out.push(w[i].data());
            }
            out.push(b);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for k in &mut self.encoder {
            out.push(k.weights.data_mut());
            out.push(&mut k.bias);
        }
        match &mut self.decoder_weights {
            Some(ws) => {
                for (w, b) in ws.iter_mut().zip(&mut self.decoder_biases) {
                    out.push(w.data_mut());
                    out.push(b);
                }
            }
            None => {
                for b in &mut self.decoder_biases {
                    out.push(b);
                }
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Number of trainable kernel weights (biases excluded).
    pub fn weight_count(&self) -> usize {
        let enc: usize = self.encoder.iter().map(|k| k.weights.len()).sum();
        let dec: usize = self
            .decoder_weights
            .iter()
            .flatten()
            .map(|w| w.len())
            .sum();
        enc + dec
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let [_, h, w, c] = batch.dims4()?;
        let s = self.config.input_size;
        if (h, w, c) != (s, s, self.config.input_channels) {
            return Err(Error::Shape(format!(
                "model expects [B, {s}, {s}, {}], got {:?}",
                self.config.input_channels,
                batch.shape()
            )));
        }
        Ok(())
    }

    pub fn encode(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let mut a = batch.clone();
        for k in &self.encoder {
            a = relu_forward(&conv2d_forward(&a, k, self.config.stride)?);
        }
        Ok(a)
    }

    pub fn decode(&self, code: &Tensor) -> Result<Tensor> {
        let (h, w, c) = self.config.bottleneck()?;
        let [_, ch, cw, cc] = code.dims4()?;
        if (ch, cw, cc) != (h, w, c) {
            return Err(Error::Shape(format!(
                "code must be [B, {h}, {w}, {c}], got {:?}",
                code.shape()
            )));
        }
        let chain = self.config.spatial_chain();
        let layers = self.config.layers();
        let mut d = code.clone();
        for i in 0..layers {
            let out = chain[layers - 1 - i];
            let u = conv2d_transpose_forward(
                &d,
                self.decoder_kernel(i),
                &self.decoder_biases[i],
                self.config.stride,
                (out, out),
            )?;
            d = relu_forward(&u);
        }
        Ok(d)
    }

    pub fn reconstruct(&self, batch: &Tensor) -> Result<Tensor> {
        self.decode(&self.encode(batch)?)
    }

    pub fn forward(&self, batch: &Tensor) -> Result<ForwardPass> {
        self.check_input(batch)?;
        let stride = self.config.stride;
        let mut encoder_acts = vec![batch.clone()];
        let mut encoder_pre = Vec::new();
        for k in &self.encoder {
            let z = conv2d_forward(encoder_acts.last().unwrap(), k, stride)?;
            encoder_acts.push(relu_forward(&z));
            encoder_pre.push(z);
        }
        let chain = self.config.spatial_chain();
        let layers = self.config.layers();
        let mut decoder_acts = vec![encoder_acts.last().unwrap().clone()];
        let mut decoder_pre = Vec::new();
        for i in 0..layers {
            let out = chain[layers - 1 - i];
            let u = conv2d_transpose_forward(
                decoder_acts.last().unwrap(),
                self.decoder_kernel(i),
                &self.decoder_biases[i],
                stride,
                (out, out),
            )?;
            decoder_acts.push(relu_forward(&u));
            decoder_pre.push(u);
        }
        Ok(ForwardPass {
            encoder_acts,
            encoder_pre,
            decoder_acts,
            decoder_pre,
        })
    }

    /// Backpropagates `grad_output` (dLoss/dReconstruction) through a cached
    /// forward pass. Tied kernels receive the sum of their encoder-side and
    /// decoder-side contributions.
    pub fn backward(&self, pass: &ForwardPass, grad_output: &Tensor) -> Result<Gradients> {
        let layers = self.config.layers();
        let stride = self.config.stride;
        let mut enc_w: Vec<Vec<f64>> = self
            .encoder
            .iter()
            .map(|k| vec![0.0; k.weights.len()])
            .collect();
        let mut enc_b: Vec<Vec<f32>> = Vec::with_capacity(layers);
        let mut dec_w: Vec<Vec<f32>> = vec![Vec::new(); layers];
        let mut dec_b: Vec<Vec<f32>> = vec![Vec::new(); layers];

        let mut g = grad_output.clone();
        for i in (0..layers).rev() {
            let gu = relu_backward(&pass.decoder_pre[i], &g)?;
            let grads = conv2d_transpose_backward(
                &pass.decoder_acts[i],
                self.decoder_kernel(i),
                stride,
                &gu,
            )?;
            if self.decoder_weights.is_some() {
                dec_w[i] = grads.weights.into_data();
            } else {
                let j = layers - 1 - i;
                for (acc, &v) in enc_w[j].iter_mut().zip(grads.weights.data()) {
                    *acc += v as f64;
                }
            }
            dec_b[i] = grads.bias;
            g = grads.input;
        }
        let mut enc_b_rev = Vec::with_capacity(layers);
        for l in (0..layers).rev() {
            let gz = relu_backward(&pass.encoder_pre[l], &g)?;
            let grads = conv2d_backward(&pass.encoder_acts[l], &self.encoder[l], stride, &gz)?;
            for (acc, &v) in enc_w[l].iter_mut().zip(grads.weights.data()) {
                *acc += v as f64;
            }
            enc_b_rev.push(grads.bias);
            g = grads.input;
        }
        enc_b.extend(enc_b_rev.into_iter().rev());

        let mut slots = Vec::new();
        for (w, b) in enc_w.into_iter().zip(enc_b) {
            slots.push(w.into_iter().map(|v| v as f32).collect());
            slots.push(b);
        }
        for (w, b) in dec_w.into_iter().zip(dec_b) {
            if self.decoder_weights.is_some() {
                slots.push(w);
            }
            slots.push(b);
        }
        Ok(Gradients { slots })
    }

    /// Mean squared reconstruction loss of a batch and its gradient with
    /// respect to every parameter slot.
    pub fn loss_and_gradients(&self, batch: &Tensor) -> Result<(f64, Gradients)> {
        let pass = self.forward(batch)?;
        let (loss, grad) = mse_loss(pass.reconstruction(), batch)?;
        let grads = self.backward(&pass, &grad)?;
        Ok((loss, grads))
    }

    pub fn reconstruction_loss(&self, batch: &Tensor) -> Result<f64> {
        Ok(mse_loss(&self.reconstruct(batch)?, batch)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bottleneck_is_640() {
        let c = CaeConfig::default();
        assert_eq!(c.spatial_chain(), vec![256, 128, 64, 32, 16, 8]);
        assert_eq!(c.bottleneck().unwrap(), (8, 8, 10));
        assert_eq!(c.code_len().unwrap(), 640);
    }

    #[test]
    fn single_layer_bottleneck() {
        let c = CaeConfig {
            encoder_channels: vec![4],
            input_size: 64,
            ..CaeConfig::default()
        };
        assert_eq!(c.bottleneck().unwrap(), (32, 32, 4));
    }

    #[test]
    fn parameter_audit() {
        // weights: 5*5*(1*15 + 15*15 + 15*15 + 15*10 + 10*10)
        let expected_weights = 25 * (15 + 225 + 225 + 150 + 100);
        assert_eq!(expected_weights, 17_875);
        let m = build_model(CaeConfig::default(), 0).unwrap();
        assert_eq!(m.weight_count(), 17_875);
        let enc_bias: usize = m.encoder.iter().map(|k| k.bias.len()).sum();
        let dec_bias: usize = m.decoder_biases.iter().map(|b| b.len()).sum();
        assert_eq!(enc_bias, 65);
        assert_eq!(dec_bias, 10 + 15 + 15 + 15 + 1);
        assert_eq!(m.parameter_count(), 17_875 + 65 + 56);
    }

    #[test]
    fn invalid_configs() {
        let bad = |f: fn(&mut CaeConfig)| {
            let mut c = CaeConfig::default();
            f(&mut c);
            build_model(c, 0).is_err()
        };
        assert!(bad(|c| c.encoder_channels.clear()));
        assert!(bad(|c| c.input_size = 0));
        assert!(bad(|c| c.stride = 0));
        assert!(bad(|c| c.encoder_channels[2] = 0));
        // 256 / 2^6 = 4 < 5 at the seventh layer
        assert!(bad(|c| c.encoder_channels = vec![2; 7]));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = build_model(CaeConfig::default(), 42).unwrap();
        let b = build_model(CaeConfig::default(), 42).unwrap();
        let c = build_model(CaeConfig::default(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for k in &a.encoder {
            let [kh, kw, cin, _] = k.dims();
            let bound = (6.0 / (kh * kw * cin) as f64).sqrt() as f32;
            assert!(k.weights.data().iter().all(|w| w.abs() <= bound));
            assert!(k.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn shape_chains() {
        let m = build_model(CaeConfig::default(), 1).unwrap();
        let code = m.encode(&Tensor::zeros(&[1, 256, 256, 1])).unwrap();
        assert_eq!(code.shape(), &[1, 8, 8, 10]);
        assert!(code.data().iter().all(|&v| v == 0.0));
        let img = m.decode(&code).unwrap();
        assert_eq!(img.shape(), &[1, 256, 256, 1]);
        assert!(img.data().iter().all(|&v| v == 0.0));
        assert!(m.encode(&Tensor::zeros(&[1, 128, 128, 1])).is_err());
        assert!(m.decode(&Tensor::zeros(&[1, 8, 8, 9])).is_err());
    }

    #[test]
    fn zero_image_code_is_relu_of_biases() {
        let mut m = build_model(
            CaeConfig {
                encoder_channels: vec![2, 3],
                input_size: 16,
                ..CaeConfig::default()
            },
            5,
        )
        .unwrap();
        m.encoder[0].bias = vec![0.5, -0.5];
        m.encoder[1].bias = vec![0.1, -0.2, 0.3];
        let code = m.encode(&Tensor::zeros(&[1, 16, 16, 1])).unwrap();
        // layer-1 output is relu(bias) = [0.5, 0] everywhere, so layer 2 sees
        // a constant input and its interior equals the bias plus that constant
        // times the kernel sum; the zero-padded border differs
        assert!(code.data().iter().all(|&v| v >= 0.0));
        let k = &m.encoder[1];
        for c in 0..3 {
            let ksum: f64 = (0..25).map(|t| k.weights.data()[(t * 2) * 3 + c] as f64).sum();
            let expect = (0.5 * ksum + k.bias[c] as f64).max(0.0) as f32;
            // interior cell (1, 1) of the 4x4 code has a full receptive field
            let got = code.data()[((1 * 4) + 1) * 3 + c];
            assert!((got - expect).abs() < 1e-5, "{got} vs {expect}");
        }
    }

    #[test]
    fn untied_has_own_weights() {
        let c = CaeConfig {
            encoder_channels: vec![3, 2],
            input_size: 16,
            tied_weights: false,
            ..CaeConfig::default()
        };
        let m = build_model(c, 2).unwrap();
        assert_eq!(m.weight_count(), 2 * 25 * (3 + 6));
        assert_eq!(m.decoder_kernel(0).shape(), &[5, 5, 3, 2]);
        assert_eq!(m.decoder_kernel(1).shape(), &[5, 5, 1, 3]);
    }
}
