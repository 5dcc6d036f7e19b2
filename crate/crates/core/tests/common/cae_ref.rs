#![allow(dead_code)]

//! Double-precision reference forward pass of the autoencoder, used to
//! check its gradients by central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urbanform::cae::{build_model, CaeConfig, CaeModel};
use urbanform::tensor::Tensor;

pub const EPS: f64 = 1e-3;
pub const TOL: f64 = 1e-3;

/// Square NHWC activation with batch 1.
#[derive(Clone)]
struct Act {
    size: usize,
    ch: usize,
    v: Vec<f64>,
}

fn same(input: usize, k: usize, s: usize) -> (usize, usize) {
    let out = input.div_ceil(s);
    let total = ((out - 1) * s + k).saturating_sub(input);
    (out, total / 2)
}

/// Cross-correlation with weights `[k, k, cin, cout]`.
fn conv(x: &Act, w: &[f64], b: &[f64], k: usize, s: usize) -> Act {
    let cout = b.len();
    let (out, pad) = same(x.size, k, s);
    let mut v = vec![0.0; out * out * cout];
    for oy in 0..out {
        for ox in 0..out {
            for co in 0..cout {
                let mut acc = b[co];
                for ky in 0..k {
                    for kx in 0..k {
                        let (iy, ix) = ((oy * s + ky) as isize - pad as isize, (ox * s + kx) as isize - pad as isize);
                        if iy < 0 || ix < 0 || iy >= x.size as isize || ix >= x.size as isize {
                            continue;
                        }
                        for ci in 0..x.ch {
                            acc += w[((ky * k + kx) * x.ch + ci) * cout + co]
                                * x.v[(iy as usize * x.size + ix as usize) * x.ch + ci];
                        }
                    }
                }
                v[(oy * out + ox) * cout + co] = acc;
            }
        }
    }
    Act { size: out, ch: cout, v }
}

/// The transpose of `conv` from `x` (conv output side) back to `size`.
fn conv_t(x: &Act, w: &[f64], b: &[f64], k: usize, s: usize, size: usize) -> Act {
    let cin = b.len();
    let (_, pad) = same(size, k, s);
    let mut v: Vec<f64> = (0..size * size * cin).map(|i| b[i % cin]).collect();
    for oy in 0..x.size {
        for ox in 0..x.size {
            for ky in 0..k {
                for kx in 0..k {
                    let (iy, ix) = ((oy * s + ky) as isize - pad as isize, (ox * s + kx) as isize - pad as isize);
                    if iy < 0 || ix < 0 || iy >= size as isize || ix >= size as isize {
                        continue;
                    }
                    for ci in 0..cin {
                        for co in 0..x.ch {
                            v[(iy as usize * size + ix as usize) * cin + ci] +=
                                w[((ky * k + kx) * cin + ci) * x.ch + co] * x.v[(oy * x.size + ox) * x.ch + co];
                        }
                    }
                }
            }
        }
    }
    Act { size, ch: cin, v }
}

fn relu(mut a: Act, mask: &mut Vec<bool>) -> Act {
    mask.extend(a.v.iter().map(|&x| x > 0.0));
    a.v.iter_mut().for_each(|x| *x = x.max(0.0));
    a
}

/// Reconstruction MSE with parameters given as slots in model order, and
/// the on/off pattern of every ReLU.
pub fn loss64(cfg: &CaeConfig, params: &[Vec<f64>], x: &[f64]) -> (f64, Vec<bool>) {
    let mut mask = Vec::new();
    let (k, s, l) = (cfg.kernel_size, cfg.stride, cfg.encoder_channels.len());
    let mut a = Act { size: cfg.input_size, ch: 1, v: x.to_vec() };
    let mut sizes = vec![a.size];
    for i in 0..l {
        a = relu(conv(&a, &params[2 * i], &params[2 * i + 1], k, s), &mut mask);
        sizes.push(a.size);
    }
    let mut slot = 2 * l;
    for i in 0..l {
        let enc = l - 1 - i;
        let w = if cfg.tied_weights {
            &params[2 * enc]
        } else {
            slot += 1;
            &params[slot - 1]
        };
        a = relu(conv_t(&a, w, &params[slot], k, s, sizes[enc]), &mut mask);
        slot += 1;
    }
    let loss = a.v.iter().zip(x).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / x.len() as f64;
    (loss, mask)
}

pub fn model(tied: bool, seed: u64) -> CaeModel {
    let cfg = CaeConfig {
        encoder_channels: vec![3, 2],
        input_size: 16,
        tied_weights: tied,
        ..Default::default()
    };
    let mut m = build_model(cfg, seed).unwrap();
    // non-zero biases keep pre-activations off the ReLU kink
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
    for k in &mut m.encoder {
        k.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
    for bs in &mut m.decoder_biases {
        bs.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
    m
}

pub fn input(seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(vec![1, 16, 16, 1], (0..256).map(|_| rng.gen::<f32>()).collect()).unwrap()
}

pub struct Report {
    pub checked: usize,
    pub failed: usize,
    /// Parameters whose ±EPS step switches some ReLU on or off, so the
    /// central difference does not estimate the derivative.
    pub straddling: usize,
    pub worst: f64,
}

pub fn check(m: &CaeModel, x: &Tensor) -> Report {
    let (loss, grads) = m.loss_and_gradients(x).unwrap();
    let mut params: Vec<Vec<f64>> = m.parameters().iter().map(|p| p.iter().map(|&v| v as f64).collect()).collect();
    let xv: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let (base, base_mask) = loss64(&m.config, &params, &xv);
    assert!((base - loss).abs() < 1e-5 * loss.max(1.0));
    let mut r = Report { checked: 0, failed: 0, straddling: 0, worst: 0.0 };
    for s in 0..params.len() {
        for j in 0..params[s].len() {
            let orig = params[s][j];
            params[s][j] = orig + EPS;
            let (up, up_mask) = loss64(&m.config, &params, &xv);
            params[s][j] = orig - EPS;
            let (down, down_mask) = loss64(&m.config, &params, &xv);
            params[s][j] = orig;
            if up_mask != base_mask || down_mask != base_mask {
                r.straddling += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * EPS);
            let analytic = grads.slots[s][j] as f64;
            let scale = numeric.abs().max(analytic.abs());
            let rel = if scale == 0.0 { 0.0 } else { (numeric - analytic).abs() / scale };
            r.worst = r.worst.max(rel);
            r.checked += 1;
            if rel > TOL {
                r.failed += 1;
            }
        }
    }
    r
}

