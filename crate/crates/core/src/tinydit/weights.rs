use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{ModelConfig, SubModule};
use crate::error::Result;
use crate::rng;

/// Scale of the AdaLN projection relative to `1/√d`.
const ADALN_GAIN: f64 = 0.5;
/// Bias added to every gate so branches start near half strength.
const GATE_BIAS: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub sa_q: Array2<f64>,
    pub sa_k: Array2<f64>,
    pub sa_v: Array2<f64>,
    pub sa_out: Array2<f64>,
    pub ca_q: Array2<f64>,
    pub ca_k: Array2<f64>,
    pub ca_v: Array2<f64>,
    pub ca_out: Array2<f64>,
    pub mlp_in: Array2<f64>,
    pub mlp_out: Array2<f64>,
    /// Per sub-module: `d × 3d` map from the timestep embedding to
    /// `[shift | scale | gate]`.
    pub adaln: [Array2<f64>; 3],
    pub adaln_bias: [Array1<f64>; 3],
}

impl LayerWeights {
    pub fn adaln(&self, sub: SubModule) -> (&Array2<f64>, &Array1<f64>) {
        (&self.adaln[sub.index()], &self.adaln_bias[sub.index()])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub layers: Vec<LayerWeights>,
    /// `d × d` projection from the normalized final features to the noise
    /// prediction.
    pub head: Array2<f64>,
}

impl ModelWeights {
    fn tensors(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    &l.sa_q, &l.sa_k, &l.sa_v, &l.sa_out, &l.ca_q, &l.ca_k, &l.ca_v, &l.ca_out,
                    &l.mlp_in, &l.mlp_out, &l.adaln[0], &l.adaln[1], &l.adaln[2],
                ]
                .into_iter()
                .map(|m| m.as_slice().expect("standard layout"))
                .chain(l.adaln_bias.iter().map(|b| b.as_slice().expect("contiguous")))
            })
            .chain(std::iter::once(self.head.as_slice().expect("standard layout")))
    }

    /// SHA-256 over every parameter's little-endian bytes, in generation order.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for t in self.tensors() {
            for v in t {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().map(<[f64]>::len).sum()
    }
}

/// Deterministic weights: every projection entry is `N(0, 1/fan_in)`, drawn in
/// a fixed order from the stream seeded by `config.seed`.
pub fn init_model(config: &ModelConfig) -> Result<ModelWeights> {
    config.validate()?;
    let d = config.dim;
    let hidden = config.hidden();
    let mut rng = rng::stream(config.seed);
    let mut draw = |rows: usize, cols: usize, std: f64| {
        Array2::from_shape_simple_fn((rows, cols), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * std
        })
    };
    let proj = 1.0 / (d as f64).sqrt();
    let layers = (0..config.layers)
        .map(|_| {
            let sa_q = draw(d, d, proj);
            let sa_k = draw(d, d, proj);
            let sa_v = draw(d, d, proj);
            let sa_out = draw(d, d, proj);
            let ca_q = draw(d, d, proj);
            let ca_k = draw(d, d, proj);
            let ca_v = draw(d, d, proj);
            let ca_out = draw(d, d, proj);
            let mlp_in = draw(d, hidden, proj);
            let mlp_out = draw(hidden, d, 1.0 / (hidden as f64).sqrt());
            let adaln = [(); 3].map(|_| draw(d, 3 * d, ADALN_GAIN * proj));
            let adaln_bias = [(); 3].map(|_| {
                let mut b = Array1::zeros(3 * d);
                b.slice_mut(ndarray::s![2 * d..]).fill(GATE_BIAS);
                b
            });
            LayerWeights {
                sa_q,
                sa_k,
                sa_v,
                sa_out,
                ca_q,
                ca_k,
                ca_v,
                ca_out,
                mlp_in,
                mlp_out,
                adaln,
                adaln_bias,
            }
        })
        .collect();
    let head = draw(d, d, proj);
    Ok(ModelWeights { layers, head })
}
