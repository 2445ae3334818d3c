// SPDX-License-Identifier: Apache-2.0

//! Feed-forward networks built from dense, ReLU, dropout and sigmoid layers.
//!
//! A [`Network`] can be evaluated directly on matrices or recorded onto an
//! autograd [`Graph`] for training.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::{sigmoid, Graph, Var};
use crate::data::NoiseSource;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { in_dim: usize, out_dim: usize },
    Relu,
    Dropout { drop_prob: f64 },
    Sigmoid,
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Dense { in_dim, out_dim }
    }

    pub fn dropout(drop_prob: f64) -> Self {
        LayerSpec::Dropout { drop_prob }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    /// Weight (`in × out`) and bias (`1 × out`) per dense layer, in layer order.
    params: Vec<Array2<f64>>,
    mode: Mode,
    seed: u64,
}

fn validate(spec: &[LayerSpec]) -> Result<(usize, usize)> {
    if spec.is_empty() {
        return Err(Error::Network("empty layer list".into()));
    }
    let mut width: Option<usize> = None;
    let mut input = None;
    for (i, layer) in spec.iter().enumerate() {
        match *layer {
            LayerSpec::Dense { in_dim, out_dim } => {
                if in_dim == 0 || out_dim == 0 {
                    return Err(Error::Network(format!("layer {i}: zero dense dimension")));
                }
                if let Some(w) = width {
                    if w != in_dim {
                        return Err(Error::Network(format!(
                            "layer {i}: input {in_dim} does not match previous output {w}"
                        )));
                    }
                }
                input.get_or_insert(in_dim);
                width = Some(out_dim);
            }
            LayerSpec::Dropout { drop_prob } if !(0.0..1.0).contains(&drop_prob) => {
                return Err(Error::Network(format!(
                    "layer {i}: dropout probability {drop_prob} outside [0, 1)"
                )));
            }
            _ => {}
        }
    }
    match (input, width) {
        (Some(i), Some(o)) => Ok((i, o)),
        _ => Err(Error::Network("no dense layer".into())),
    }
}

/// Builds a network with He-uniform weights and zero biases. Deterministic in `rng`.
pub fn build_mlp(spec: &[LayerSpec], rng: &mut NoiseSource) -> Result<Network> {
    validate(spec)?;
    let mut params = Vec::new();
    for layer in spec {
        if let LayerSpec::Dense { in_dim, out_dim } = *layer {
            let bound = (6.0 / in_dim as f64).sqrt();
            let w = Array2::from_shape_simple_fn((in_dim, out_dim), || {
                (2.0 * rng.uniform01() - 1.0) * bound
            });
            params.push(w);
            params.push(Array2::zeros((1, out_dim)));
        }
    }
    Ok(Network {
        layers: spec.to_vec(),
        params,
        mode: Mode::Train,
        seed: rng.seed(),
    })
}

impl Network {
    /// Network with explicit parameters, `[w0, b0, w1, b1, ...]`.
    pub fn from_params(spec: &[LayerSpec], params: Vec<Array2<f64>>) -> Result<Self> {
        validate(spec)?;
        let expected: Vec<(usize, usize)> = dense_shapes(spec);
        if params.len() != expected.len()
            || params.iter().zip(&expected).any(|(p, e)| p.dim() != *e)
        {
            return Err(Error::Network(
                "parameter shapes do not match the layer list".into(),
            ));
        }
        Ok(Self {
            layers: spec.to_vec(),
            params,
            mode: Mode::Eval,
            seed: 0,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match *l {
                LayerSpec::Dense { in_dim, .. } => Some(in_dim),
                _ => None,
            })
            .expect("validated network has a dense layer")
    }

    pub fn out_dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match *l {
                LayerSpec::Dense { out_dim, .. } => Some(out_dim),
                _ => None,
            })
            .expect("validated network has a dense layer")
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn has_nonlinearity(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::Relu | LayerSpec::Sigmoid))
    }

    fn check_input(&self, dim: (usize, usize)) -> Result<()> {
        if dim.1 != self.in_dim() {
            return Err(Error::shape("network input", (dim.0, self.in_dim()), dim));
        }
        Ok(())
    }

    /// Evaluates the network; dropout is active only in train mode and draws from `rng`.
    pub fn forward(
        &self,
        input: ArrayView2<'_, f64>,
        rng: &mut NoiseSource,
    ) -> Result<Array2<f64>> {
        self.check_input(input.dim())?;
        Ok(self.run(input, Some(rng)))
    }

    /// Deterministic evaluation with dropout disabled, regardless of mode.
    pub fn forward_eval(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(input.dim())?;
        Ok(self.run(input, None))
    }

    fn run(&self, input: ArrayView2<'_, f64>, mut rng: Option<&mut NoiseSource>) -> Array2<f64> {
        let mut x = input.to_owned();
        let mut p = 0;
        for layer in &self.layers {
            match *layer {
                LayerSpec::Dense { .. } => {
                    x = x.dot(&self.params[p]) + &self.params[p + 1];
                    p += 2;
                }
                LayerSpec::Relu => x.mapv_inplace(|v| v.max(0.0)),
                LayerSpec::Sigmoid => x.mapv_inplace(sigmoid),
                LayerSpec::Dropout { drop_prob } => {
                    if let (Mode::Train, Some(rng)) = (self.mode, rng.as_deref_mut()) {
                        let mask = dropout_mask(x.dim(), drop_prob, rng);
                        x *= &mask;
                    }
                }
            }
        }
        x
    }

    /// Registers parameters on `graph`; `trainable == false` records them as constants.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    graph.leaf(p.clone())
                } else {
                    graph.constant(p.clone())
                }
            })
            .collect()
    }

    /// Records the forward pass on `graph` using previously bound parameters.
    pub fn forward_graph(
        &self,
        graph: &mut Graph,
        params: &[Var],
        input: Var,
        rng: &mut NoiseSource,
    ) -> Var {
        debug_assert_eq!(params.len(), self.params.len());
        let mut x = input;
        let mut p = 0;
        for layer in &self.layers {
            x = match *layer {
                LayerSpec::Dense { .. } => {
                    let h = graph.matmul(x, params[p]);
                    let h = graph.add_bias(h, params[p + 1]);
                    p += 2;
                    h
                }
                LayerSpec::Relu => graph.relu(x),
                LayerSpec::Sigmoid => graph.sigmoid(x),
                LayerSpec::Dropout { drop_prob } => {
                    if self.mode == Mode::Train && drop_prob > 0.0 {
                        let mask = dropout_mask(graph.shape(x), drop_prob, rng);
                        let mask = graph.constant(mask);
                        graph.mul(x, mask)
                    } else {
                        x
                    }
                }
            };
        }
        x
    }

    /// SHA-256 over the little-endian parameter bytes.
    pub fn param_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for p in &self.params {
            for v in p.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.param_count() * 8);
        for p in &self.params {
            for v in p.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Writes `<stem>.bin` (little-endian f64 parameters) and `<stem>.json` (sidecar).
    pub fn save(&self, dir: &Path, stem: &str, config_hash: Option<&str>) -> Result<()> {
        let sidecar = NetworkSidecar {
            layers: self.layers.clone(),
            seed: self.seed,
            config_hash: config_hash.map(str::to_owned),
            param_count: self.param_count(),
            dtype: "f64_le".into(),
        };
        fs::write(dir.join(format!("{stem}.bin")), self.to_le_bytes())?;
        fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&sidecar)?,
        )?;
        Ok(())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let json_path = dir.join(format!("{stem}.json"));
        let sidecar: NetworkSidecar = serde_json::from_slice(&fs::read(&json_path)?)?;
        let bin_path = dir.join(format!("{stem}.bin"));
        let bytes = fs::read(&bin_path)?;
        let shapes = dense_shapes(&sidecar.layers);
        let expected: usize = shapes.iter().map(|(r, c)| r * c).sum();
        if bytes.len() != expected * 8 {
            return Err(Error::ElementCount {
                path: bin_path,
                expected,
                found: bytes.len() / 8,
            });
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
        let params = shapes
            .iter()
            .map(|&(r, c)| {
                Array2::from_shape_vec((r, c), values.by_ref().take(r * c).collect())
                    .expect("sized by shape")
            })
            .collect();
        let mut net = Network::from_params(&sidecar.layers, params)?;
        net.seed = sidecar.seed;
        Ok(net)
    }
}

fn dense_shapes(spec: &[LayerSpec]) -> Vec<(usize, usize)> {
    spec.iter()
        .filter_map(|l| match *l {
            LayerSpec::Dense { in_dim, out_dim } => Some([(in_dim, out_dim), (1, out_dim)]),
            _ => None,
        })
        .flatten()
        .collect()
}

/// Inverted dropout mask: kept units are scaled by `1 / (1 - p)`.
fn dropout_mask(dim: (usize, usize), drop_prob: f64, rng: &mut NoiseSource) -> Array2<f64> {
    let keep = 1.0 - drop_prob;
    Array2::from_shape_simple_fn(dim, || {
        if rng.uniform01() < drop_prob {
            0.0
        } else {
            1.0 / keep
        }
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSidecar {
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
    pub config_hash: Option<String>,
    pub param_count: usize,
    pub dtype: String,
}

/// Hidden widths of the standard architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub generator_hidden: usize,
    pub critic_hidden: usize,
    pub predictor_hidden: usize,
    pub dropout: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            generator_hidden: 512,
            critic_hidden: 256,
            predictor_hidden: 424,
            dropout: 0.05,
        }
    }
}

impl Architecture {
    fn two_hidden(
        input: usize,
        hidden: usize,
        output: usize,
        dropout: Option<f64>,
    ) -> Vec<LayerSpec> {
        let mut layers = vec![LayerSpec::dense(input, hidden), LayerSpec::Relu];
        layers.extend(dropout.map(LayerSpec::dropout));
        layers.extend([LayerSpec::dense(hidden, hidden), LayerSpec::Relu]);
        layers.extend(dropout.map(LayerSpec::dropout));
        layers.push(LayerSpec::dense(hidden, output));
        layers
    }

    /// Imputer network `g` (IGANI `G`, GAIN `G`, MisGAN `G_i`).
    pub fn generator(&self, d: usize) -> Vec<LayerSpec> {
        Self::two_hidden(d, self.generator_hidden, d, Some(self.dropout))
    }

    /// WGAN critic with a `d`-wide output (mean-reduced to a score).
    pub fn critic(&self, d: usize) -> Vec<LayerSpec> {
        Self::two_hidden(d, self.critic_hidden, d, None)
    }

    /// GAIN discriminator: `[v, h]` in, per-entry observation probabilities out.
    pub fn gain_discriminator(&self, d: usize) -> Vec<LayerSpec> {
        let mut layers = Self::two_hidden(2 * d, self.critic_hidden, d, None);
        layers.push(LayerSpec::Sigmoid);
        layers
    }

    /// MisGAN mask generator; the sigmoid output is used as a soft mask.
    pub fn mask_generator(&self, d: usize) -> Vec<LayerSpec> {
        let mut layers = Self::two_hidden(d, self.critic_hidden, d, None);
        layers.push(LayerSpec::Sigmoid);
        layers
    }

    /// MisGAN data generator `G_x`; sigmoid output matches min-max normalized data.
    pub fn data_generator(&self, d: usize) -> Vec<LayerSpec> {
        let mut layers = Self::two_hidden(d, self.critic_hidden, d, None);
        layers.push(LayerSpec::Sigmoid);
        layers
    }

    /// Short-term prediction network.
    pub fn predictor(&self, d: usize) -> Vec<LayerSpec> {
        Self::two_hidden(d, self.predictor_hidden, d, Some(self.dropout))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dims(spec: &[LayerSpec]) -> Vec<(usize, usize)> {
        spec.iter()
            .filter_map(|l| match *l {
                LayerSpec::Dense { in_dim, out_dim } => Some((in_dim, out_dim)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn standard_generator_layers() {
        let arch = Architecture::default();
        let g = arch.generator(214);
        assert_eq!(dims(&g), vec![(214, 512), (512, 512), (512, 214)]);
        let drops: Vec<_> = g
            .iter()
            .filter(|l| matches!(l, LayerSpec::Dropout { drop_prob } if *drop_prob == 0.05))
            .collect();
        assert_eq!(drops.len(), 2);
        assert_eq!(
            dims(&arch.generator(480)),
            vec![(480, 512), (512, 512), (512, 480)]
        );
        assert_eq!(
            dims(&arch.critic(214)),
            vec![(214, 256), (256, 256), (256, 214)]
        );
        assert_eq!(
            dims(&arch.gain_discriminator(214)),
            vec![(428, 256), (256, 256), (256, 214)]
        );
        assert_eq!(
            dims(&arch.predictor(214)),
            vec![(214, 424), (424, 424), (424, 214)]
        );
        let mut rng = NoiseSource::uniform(0);
        for spec in [arch.generator(8), arch.critic(8), arch.predictor(8)] {
            assert!(build_mlp(&spec, &mut rng).unwrap().has_nonlinearity());
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let mut rng = NoiseSource::uniform(0);
        assert!(build_mlp(&[], &mut rng).is_err());
        assert!(build_mlp(&[LayerSpec::dense(3, 4), LayerSpec::dense(5, 2)], &mut rng).is_err());
        assert!(build_mlp(&[LayerSpec::Relu], &mut rng).is_err());
        assert!(build_mlp(&[LayerSpec::dense(3, 4), LayerSpec::dropout(1.0)], &mut rng).is_err());
    }

    #[test]
    fn same_seed_builds_identical_networks() {
        let spec = Architecture::default().critic(6);
        let a = build_mlp(&spec, &mut NoiseSource::uniform(9)).unwrap();
        let b = build_mlp(&spec, &mut NoiseSource::uniform(9)).unwrap();
        assert_eq!(a.to_le_bytes(), b.to_le_bytes());
        let c = build_mlp(&spec, &mut NoiseSource::uniform(10)).unwrap();
        assert_ne!(a.param_hash(), c.param_hash());
    }

    #[test]
    fn identity_and_relu() {
        let spec = [LayerSpec::dense(2, 2)];
        let net = Network::from_params(&spec, vec![Array2::eye(2), Array2::zeros((1, 2))]).unwrap();
        let x = array![[0.3, -1.5]];
        assert_eq!(net.forward_eval(x.view()).unwrap(), x);

        let spec = [LayerSpec::dense(2, 2), LayerSpec::Relu];
        let net = Network::from_params(&spec, vec![Array2::eye(2), Array2::zeros((1, 2))]).unwrap();
        assert_eq!(
            net.forward_eval(array![[-1.0, 2.0]].view()).unwrap(),
            array![[0.0, 2.0]]
        );
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let net = build_mlp(&[LayerSpec::dense(3, 1)], &mut NoiseSource::uniform(0)).unwrap();
        assert!(net.forward_eval(Array2::zeros((2, 4)).view()).is_err());
    }

    #[test]
    fn inverted_dropout_preserves_mean() {
        let spec = [LayerSpec::dense(4, 4), LayerSpec::dropout(0.5)];
        let mut net =
            Network::from_params(&spec, vec![Array2::eye(4), Array2::zeros((1, 4))]).unwrap();
        net.set_mode(Mode::Train);
        let mut rng = NoiseSource::uniform(42);
        let out = net
            .forward(Array2::ones((100_000, 4)).view(), &mut rng)
            .unwrap();
        for j in 0..4 {
            let mean = out.column(j).mean().unwrap();
            assert!((mean - 1.0).abs() < 0.02, "unit {j}: {mean}");
        }
        net.set_mode(Mode::Eval);
        let a = net.forward(Array2::ones((3, 4)).view(), &mut rng).unwrap();
        assert_eq!(a, Array2::<f64>::ones((3, 4)));
    }

    #[test]
    fn graph_forward_matches_direct_forward() {
        let spec = Architecture {
            generator_hidden: 7,
            ..Default::default()
        }
        .generator(5);
        let mut net = build_mlp(&spec, &mut NoiseSource::uniform(3)).unwrap();
        net.set_mode(Mode::Eval);
        let x = NoiseSource::uniform(4).sample(6, 5);
        let direct = net.forward_eval(x.view()).unwrap();
        let mut g = Graph::new();
        let params = net.bind(&mut g, true);
        let input = g.constant(x);
        let out = net.forward_graph(&mut g, &params, input, &mut NoiseSource::uniform(0));
        assert_eq!(g.value(out), &direct);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = Architecture::default().gain_discriminator(3);
        let net = build_mlp(&spec, &mut NoiseSource::uniform(5)).unwrap();
        net.save(dir.path(), "disc", Some("abc")).unwrap();
        let bytes = fs::read(dir.path().join("disc.bin")).unwrap();
        assert_eq!(bytes.len(), net.param_count() * 8);
        let loaded = Network::load(dir.path(), "disc").unwrap();
        assert_eq!(loaded.params(), net.params());
        assert_eq!(loaded.layers(), net.layers());
        assert_eq!(loaded.seed(), 5);
    }
}
