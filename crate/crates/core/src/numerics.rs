//! Dense neural-network substrate: MLP forward/backward passes, the AdamW
//! optimizer with decoupled weight decay, and a stepwise learning-rate
//! schedule. Used by the diffusion denoiser and by the MLP baseline
//! regressor. All arithmetic is `f64`; single-sample and batched paths share
//! the same layer definitions.

use crate::error::{Error, Result};
use crate::rng::Seed;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

/// Per-layer nonlinearity. Hidden layers default to ReLU, the output layer
/// to Linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Linear => z,
        }
    }

    /// Derivative evaluated at the pre-activation. ReLU uses the subgradient
    /// 0 at the kink.
    #[inline]
    fn grad(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// One dense layer: row-major weights of shape `(out_dim, in_dim)` plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

/// Full parameter set of a feed-forward network. Consecutive layer
/// dimensions chain and every entry is finite; both are checked on
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<DenseLayer>,
}

/// Gradients shaped exactly like [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl MlpGradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGradients {
            layers: params
                .layers
                .iter()
                .map(|l| {
                    (
                        Array2::zeros(l.weights.raw_dim()),
                        Array1::zeros(l.bias.raw_dim()),
                    )
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite()))
    }
}

/// Intermediate values of a batched forward pass, reused by backprop.
pub struct ForwardCache {
    /// Layer inputs: `activations[0]` is the batch input, `activations[l+1]`
    /// the output of layer `l`.
    activations: Vec<Array2<f64>>,
    /// Pre-activation values per layer.
    pre_activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("non-empty cache")
    }
}

impl MlpParams {
    /// Build from explicit layers, validating the dimension chain and
    /// finiteness.
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].out_dim() != w[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer output {} does not chain into next layer input {}",
                    w[0].out_dim(),
                    w[1].in_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Shape(format!(
                    "layer {i}: bias length {} != out_dim {}",
                    l.bias.len(),
                    l.out_dim()
                )));
            }
            let finite = l.weights.iter().all(|v| v.is_finite())
                && l.bias.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        Ok(MlpParams { layers })
    }

    /// Glorot-uniform initialization: weights uniform in
    /// `±sqrt(6/(fan_in+fan_out))`, zero biases. Hidden layers ReLU, output
    /// linear.
    pub fn init(dims: &[usize], seed: Seed) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(
                "need at least input and output dimensions".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        let mut rng = seed.rng();
        let n_layers = dims.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights = Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.gen_range(-bound..bound)
            });
            let activation = if l + 1 == n_layers {
                Activation::Linear
            } else {
                Activation::Relu
            };
            layers.push(DenseLayer {
                weights,
                bias: Array1::zeros(fan_out),
                activation,
            });
        }
        Ok(MlpParams { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input length {} != first layer in_dim {}",
                input.len(),
                self.in_dim()
            )));
        }
        let mut a: Vec<f64> = input.to_vec();
        for layer in &self.layers {
            let mut next = vec![0.0; layer.out_dim()];
            for (o, out) in next.iter_mut().enumerate() {
                let row = layer.weights.row(o);
                let mut z = layer.bias[o];
                for (w, x) in row.iter().zip(a.iter()) {
                    z += w * x;
                }
                *out = layer.activation.apply(z);
            }
            a = next;
        }
        Ok(a)
    }

    /// Single-sample reverse accumulation through the same computation as
    /// [`MlpParams::forward`]. Returns parameter gradients and the gradient
    /// with respect to the input.
    pub fn backward(
        &self,
        input: &[f64],
        upstream: &[f64],
    ) -> Result<(MlpGradients, Vec<f64>)> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input length {} != first layer in_dim {}",
                input.len(),
                self.in_dim()
            )));
        }
        if upstream.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "upstream length {} != out_dim {}",
                upstream.len(),
                self.out_dim()
            )));
        }
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).unwrap();
        let cache = self.forward_batch_cached(&x)?;
        let up = Array2::from_shape_vec((1, upstream.len()), upstream.to_vec()).unwrap();
        let (grads, dx) = self.backward_batch(&cache, &up);
        Ok((grads, dx.row(0).to_vec()))
    }

    /// Batched forward pass over rows of `inputs` (shape `batch × in_dim`),
    /// without keeping intermediates.
    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        if inputs.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "batch input width {} != first layer in_dim {}",
                inputs.ncols(),
                self.in_dim()
            )));
        }
        let mut a = inputs.dot(&self.layers[0].weights.t());
        self.finish_layer(&mut a, 0);
        for l in 1..self.layers.len() {
            a = a.dot(&self.layers[l].weights.t());
            self.finish_layer(&mut a, l);
        }
        Ok(a)
    }

    fn finish_layer(&self, z: &mut Array2<f64>, l: usize) {
        let layer = &self.layers[l];
        *z += &layer.bias;
        if layer.activation == Activation::Relu {
            z.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
        }
    }

    /// Batched forward pass keeping intermediates for backprop.
    pub fn forward_batch_cached(&self, inputs: &Array2<f64>) -> Result<ForwardCache> {
        if inputs.ncols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "batch input width {} != first layer in_dim {}",
                inputs.ncols(),
                self.in_dim()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(inputs.clone());
        for layer in &self.layers {
            let z = activations.last().unwrap().dot(&layer.weights.t()) + &layer.bias;
            let a = match layer.activation {
                Activation::Linear => z.clone(),
                Activation::Relu => z.mapv(|v| if v > 0.0 { v } else { 0.0 }),
            };
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardCache {
            activations,
            pre_activations,
        })
    }

    /// Batched reverse accumulation. `upstream` has shape `batch × out_dim`
    /// and holds `∂loss/∂output`; gradients are summed over the batch.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        upstream: &Array2<f64>,
    ) -> (MlpGradients, Array2<f64>) {
        let n_layers = self.layers.len();
        let mut grads = MlpGradients::zeros_like(self);
        let mut delta = upstream.clone();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            if layer.activation != Activation::Linear {
                let z = &cache.pre_activations[l];
                delta.zip_mut_with(z, |d, &zv| *d *= layer.activation.grad(zv));
            }
            grads.layers[l].0 = delta.t().dot(&cache.activations[l]);
            grads.layers[l].1 = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&layer.weights);
            } else {
                delta = delta.dot(&layer.weights);
                return (grads, delta);
            }
        }
        unreachable!("loop returns at l == 0")
    }
}

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Optimizer state: step counter plus first/second-moment accumulators
/// shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub step: u64,
    pub config: AdamWConfig,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
}

impl AdamWState {
    pub fn new(params: &MlpParams, config: AdamWConfig) -> Result<Self> {
        if config.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be > 0, got {}", config.lr)));
        }
        let zeros = || {
            params
                .layers
                .iter()
                .map(|l| {
                    (
                        Array2::zeros(l.weights.raw_dim()),
                        Array1::zeros(l.bias.raw_dim()),
                    )
                })
                .collect::<Vec<_>>()
        };
        Ok(AdamWState {
            step: 0,
            config,
            m: zeros(),
            v: zeros(),
        })
    }

    /// One decoupled-weight-decay update with bias-corrected moments:
    /// `p ← p − lr·m̂/(√v̂+eps) − lr·λ·p`, applied elementwise. The step
    /// counter increments first so bias correction uses `t ≥ 1`.
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpGradients) -> Result<()> {
        if grads.layers.len() != params.layers.len() {
            return Err(Error::Shape("gradient/parameter layer count".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient entries".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for l in 0..params.layers.len() {
            let (gw, gb) = &grads.layers[l];
            if gw.raw_dim() != params.layers[l].weights.raw_dim()
                || gb.raw_dim() != params.layers[l].bias.raw_dim()
            {
                return Err(Error::Shape(format!("gradient shape at layer {l}")));
            }
            update(
                params.layers[l].weights.as_slice_mut().unwrap(),
                gw.as_slice().unwrap(),
                self.m[l].0.as_slice_mut().unwrap(),
                self.v[l].0.as_slice_mut().unwrap(),
                c,
                bc1,
                bc2,
            );
            update(
                params.layers[l].bias.as_slice_mut().unwrap(),
                gb.as_slice().unwrap(),
                self.m[l].1.as_slice_mut().unwrap(),
                self.v[l].1.as_slice_mut().unwrap(),
                c,
                bc1,
                bc2,
            );
        }
        Ok(())
    }
}

fn update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    c: &AdamWConfig,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..p.len() {
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] = p[i] - c.lr * (m_hat / (v_hat.sqrt() + c.eps)) - c.lr * c.weight_decay * p[i];
    }
}

/// Stepwise-decayed learning rate: `base_lr · factor^⌊epoch/every⌋`.
pub fn lr_at_epoch(epoch: usize, base_lr: f64, decay_factor: f64, decay_every: usize) -> f64 {
    debug_assert!(decay_every >= 1);
    base_lr * decay_factor.powi((epoch / decay_every) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_layer(w: Vec<f64>, rows: usize, cols: usize, b: Vec<f64>, act: Activation) -> MlpParams {
        MlpParams::new(vec![DenseLayer {
            weights: Array2::from_shape_vec((rows, cols), w).unwrap(),
            bias: Array1::from_vec(b),
            activation: act,
        }])
        .unwrap()
    }

    #[test]
    fn forward_zero_net_gives_zero() {
        let p = single_layer(vec![0.0; 6], 2, 3, vec![0.0; 2], Activation::Relu);
        let out = p.forward(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_identity_net_passes_input_through() {
        let p = single_layer(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            3,
            3,
            vec![0.0; 3],
            Activation::Linear,
        );
        let x = [0.5, -1.25, 4.0];
        assert_eq!(p.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn forward_relu_clamps_negative_path() {
        // 1-1-1 net: hidden weight 1, bias 0, ReLU; output weight 2, bias 0.5.
        let p = MlpParams::new(vec![
            DenseLayer {
                weights: Array2::from_shape_vec((1, 1), vec![1.0]).unwrap(),
                bias: Array1::from_vec(vec![0.0]),
                activation: Activation::Relu,
            },
            DenseLayer {
                weights: Array2::from_shape_vec((1, 1), vec![2.0]).unwrap(),
                bias: Array1::from_vec(vec![0.5]),
                activation: Activation::Linear,
            },
        ])
        .unwrap();
        assert_eq!(p.forward(&[-3.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn forward_rejects_bad_input_length() {
        let p = single_layer(vec![0.0; 6], 2, 3, vec![0.0; 2], Activation::Relu);
        assert!(matches!(p.forward(&[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn new_rejects_unchained_dims() {
        let r = MlpParams::new(vec![
            DenseLayer {
                weights: Array2::zeros((2, 3)),
                bias: Array1::zeros(2),
                activation: Activation::Relu,
            },
            DenseLayer {
                weights: Array2::zeros((1, 5)),
                bias: Array1::zeros(1),
                activation: Activation::Linear,
            },
        ]);
        assert!(matches!(r, Err(Error::Shape(_))));
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let p = MlpParams::init(&[3, 4, 2], Seed::from_u64(0)).unwrap();
        let (g, dx) = p.backward(&[0.3, -0.7, 1.1], &[0.0, 0.0]).unwrap();
        for (gw, gb) in &g.layers {
            assert!(gw.iter().all(|&v| v == 0.0));
            assert!(gb.iter().all(|&v| v == 0.0));
        }
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_linear_chain_rule() {
        // Linear 1-1 net with weight w: dW = g·x, db = g, dx = g·w.
        let w = 1.7;
        let p = single_layer(vec![w], 1, 1, vec![0.25], Activation::Linear);
        let (x, g) = (0.6, -2.0);
        let (grads, dx) = p.backward(&[x], &[g]).unwrap();
        assert_eq!(grads.layers[0].0[[0, 0]], g * x);
        assert_eq!(grads.layers[0].1[0], g);
        assert_eq!(dx[0], g * w);
    }

    fn central_difference_grads(p: &MlpParams, x: &[f64], c: &[f64], h: f64) -> Vec<f64> {
        // Loss L = Σ c_i · out_i; finite differences over every parameter.
        let loss = |p: &MlpParams| -> f64 {
            p.forward(x)
                .unwrap()
                .iter()
                .zip(c)
                .map(|(o, ci)| o * ci)
                .sum()
        };
        let mut fd = Vec::new();
        for l in 0..p.layers().len() {
            let (rows, cols) = (p.layers()[l].out_dim(), p.layers()[l].in_dim());
            for r in 0..rows {
                for cc in 0..cols {
                    let mut pp = p.clone();
                    pp.layers[l].weights[[r, cc]] += h;
                    let up = loss(&pp);
                    pp.layers[l].weights[[r, cc]] -= 2.0 * h;
                    let dn = loss(&pp);
                    fd.push((up - dn) / (2.0 * h));
                }
            }
            for r in 0..rows {
                let mut pp = p.clone();
                pp.layers[l].bias[r] += h;
                let up = loss(&pp);
                pp.layers[l].bias[r] -= 2.0 * h;
                let dn = loss(&pp);
                fd.push((up - dn) / (2.0 * h));
            }
        }
        fd
    }

    fn flatten_grads(g: &MlpGradients) -> Vec<f64> {
        let mut out = Vec::new();
        for (gw, gb) in &g.layers {
            out.extend(gw.iter().copied());
            out.extend(gb.iter().copied());
        }
        out
    }

    #[test]
    fn backward_matches_central_differences() {
        use rand::Rng;
        let mut rng = Seed::from_u64(11).rng();
        for case in 0..8 {
            let dims: Vec<usize> = match case % 4 {
                0 => vec![2, 5, 1],
                1 => vec![3, 8, 8, 2],
                2 => vec![1, 4, 4, 4, 1],
                _ => vec![6, 16, 3],
            };
            let p = MlpParams::init(&dims, Seed::from_u64(100 + case)).unwrap();
            let x: Vec<f64> = (0..dims[0]).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let c: Vec<f64> = (0..*dims.last().unwrap())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let (bp, _) = p.backward(&x, &c).unwrap();
            let bp = flatten_grads(&bp);
            let fd = central_difference_grads(&p, &x, &c, 1e-5);
            let mut max_rel = 0.0f64;
            for (a, b) in bp.iter().zip(fd.iter()) {
                let scale = a.abs().max(b.abs()).max(1e-6);
                max_rel = max_rel.max((a - b).abs() / scale);
            }
            assert!(max_rel <= 1e-4, "case {case}: max rel err {max_rel}");
        }
    }

    #[test]
    fn batch_forward_matches_single() {
        let p = MlpParams::init(&[4, 7, 2], Seed::from_u64(3)).unwrap();
        let mut rng = Seed::from_u64(4).rng();
        let rows = 5;
        let x = Array2::from_shape_fn((rows, 4), |_| rng.gen_range(-2.0..2.0));
        let batch = p.forward_batch(&x).unwrap();
        for r in 0..rows {
            let single = p.forward(x.row(r).as_slice().unwrap()).unwrap();
            for c in 0..2 {
                assert!((batch[[r, c]] - single[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adamw_zero_grad_no_decay_leaves_params_unchanged() {
        let mut p = MlpParams::init(&[2, 3, 1], Seed::from_u64(5)).unwrap();
        let before = p.clone();
        let grads = MlpGradients::zeros_like(&p);
        let mut st = AdamWState::new(
            &p,
            AdamWConfig {
                weight_decay: 0.0,
                ..AdamWConfig::default()
            },
        )
        .unwrap();
        st.step(&mut p, &grads).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adamw_single_step_hand_computed() {
        // p=1, g=1, lr=0.01, β1=0.9, β2=0.999, eps=1e-8, λ=0.01, t: 0→1.
        let mut p = single_layer(vec![1.0], 1, 1, vec![0.0], Activation::Linear);
        let grads = MlpGradients {
            layers: vec![(
                Array2::from_shape_vec((1, 1), vec![1.0]).unwrap(),
                Array1::from_vec(vec![0.0]),
            )],
        };
        let cfg = AdamWConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        };
        let mut st = AdamWState::new(&p, cfg).unwrap();
        st.step(&mut p, &grads).unwrap();
        let m_hat: f64 = (0.1_f64 / 0.1) as f64;
        let v_hat: f64 = 0.001_f64 / 0.001;
        let expected = 1.0 - 0.01 * (m_hat / (v_hat.sqrt() + 1e-8)) - 0.01 * 0.01 * 1.0;
        assert!((p.layers()[0].weights[[0, 0]] - expected).abs() < 1e-12);
        assert!((expected - 0.98990).abs() < 1e-5);
    }

    #[test]
    fn adamw_zero_grad_pure_decay_identity() {
        // With g = 0 the update reduces to p' = p(1 − ηλ); exact for
        // dyadic-representable η·λ and p.
        let mut p = single_layer(vec![2.0], 1, 1, vec![4.0], Activation::Linear);
        let grads = MlpGradients::zeros_like(&p);
        let cfg = AdamWConfig {
            lr: 0.5,
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        let mut st = AdamWState::new(&p, cfg).unwrap();
        st.step(&mut p, &grads).unwrap();
        assert_eq!(p.layers()[0].weights[[0, 0]], 2.0 * (1.0 - 0.25));
        assert_eq!(p.layers()[0].bias[0], 4.0 * (1.0 - 0.25));
    }

    #[test]
    fn adamw_rejects_non_finite_grads() {
        let mut p = MlpParams::init(&[1, 1], Seed::from_u64(9)).unwrap();
        let mut grads = MlpGradients::zeros_like(&p);
        grads.layers[0].0[[0, 0]] = f64::NAN;
        let mut st = AdamWState::new(&p, AdamWConfig::default()).unwrap();
        assert!(matches!(
            st.step(&mut p, &grads),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn adamw_is_deterministic() {
        let p0 = MlpParams::init(&[3, 5, 2], Seed::from_u64(21)).unwrap();
        let mut rng = Seed::from_u64(22).rng();
        let mut grads = MlpGradients::zeros_like(&p0);
        for (gw, gb) in grads.layers.iter_mut() {
            gw.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
            gb.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        }
        let run = || {
            let mut p = p0.clone();
            let mut st = AdamWState::new(&p, AdamWConfig::default()).unwrap();
            for _ in 0..3 {
                st.step(&mut p, &grads).unwrap();
            }
            p
        };
        let (a, b) = (run(), run());
        for (la, lb) in a.layers().iter().zip(b.layers()) {
            for (x, y) in la.weights.iter().zip(lb.weights.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn lr_schedule_values() {
        assert_eq!(lr_at_epoch(0, 1e-2, 0.7, 500), 1e-2);
        assert!((lr_at_epoch(500, 1e-2, 0.7, 500) - 7e-3).abs() < 1e-15);
        assert!((lr_at_epoch(1000, 1e-2, 0.7, 500) - 4.9e-3).abs() < 1e-15);
        assert!((lr_at_epoch(999, 1e-2, 0.7, 500) - 7e-3).abs() < 1e-15);
    }

    #[test]
    fn lr_schedule_non_increasing() {
        let mut prev = f64::INFINITY;
        for e in 0..2000 {
            let lr = lr_at_epoch(e, 3e-3, 0.9, 137);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
