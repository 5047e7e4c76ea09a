//! Differentiable predictors split into a feature extractor and a linear
//! head: `g(x) = w^T f(x; theta) + b`.
//!
//! The pure linear model has an empty `theta` (f is the identity). The MLP
//! variant keeps its hidden-layer weights and biases in `theta`, so the
//! transfer procedures can freeze exactly the feature extractor. `b` is the
//! post-hoc bias correction term; it starts at zero and is never touched by
//! gradient training.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const INIT_WEIGHT_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidParameter {
                name: "activation",
                reason: format!("unknown activation `{other}`"),
            }),
        }
    }
}

/// Hidden-layer layout of the MLP variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![32],
            activation: Activation::Tanh,
        }
    }
}

/// Architecture of a model, fixed at construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    Linear { input_dim: usize },
    Mlp { input_dim: usize, config: MlpConfig },
}

impl ModelSpec {
    pub fn linear(input_dim: usize) -> Self {
        ModelSpec::Linear { input_dim }
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>, activation: Activation) -> Result<Self> {
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidParameter {
                name: "layer_widths",
                reason: "MLP needs at least one nonempty hidden layer".into(),
            });
        }
        Ok(ModelSpec::Mlp {
            input_dim,
            config: MlpConfig { hidden, activation },
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ModelSpec::Linear { input_dim } | ModelSpec::Mlp { input_dim, .. } => *input_dim,
        }
    }

    /// Output width of the feature extractor (= length of the head `w`).
    pub fn feature_dim(&self) -> usize {
        match self {
            ModelSpec::Linear { input_dim } => *input_dim,
            ModelSpec::Mlp { config, .. } => *config.hidden.last().unwrap(),
        }
    }

    /// Length of the flattened feature-extractor parameter vector.
    pub fn theta_len(&self) -> usize {
        match self {
            ModelSpec::Linear { .. } => 0,
            ModelSpec::Mlp { input_dim, config } => {
                let mut len = 0;
                let mut fan_in = *input_dim;
                for &width in &config.hidden {
                    len += width * fan_in + width;
                    fan_in = width;
                }
                len
            }
        }
    }
}

/// A copy of a model's parameters, used for source snapshots and
/// frozen-theta assertions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
    pub bias_b: f64,
}

/// Gradients with respect to the model parameters, in the same flat layout.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub theta: Vec<f64>,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    theta: Vec<f64>,
    w: Vec<f64>,
    bias_b: f64,
}

impl Model {
    /// Seeded initialization: all weights N(0, 0.1), layer biases zero,
    /// correction bias zero.
    pub fn init(spec: &ModelSpec, seed: u64) -> Model {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_WEIGHT_STD).unwrap();
        let mut theta = vec![0.0; spec.theta_len()];
        if let ModelSpec::Mlp { input_dim, config } = spec {
            let mut offset = 0;
            let mut fan_in = *input_dim;
            for &width in &config.hidden {
                for t in theta.iter_mut().skip(offset).take(width * fan_in) {
                    *t = normal.sample(&mut rng);
                }
                // Bias block stays zero.
                offset += width * fan_in + width;
                fan_in = width;
            }
        }
        let w = (0..spec.feature_dim())
            .map(|_| normal.sample(&mut rng))
            .collect();
        Model {
            spec: spec.clone(),
            theta,
            w,
            bias_b: 0.0,
        }
    }

    pub fn from_params(spec: &ModelSpec, params: ModelParams) -> Result<Model> {
        if params.theta.len() != spec.theta_len() || params.w.len() != spec.feature_dim() {
            return Err(Error::ModelFormat(format!(
                "parameter counts {}/{} do not match spec {}/{}",
                params.theta.len(),
                params.w.len(),
                spec.theta_len(),
                spec.feature_dim()
            )));
        }
        Ok(Model {
            spec: spec.clone(),
            theta: params.theta,
            w: params.w,
            bias_b: params.bias_b,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn bias(&self) -> f64 {
        self.bias_b
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn w_mut(&mut self) -> &mut [f64] {
        &mut self.w
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            theta: self.theta.clone(),
            w: self.w.clone(),
            bias_b: self.bias_b,
        }
    }

    /// Sets the post-hoc correction bias, replacing any previous value.
    pub fn set_bias(&mut self, b: f64) -> Result<()> {
        if !b.is_finite() {
            return Err(Error::NonFinite { what: "bias" });
        }
        self.bias_b = b;
        Ok(())
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.spec.input_dim() {
            return Err(Error::DimensionMismatch {
                left: x.ncols(),
                right: self.spec.input_dim(),
            });
        }
        Ok(())
    }

    /// Feature extractor output `f(x; theta)`, one row per sample.
    pub fn features(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        match &self.spec {
            ModelSpec::Linear { .. } => Ok(x.to_owned()),
            ModelSpec::Mlp { .. } => {
                let (mut hs, _) = self.mlp_forward(x);
                Ok(hs.pop().unwrap())
            }
        }
    }

    /// Predictions `w^T f(x; theta) + b`.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        self.check_input(&x)?;
        let w = Array1::from_vec(self.w.clone());
        let preds = match &self.spec {
            ModelSpec::Linear { .. } => x.dot(&w),
            ModelSpec::Mlp { .. } => {
                let (hs, _) = self.mlp_forward(x);
                hs.last().unwrap().dot(&w)
            }
        };
        Ok(preds.iter().map(|p| p + self.bias_b).collect())
    }

    /// Residuals `e_i = y_i - g(x_i)`.
    pub fn residuals(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                left: y.len(),
                right: x.nrows(),
            });
        }
        let preds = self.predict(x)?;
        Ok(y.iter().zip(&preds).map(|(yi, pi)| yi - pi).collect())
    }

    /// Parameter gradients of a scalar loss given its gradient in the
    /// residuals. Uses `d e_i / d pred_i = -1`.
    pub fn backward(&self, x: ArrayView2<'_, f64>, dl_de: &[f64]) -> Result<ParamGrads> {
        self.check_input(&x)?;
        if dl_de.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                left: dl_de.len(),
                right: x.nrows(),
            });
        }
        let dl_dpred = Array1::from_iter(dl_de.iter().map(|g| -g));
        match &self.spec {
            ModelSpec::Linear { .. } => Ok(ParamGrads {
                theta: Vec::new(),
                w: x.t().dot(&dl_dpred).to_vec(),
            }),
            ModelSpec::Mlp { input_dim, config } => {
                let (hs, zs) = self.mlp_forward(x);
                let act = config.activation;
                let grad_w = hs.last().unwrap().t().dot(&dl_dpred).to_vec();

                let w = Array1::from_vec(self.w.clone());
                let last = zs.len() - 1;
                // delta_L = (dL/dpred) w^T (Hadamard) act'(Z_L)
                let mut delta = {
                    let mut d = Array2::<f64>::zeros(zs[last].raw_dim());
                    for (i, mut row) in d.axis_iter_mut(Axis(0)).enumerate() {
                        let s = dl_dpred[i];
                        for (j, cell) in row.iter_mut().enumerate() {
                            *cell = s * w[j] * act.derivative(zs[last][[i, j]]);
                        }
                    }
                    d
                };

                let mut grad_theta = vec![0.0; self.theta.len()];
                for l in (0..config.hidden.len()).rev() {
                    let (offset, out, fan_in) = self.layer_layout(*input_dim, config, l);
                    let gw = delta.t().dot(&hs[l]);
                    let gb = delta.sum_axis(Axis(0));
                    grad_theta[offset..offset + out * fan_in]
                        .copy_from_slice(gw.as_slice().expect("standard layout"));
                    grad_theta[offset + out * fan_in..offset + out * fan_in + out]
                        .copy_from_slice(gb.as_slice().expect("standard layout"));
                    if l > 0 {
                        let wl = self.layer_weights(*input_dim, config, l);
                        let mut next = delta.dot(&wl);
                        for (cell, z) in next.iter_mut().zip(zs[l - 1].iter()) {
                            *cell *= act.derivative(*z);
                        }
                        delta = next;
                    }
                }
                Ok(ParamGrads {
                    theta: grad_theta,
                    w: grad_w,
                })
            }
        }
    }

    fn layer_layout(&self, input_dim: usize, config: &MlpConfig, layer: usize) -> (usize, usize, usize) {
        let mut offset = 0;
        let mut fan_in = input_dim;
        for (l, &width) in config.hidden.iter().enumerate() {
            if l == layer {
                return (offset, width, fan_in);
            }
            offset += width * fan_in + width;
            fan_in = width;
        }
        unreachable!("layer index out of range");
    }

    fn layer_weights(
        &self,
        input_dim: usize,
        config: &MlpConfig,
        layer: usize,
    ) -> ArrayView2<'_, f64> {
        let (offset, out, fan_in) = self.layer_layout(input_dim, config, layer);
        ArrayView2::from_shape((out, fan_in), &self.theta[offset..offset + out * fan_in])
            .expect("layout")
    }

    /// Hidden activations H_0..H_L and pre-activations Z_1..Z_L.
    fn mlp_forward(&self, x: ArrayView2<'_, f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let (input_dim, config) = match &self.spec {
            ModelSpec::Mlp { input_dim, config } => (*input_dim, config),
            ModelSpec::Linear { .. } => unreachable!("mlp_forward on linear model"),
        };
        let mut hs = vec![x.to_owned()];
        let mut zs = Vec::with_capacity(config.hidden.len());
        for l in 0..config.hidden.len() {
            let (offset, out, fan_in) = self.layer_layout(input_dim, config, l);
            let wl = self.layer_weights(input_dim, config, l);
            let bias = &self.theta[offset + out * fan_in..offset + out * fan_in + out];
            let mut z = hs.last().unwrap().dot(&wl.t());
            for mut row in z.axis_iter_mut(Axis(0)) {
                for (cell, b) in row.iter_mut().zip(bias) {
                    *cell += b;
                }
            }
            let h = z.mapv(|v| config.activation.apply(v));
            zs.push(z);
            hs.push(h);
        }
        (hs, zs)
    }

    /// Writes the model as a small text file: a header describing the
    /// architecture followed by the flat parameter vectors. Floats use
    /// Rust's shortest round-trip formatting, so save/load is exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("meemodel v1\n");
        match &self.spec {
            ModelSpec::Linear { input_dim } => {
                writeln!(out, "kind=linear").unwrap();
                writeln!(out, "input_dim={input_dim}").unwrap();
            }
            ModelSpec::Mlp { input_dim, config } => {
                writeln!(out, "kind=mlp").unwrap();
                writeln!(out, "input_dim={input_dim}").unwrap();
                let widths: Vec<String> = config.hidden.iter().map(|w| w.to_string()).collect();
                writeln!(out, "hidden={}", widths.join(",")).unwrap();
                writeln!(out, "activation={}", config.activation.name()).unwrap();
            }
        }
        writeln!(out, "bias_b={}", self.bias_b).unwrap();
        writeln!(out, "w={}", join_floats(&self.w)).unwrap();
        writeln!(out, "theta={}", join_floats(&self.theta)).unwrap();
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let magic = lines.next().unwrap_or_default();
        if magic != "meemodel v1" {
            return Err(Error::ModelFormat(format!("bad header `{magic}`")));
        }
        let mut fields = std::collections::HashMap::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::ModelFormat(format!("bad line `{line}`")))?;
            fields.insert(key.to_string(), value.to_string());
        }
        let get = |key: &str| {
            fields
                .get(key)
                .ok_or_else(|| Error::ModelFormat(format!("missing field `{key}`")))
        };
        let kind = get("kind")?;
        let input_dim: usize = get("input_dim")?
            .parse()
            .map_err(|_| Error::ModelFormat("bad input_dim".into()))?;
        let spec = match kind.as_str() {
            "linear" => ModelSpec::linear(input_dim),
            "mlp" => {
                let hidden = get("hidden")?
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| Error::ModelFormat("bad hidden widths".into()))?;
                let activation = Activation::parse(get("activation")?)?;
                ModelSpec::mlp(input_dim, hidden, activation)?
            }
            other => return Err(Error::ModelFormat(format!("unknown kind `{other}`"))),
        };
        let bias_b: f64 = get("bias_b")?
            .parse()
            .map_err(|_| Error::ModelFormat("bad bias_b".into()))?;
        let w = parse_floats(get("w")?)?;
        let theta = parse_floats(get("theta")?)?;
        for v in w.iter().chain(theta.iter()) {
            if !v.is_finite() {
                return Err(Error::NonFinite { what: "parameter" });
            }
        }
        Model::from_params(&spec, ModelParams { theta, w, bias_b })
    }
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| Error::ModelFormat(format!("bad float `{tok}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn zero_linear_model_predicts_zero() {
        let spec = ModelSpec::linear(3);
        let model = Model::from_params(
            &spec,
            ModelParams {
                theta: vec![],
                w: vec![0.0; 3],
                bias_b: 0.0,
            },
        )
        .unwrap();
        let x = arr2(&[[1.0, 2.0, 3.0], [0.5, -1.0, 0.0]]);
        assert_eq!(model.predict(x.view()).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn true_weights_give_zero_residuals_on_clean_data() {
        let w_true = vec![0.3, -0.7, 1.1];
        let spec = ModelSpec::linear(3);
        let model = Model::from_params(
            &spec,
            ModelParams {
                theta: vec![],
                w: w_true.clone(),
                bias_b: 0.0,
            },
        )
        .unwrap();
        let x = arr2(&[[1.0, 0.0, 2.0], [0.2, -0.4, 0.9], [3.0, 1.0, -1.0]]);
        let y: Vec<f64> = x
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(&w_true).map(|(a, b)| a * b).sum())
            .collect();
        let e = model.residuals(x.view(), &y).unwrap();
        assert!(e.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn bias_shifts_every_prediction() {
        let spec = ModelSpec::linear(2);
        let mut model = Model::init(&spec, 3);
        let x = arr2(&[[0.1, 0.4], [0.9, -0.5]]);
        let base = model.predict(x.view()).unwrap();
        model.set_bias(2.0).unwrap();
        let shifted = model.predict(x.view()).unwrap();
        for (a, b) in base.iter().zip(&shifted) {
            assert!((b - a - 2.0).abs() < 1e-15);
        }
        // set_bias replaces, the last value wins; zero restores the original.
        model.set_bias(5.0).unwrap();
        model.set_bias(0.0).unwrap();
        assert_eq!(model.predict(x.view()).unwrap(), base);
        assert!(model.set_bias(f64::NAN).is_err());
    }

    #[test]
    fn zero_residual_gradient_gives_zero_param_gradients() {
        let spec = ModelSpec::mlp(3, vec![4], Activation::Tanh).unwrap();
        let model = Model::init(&spec, 11);
        let x = arr2(&[[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]);
        let g = model.backward(x.view(), &[0.0, 0.0]).unwrap();
        assert!(g.theta.iter().all(|v| *v == 0.0));
        assert!(g.w.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = Model::init(&ModelSpec::linear(3), 0);
        let x = arr2(&[[1.0, 2.0]]);
        assert!(matches!(
            model.predict(x.view()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[allow(clippy::needless_range_loop)]
    fn fd_param_grads(
        model: &Model,
        x: ndarray::ArrayView2<'_, f64>,
        y: &[f64],
        loss: &crate::losses::Loss,
    ) -> (Vec<f64>, Vec<f64>) {
        let h = 1e-5;
        let eval = |m: &Model| {
            let e = m.residuals(x, y).unwrap();
            let inputs = loss.needs_inputs().then_some(x);
            loss.value(&e, inputs).unwrap()
        };
        let mut probe = model.clone();
        let mut g_theta = vec![0.0; model.theta().len()];
        for k in 0..g_theta.len() {
            let orig = probe.theta()[k];
            probe.theta_mut()[k] = orig + h;
            let up = eval(&probe);
            probe.theta_mut()[k] = orig - h;
            let down = eval(&probe);
            probe.theta_mut()[k] = orig;
            g_theta[k] = (up - down) / (2.0 * h);
        }
        let mut g_w = vec![0.0; model.w().len()];
        for k in 0..g_w.len() {
            let orig = probe.w()[k];
            probe.w_mut()[k] = orig + h;
            let up = eval(&probe);
            probe.w_mut()[k] = orig - h;
            let down = eval(&probe);
            probe.w_mut()[k] = orig;
            g_w[k] = (up - down) / (2.0 * h);
        }
        (g_theta, g_w)
    }

    #[test]
    fn backward_matches_finite_differences_linear_mse() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let spec = ModelSpec::linear(3);
        let model = Model::init(&spec, 17);
        let x = Array2::from_shape_fn((8, 3), |_| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();

        let e = model.residuals(x.view(), &y).unwrap();
        let dl_de = crate::losses::Loss::Mse.grad_e(&e, None).unwrap();
        let analytic = model.backward(x.view(), &dl_de).unwrap();
        let (_, fd_w) = fd_param_grads(&model, x.view(), &y, &crate::losses::Loss::Mse);

        let scale = fd_w.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        for (a, b) in analytic.w.iter().zip(&fd_w) {
            assert!((a - b).abs() / scale < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn backward_matches_finite_differences_mlp() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let spec = ModelSpec::mlp(4, vec![5, 3], Activation::Tanh).unwrap();
        let model = Model::init(&spec, 23);
        let x = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();

        let loss = crate::losses::Loss::Mse;
        let e = model.residuals(x.view(), &y).unwrap();
        let dl_de = loss.grad_e(&e, None).unwrap();
        let analytic = model.backward(x.view(), &dl_de).unwrap();
        let (fd_theta, fd_w) = fd_param_grads(&model, x.view(), &y, &loss);

        let scale = fd_theta
            .iter()
            .chain(&fd_w)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-8);
        for (a, b) in analytic.theta.iter().zip(&fd_theta) {
            assert!((a - b).abs() / scale < 1e-4, "theta {a} vs {b}");
        }
        for (a, b) in analytic.w.iter().zip(&fd_w) {
            assert!((a - b).abs() / scale < 1e-4, "w {a} vs {b}");
        }
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for spec in [
            ModelSpec::linear(4),
            ModelSpec::mlp(4, vec![3, 2], Activation::Tanh).unwrap(),
        ] {
            let mut model = Model::init(&spec, 99);
            model.set_bias(0.1234567890123).unwrap();
            let path = dir.path().join("model.txt");
            model.save(&path).unwrap();
            let loaded = Model::load(&path).unwrap();
            assert_eq!(model.params(), loaded.params());
            assert_eq!(model.spec(), loaded.spec());
        }
    }

    #[test]
    fn load_rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "not a model").unwrap();
        assert!(Model::load(&path).is_err());
        std::fs::write(&path, "meemodel v1\nkind=linear\ninput_dim=2\nbias_b=0\nw=1 2 3\ntheta=\n")
            .unwrap();
        assert!(matches!(Model::load(&path), Err(Error::ModelFormat(_))));
    }
}
