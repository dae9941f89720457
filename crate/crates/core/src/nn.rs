//! Dense networks whose activation sites reference shared activation slots.
//!
//! A slot owns one activation function (a learnable rational or a fixed
//! reference activation) and optionally a histogram of everything it was fed.
//! Several sites may point at the same slot; the slot's parameter gradient is
//! then the sum of the contributions from all of them, and an optimizer step
//! updates it once.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::distance::{self, AffineReparam, DistanceConfig};
use crate::error::{Error, Result};
use crate::fitting::ReferenceActivation;
use crate::histogram::Histogram;
use crate::matrix::Matrix;
use crate::quadrature::linspace;
use crate::rational::RationalFunction;

/// The function held by an activation slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum SlotFunction {
    Rational { function: RationalFunction },
    /// `a·g(c·x + d) + b` for a fixed reference activation `g`.
    Fixed {
        activation: ReferenceActivation,
        #[serde(default = "identity_reparam")]
        reparam: AffineReparam,
    },
}

fn identity_reparam() -> AffineReparam {
    AffineReparam::IDENTITY
}

impl From<RationalFunction> for SlotFunction {
    fn from(function: RationalFunction) -> Self {
        SlotFunction::Rational { function }
    }
}

impl From<ReferenceActivation> for SlotFunction {
    fn from(activation: ReferenceActivation) -> Self {
        SlotFunction::Fixed {
            activation,
            reparam: AffineReparam::IDENTITY,
        }
    }
}

impl SlotFunction {
    pub fn eval(&self, x: f64) -> Result<f64> {
        match self {
            SlotFunction::Rational { function } => function.eval(x),
            SlotFunction::Fixed {
                activation,
                reparam,
            } => Ok(reparam.apply(&|t| activation.eval(t), x)),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            SlotFunction::Rational { function } => function.num_params(),
            SlotFunction::Fixed { .. } => 0,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match self {
            SlotFunction::Rational { function } => function.params(),
            SlotFunction::Fixed { .. } => Vec::new(),
        }
    }

    pub fn rational(&self) -> Option<&RationalFunction> {
        match self {
            SlotFunction::Rational { function } => Some(function),
            SlotFunction::Fixed { .. } => None,
        }
    }

    /// Value and input derivative at `x`; when `grads` is given, adds
    /// `upstream · ∂f/∂θ` into it.
    fn eval_backward(&self, x: f64, upstream: f64, grads: Option<&mut [f64]>) -> Result<(f64, f64)> {
        match self {
            SlotFunction::Rational { function } => match grads {
                Some(g) => {
                    let (num, den) = g.split_at_mut(function.numerator().len());
                    function.accumulate_coeff_grads(x, upstream, num, den)
                }
                None => Ok((function.eval(x)?, function.grad_input(x)?)),
            },
            SlotFunction::Fixed {
                activation,
                reparam,
            } => {
                let t = reparam.c * x + reparam.d;
                Ok((
                    reparam.a * activation.eval(t) + reparam.b,
                    reparam.a * reparam.c * activation.derivative(t),
                ))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationSlot {
    pub function: SlotFunction,
    /// Input tracking is enabled while this is present.
    #[serde(default)]
    pub histogram: Option<Histogram>,
}

impl ActivationSlot {
    pub fn new(function: impl Into<SlotFunction>) -> Self {
        Self {
            function: function.into(),
            histogram: None,
        }
    }

    pub fn tracked(function: impl Into<SlotFunction>) -> Self {
        Self {
            function: function.into(),
            histogram: Some(Histogram::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseLayer {
    /// `out × in`.
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weights: Matrix, biases: Vec<f64>) -> Result<Self> {
        if weights.rows() != biases.len() {
            return Err(Error::Shape(format!(
                "{} output rows but {} biases",
                weights.rows(),
                biases.len()
            )));
        }
        if weights.data().iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        Ok(Self { weights, biases })
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    /// `x·Wᵀ + B` for a batch `x` (rows are samples).
    fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.outputs());
        for r in 0..x.rows() {
            let xin = x.row(r);
            let row = out.row_mut(r);
            for (o, y) in row.iter_mut().enumerate() {
                let w = self.weights.row(o);
                *y = self.biases[o] + w.iter().zip(xin).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }
}

/// Partition of activation sites into groups that share one slot.
pub type Partition = Vec<Vec<usize>>;

/// Every site gets its own slot.
pub fn per_site(sites: usize) -> Partition {
    (0..sites).map(|i| vec![i]).collect()
}

/// All sites share one slot.
pub fn all_shared(sites: usize) -> Partition {
    if sites == 0 {
        Vec::new()
    } else {
        vec![(0..sites).collect()]
    }
}

/// Layered dense network. Site `i` is the activation applied to the output
/// of layer `i`; the last layer is linear, so there are `layers − 1` sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkRepr", into = "NetworkRepr")]
pub struct NetworkSpec {
    layers: Vec<DenseLayer>,
    sites: Vec<usize>,
    slots: Vec<ActivationSlot>,
    /// Bumped on every parameter change; forward caches record it.
    version: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkRepr {
    layers: Vec<DenseLayer>,
    sites: Vec<usize>,
    slots: Vec<ActivationSlot>,
}

impl TryFrom<NetworkRepr> for NetworkSpec {
    type Error = Error;

    fn try_from(r: NetworkRepr) -> Result<Self> {
        NetworkSpec::from_parts(r.layers, r.sites, r.slots)
    }
}

impl From<NetworkSpec> for NetworkRepr {
    fn from(n: NetworkSpec) -> Self {
        NetworkRepr {
            layers: n.layers,
            sites: n.sites,
            slots: n.slots,
        }
    }
}

/// Intermediate values from [`NetworkSpec::forward`] needed by [`NetworkSpec::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    version: u64,
    /// Input to each layer.
    inputs: Vec<Matrix>,
    /// Pre-activation output of each hidden layer.
    pre: Vec<Matrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

/// Loss gradients for every parameter. `slots[k]` is summed over all sites using slot `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
    pub slots: Vec<Vec<f64>>,
}

impl Gradients {
    /// Flattened in the same order as [`NetworkSpec::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.biases);
        }
        for s in &self.slots {
            out.extend_from_slice(s);
        }
        out
    }

    fn tensors(&self) -> impl Iterator<Item = (String, &[f64])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("layers[{i}].weights"), l.weights.data()),
                    (format!("layers[{i}].biases"), l.biases.as_slice()),
                ]
            })
            .chain(
                self.slots
                    .iter()
                    .enumerate()
                    .map(|(k, s)| (format!("slots[{k}]"), s.as_slice())),
            )
    }
}

impl NetworkSpec {
    pub fn from_parts(layers: Vec<DenseLayer>, sites: Vec<usize>, slots: Vec<ActivationSlot>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Shape(format!(
                    "layer {i} has {} outputs but layer {} takes {} inputs",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        for l in &layers {
            if l.weights.rows() != l.biases.len() {
                return Err(Error::Shape("bias length differs from layer width".into()));
            }
        }
        if sites.len() != layers.len() - 1 {
            return Err(Error::Shape(format!(
                "{} layers need {} activation sites, got {}",
                layers.len(),
                layers.len() - 1,
                sites.len()
            )));
        }
        if let Some(bad) = sites.iter().find(|&&s| s >= slots.len()) {
            return Err(Error::Shape(format!("site references missing slot {bad}")));
        }
        Ok(Self {
            layers,
            sites,
            slots,
            version: 0,
        })
    }

    /// Xavier-normal weights (`std = sqrt(2 / (fan_in + fan_out))`), zero biases,
    /// and one slot per partition group, each initialized with `activation`.
    pub fn build(
        sizes: &[usize],
        partition: &Partition,
        activation: &SlotFunction,
        tracked: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape("need at least input and output sizes, all positive".into()));
        }
        let n_sites = sizes.len() - 2;
        let mut sites = vec![usize::MAX; n_sites];
        for (slot, group) in partition.iter().enumerate() {
            for &s in group {
                if s >= n_sites || sites[s] != usize::MAX {
                    return Err(Error::Config(format!("invalid partition at site {s}")));
                }
                sites[s] = slot;
            }
        }
        if sites.contains(&usize::MAX) {
            return Err(Error::Config("partition must cover every site".into()));
        }
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                let data = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
                DenseLayer::new(Matrix::from_vec(fan_out, fan_in, data)?, vec![0.0; fan_out])
            })
            .collect::<Result<Vec<_>>>()?;
        let slots = partition
            .iter()
            .map(|_| ActivationSlot {
                function: activation.clone(),
                histogram: tracked.then(Histogram::default),
            })
            .collect();
        Self::from_parts(layers, sites, slots)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn slots(&self) -> &[ActivationSlot] {
        &self.slots
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Sites using slot `k`.
    pub fn sites_of(&self, slot: usize) -> Vec<usize> {
        self.sites
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == slot)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn set_tracking(&mut self, enabled: bool) {
        for slot in &mut self.slots {
            match (enabled, slot.histogram.is_some()) {
                (true, false) => slot.histogram = Some(Histogram::default()),
                (false, true) => slot.histogram = None,
                _ => {}
            }
        }
    }

    /// Replaces the function of slot `k`.
    pub fn set_slot_function(&mut self, slot: usize, function: SlotFunction) -> Result<()> {
        let s = self
            .slots
            .get_mut(slot)
            .ok_or_else(|| Error::Shape(format!("no slot {slot}")))?;
        s.function = function;
        self.version += 1;
        Ok(())
    }

    /// Copy of the network where every site has its own (cloned) slot.
    pub fn unshared(&self) -> NetworkSpec {
        let slots = self
            .sites
            .iter()
            .map(|&s| self.slots[s].clone())
            .collect();
        NetworkSpec {
            layers: self.layers.clone(),
            sites: (0..self.sites.len()).collect(),
            slots,
            version: 0,
        }
    }

    /// Every trainable parameter: per layer weights then biases, then each slot's coefficients.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.biases);
        }
        for s in &self.slots {
            out.extend(s.function.params());
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.biases.len())
            .sum::<usize>()
            + self.slots.iter().map(|s| s.function.num_params()).sum::<usize>()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_parameters() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_parameters(),
                params.len()
            )));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weights.data().len());
            l.weights.data_mut().copy_from_slice(w);
            let (b, r) = r.split_at(l.biases.len());
            l.biases.copy_from_slice(b);
            rest = r;
        }
        for s in &mut self.slots {
            if let SlotFunction::Rational { function } = &mut s.function {
                let (p, r) = rest.split_at(function.num_params());
                function.set_params(p)?;
                rest = r;
            }
        }
        self.version += 1;
        Ok(())
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_size() {
            return Err(Error::Shape(format!(
                "batch has {} columns, network takes {}",
                batch.cols(),
                self.input_size()
            )));
        }
        Ok(())
    }

    fn activate(&self, site: usize, z: &Matrix) -> Result<Matrix> {
        let f = &self.slots[self.sites[site]].function;
        let mut out = z.clone();
        for v in out.data_mut() {
            *v = f.eval(*v)?;
        }
        Ok(out)
    }

    /// Evaluates the network without recording inputs or keeping a cache.
    pub fn predict(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&x);
            x = if i < self.sites.len() { self.activate(i, &z)? } else { z };
        }
        Ok(x)
    }

    /// Forward pass keeping what [`backward`](Self::backward) needs. Slots with a
    /// histogram record every pre-activation value routed through them.
    pub fn forward(&mut self, batch: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.sites.len());
        let mut x = batch.clone();
        for i in 0..self.layers.len() {
            let z = self.layers[i].apply(&x);
            inputs.push(x);
            if i < self.sites.len() {
                if let Some(h) = self.slots[self.sites[i]].histogram.as_mut() {
                    h.observe_all(z.data());
                }
                x = self.activate(i, &z)?;
                pre.push(z);
            } else {
                x = z;
            }
        }
        Ok((
            x,
            ForwardCache {
                version: self.version,
                inputs,
                pre,
            },
        ))
    }

    /// Reverse pass from `dL/d(output)`.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: &Matrix) -> Result<Gradients> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        let batch = cache.inputs[0].rows();
        if loss_grad.rows() != batch || loss_grad.cols() != self.output_size() {
            return Err(Error::Shape("loss gradient does not match the output".into()));
        }

        let mut layer_grads: Vec<LayerGrad> = self
            .layers
            .iter()
            .map(|l| LayerGrad {
                weights: Matrix::zeros(l.outputs(), l.inputs()),
                biases: vec![0.0; l.outputs()],
            })
            .collect();
        let mut slot_grads: Vec<Vec<f64>> = self
            .slots
            .iter()
            .map(|s| vec![0.0; s.function.num_params()])
            .collect();

        let mut delta = loss_grad.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &cache.inputs[i];
            let g = &mut layer_grads[i];
            for r in 0..batch {
                let d = delta.row(r);
                let x = input.row(r);
                for (o, &dv) in d.iter().enumerate() {
                    g.biases[o] += dv;
                    if dv != 0.0 {
                        for (gw, xv) in g.weights.row_mut(o).iter_mut().zip(x) {
                            *gw += dv * xv;
                        }
                    }
                }
            }
            if i == 0 {
                break;
            }

            // dL/d(activation output of site i-1) = delta · W
            let mut upstream = Matrix::zeros(batch, layer.inputs());
            for r in 0..batch {
                let d = delta.row(r);
                let up = upstream.row_mut(r);
                for (o, &dv) in d.iter().enumerate() {
                    if dv != 0.0 {
                        for (u, w) in up.iter_mut().zip(layer.weights.row(o)) {
                            *u += dv * w;
                        }
                    }
                }
            }

            let site = i - 1;
            let slot = self.sites[site];
            let f = &self.slots[slot].function;
            let z = &cache.pre[site];
            let sg = &mut slot_grads[slot];
            let mut next = Matrix::zeros(batch, layer.inputs());
            for ((n, &u), &zv) in next.data_mut().iter_mut().zip(upstream.data()).zip(z.data()) {
                let grads = if sg.is_empty() { None } else { Some(sg.as_mut_slice()) };
                let (_, dx) = f.eval_backward(zv, u, grads)?;
                *n = u * dx;
            }
            delta = next;
        }
        Ok(Gradients {
            layers: layer_grads,
            slots: slot_grads,
        })
    }

    /// Applies one optimizer update. Each slot is updated once, whatever its site count.
    pub fn step(&mut self, grads: &Gradients, opt: &mut Optimizer) -> Result<()> {
        if grads.layers.len() != self.layers.len() || grads.slots.len() != self.slots.len() {
            return Err(Error::Shape("gradients do not match the network".into()));
        }
        for (path, g) in grads.tensors() {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    path: format!("{path}[{i}]"),
                });
            }
        }
        opt.begin_step();
        let mut idx = 0;
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            if l.weights.data().len() != g.weights.data().len() || l.biases.len() != g.biases.len() {
                return Err(Error::Shape("layer gradient shape".into()));
            }
            opt.update(idx, l.weights.data_mut(), g.weights.data());
            opt.update(idx + 1, &mut l.biases, &g.biases);
            idx += 2;
        }
        for (s, g) in self.slots.iter_mut().zip(&grads.slots) {
            if let SlotFunction::Rational { function } = &mut s.function {
                if g.len() != function.num_params() {
                    return Err(Error::Shape("slot gradient length".into()));
                }
                let mut p = function.params();
                opt.update(idx, &mut p, g);
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("slots[{idx}] after update")));
                }
                function.set_params(&p)?;
            }
            idx += 1;
        }
        self.version += 1;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.01,
            momentum: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(Error::Config("momentum and betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// SGD with momentum or Adam, with per-tensor state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: TrainConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    t: i32,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            first: Vec::new(),
            second: Vec::new(),
            t: 0,
        })
    }

    fn begin_step(&mut self) {
        self.t += 1;
    }

    fn update(&mut self, tensor: usize, params: &mut [f64], grads: &[f64]) {
        while self.first.len() <= tensor {
            self.first.push(Vec::new());
            self.second.push(Vec::new());
        }
        let m = &mut self.first[tensor];
        if m.len() != params.len() {
            *m = vec![0.0; params.len()];
        }
        let lr = self.cfg.learning_rate;
        match self.cfg.optimizer {
            OptimizerKind::Sgd => {
                let mu = self.cfg.momentum;
                for ((p, g), v) in params.iter_mut().zip(grads).zip(m.iter_mut()) {
                    *v = mu * *v + g;
                    *p -= lr * *v;
                }
            }
            OptimizerKind::Adam => {
                let v = &mut self.second[tensor];
                if v.len() != params.len() {
                    *v = vec![0.0; params.len()];
                }
                let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
                let c1 = 1.0 - b1.powi(self.t);
                let c2 = 1.0 - b2.powi(self.t);
                for (((p, g), m), v) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
                }
            }
        }
    }
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape("one label per row".into()));
    }
    let n = labels.len().max(1) as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= logits.cols() {
            return Err(Error::Shape(format!("label {label} out of range")));
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            let p = (row[c] - log_z).exp();
            *g = (p - if c == label { 1.0 } else { 0.0 }) / n;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(format!("cross-entropy {loss}")));
    }
    Ok((loss / n, grad))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Labelled feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape("one label per feature row".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Reads rows of the form `label,f1,f2,...` (no header).
    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let mut fields = record.iter();
            let label = fields
                .next()
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::Config(format!("row {}: bad label", line + 1)))?;
            let feats = fields
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("row {}: {e}", line + 1)))?;
            if feats.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("row {} features", line + 1)));
            }
            labels.push(label);
            rows.push(feats);
        }
        Self::new(Matrix::from_rows(&rows)?, labels)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (r, label) in self.labels.iter().enumerate() {
            let _ = write!(out, "{label}");
            for v in self.features.row(r) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn accuracy(net: &NetworkSpec, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let out = net.predict(&data.features)?;
    let correct = (0..data.len())
        .filter(|&r| argmax(out.row(r)) == data.labels[r])
        .count();
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Mini-batch cross-entropy training. The returned history starts with the
/// accuracies before training (epoch 0) and has one entry per epoch after that.
pub fn train_classifier(
    mut net: NetworkSpec,
    train: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(NetworkSpec, Vec<EpochStats>)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut opt = Optimizer::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let test_acc = |net: &NetworkSpec| test.map(|t| accuracy(net, t)).transpose();

    let mut history = vec![EpochStats {
        epoch: 0,
        train_loss: None,
        train_accuracy: accuracy(&net, train)?,
        test_accuracy: test_acc(&net)?,
    }];
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = train.features.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let (logits, cache) = net.forward(&x)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &y)?;
            loss_sum += loss * chunk.len() as f64;
            let grads = net.backward(&cache, &grad)?;
            net.step(&grads, &mut opt)?;
        }
        history.push(EpochStats {
            epoch,
            train_loss: Some(loss_sum / train.len() as f64),
            train_accuracy: accuracy(&net, train)?,
            test_accuracy: test_acc(&net)?,
        });
        log::debug!("epoch {epoch}: {:?}", history.last());
    }
    Ok((net, history))
}

/// Replaces the activation `f1` at `site` by `f2`, where `f1(x) = a·f2(c·x + d) + b`,
/// and folds the affine maps into the neighbouring layers:
/// `W_i ← c·W_i`, `B_i ← c·B_i + d`, `W_{i+1} ← a·W_{i+1}`, `B_{i+1} ← B_{i+1} + b·W_{i+1}·1`.
///
/// If the site's slot is shared with other sites, the site is moved to a new slot.
pub fn apply_affine_equivalence(
    net: &NetworkSpec,
    site: usize,
    rp: &AffineReparam,
    f2: SlotFunction,
) -> Result<NetworkSpec> {
    if site >= net.sites.len() {
        return Err(Error::Unsupported(format!(
            "site {site} has no following layer to absorb the reparameterization"
        )));
    }
    if !rp.is_finite() {
        return Err(Error::NonFinite("reparameterization".into()));
    }
    let mut out = net.clone();

    let before = &mut out.layers[site];
    for w in before.weights.data_mut() {
        *w *= rp.c;
    }
    for b in &mut before.biases {
        *b = rp.c * *b + rp.d;
    }

    let after = &mut out.layers[site + 1];
    for o in 0..after.outputs() {
        let row = after.weights.row_mut(o);
        let row_sum: f64 = row.iter().sum();
        after.biases[o] += rp.b * row_sum;
        for w in row.iter_mut() {
            *w *= rp.a;
        }
    }

    let slot = out.sites[site];
    if out.sites.iter().filter(|&&s| s == slot).count() == 1 {
        out.slots[slot].function = f2;
    } else {
        let histogram = out.slots[slot].histogram.as_ref().map(|h| {
            let mut fresh = h.clone();
            fresh.clear();
            fresh
        });
        out.slots.push(ActivationSlot {
            function: f2,
            histogram,
        });
        out.sites[site] = out.slots.len() - 1;
    }
    out.version += 1;
    Ok(out)
}

/// Symmetrized density-weighted neural distance between every pair of slots.
///
/// Entry `(i, j)` weights the integrand by the normalized merged histogram of
/// slots `i` and `j`, restricted to the configured domain.
pub fn pairwise_layer_distances(net: &NetworkSpec, cfg: &DistanceConfig) -> Result<Vec<Vec<f64>>> {
    let k = net.slots.len();
    for slot in &net.slots {
        match &slot.histogram {
            Some(h) if h.in_range() > 0 => {}
            _ => return Err(Error::EmptyHistogram),
        }
    }
    let mut out = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let mut merged = net.slots[i].histogram.clone().expect("checked above");
            merged.merge(net.slots[j].histogram.as_ref().expect("checked above"))?;
            let density = merged
                .density()?
                .normalized_on(cfg.domain.0, cfg.domain.1, cfg.quad_points)?;
            let fi = &net.slots[i].function;
            let fj = &net.slots[j].function;
            let f1 = |x: f64| fi.eval(x).unwrap_or(f64::NAN);
            let f2 = |x: f64| fj.eval(x).unwrap_or(f64::NAN);
            let v = distance::rnd_sym(&f1, &f2, &density, cfg)?;
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    Ok(out)
}

/// Groups consecutive layers for weight sharing: layer `i` joins the current
/// group when its distance to every member is at most `threshold`.
pub fn suggest_sharing(distances: &[Vec<f64>], threshold: f64) -> Result<Partition> {
    let n = distances.len();
    if distances.iter().any(|row| row.len() != n) {
        return Err(Error::Shape("distance matrix must be square".into()));
    }
    let mut groups: Partition = Vec::new();
    for i in 0..n {
        match groups.last_mut() {
            Some(group) if group.iter().all(|&j| distances[i][j] <= threshold) => group.push(i),
            _ => groups.push(vec![i]),
        }
    }
    Ok(groups)
}

/// Formats with six significant digits, printed in shortest form.
pub fn format_sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        "0".to_string()
    } else {
        rounded.to_string()
    }
}

/// CSV profile of a slot: header `x,value,density`, `points` samples on `[lo, hi]`.
/// The density column is the slot's normalized input histogram (0 without one).
pub fn profile_csv(slot: &ActivationSlot, domain: (f64, f64), points: usize) -> Result<String> {
    let density = match &slot.histogram {
        Some(h) if h.in_range() > 0 => Some(h.density()?),
        _ => None,
    };
    let mut out = String::from("x,value,density\n");
    for x in linspace(domain.0, domain.1, points) {
        let v = slot.function.eval(x)?;
        let rho = density.as_ref().map_or(0.0, |d| d.at(x));
        let _ = writeln!(out, "{},{},{}", format_sig6(x), format_sig6(v), format_sig6(rho));
    }
    Ok(out)
}
