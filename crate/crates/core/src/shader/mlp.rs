//! Tiny fully connected networks with recorded-activation backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{cast_vec, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Logistic,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.relu(),
            Activation::Logistic => z.logistic(),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn derivative_from_output<T: Real>(self, y: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Logistic => y * (T::one() - y),
        }
    }
}

/// `y = act(W x + b)` with `W` stored row-major as `outputs x inputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Real> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Dense {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
            activation,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weight = (0..inputs * outputs)
            .map(|_| T::lit(rng.gen_range(-limit..limit)))
            .collect();
        Dense {
            inputs,
            outputs,
            weight,
            bias: vec![T::zero(); outputs],
            activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Dense::zeros(self.inputs, self.outputs, self.activation)
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.weight.len() != self.inputs * self.outputs {
            return Err(Error::dimension(
                format!("{name}.weight"),
                self.inputs * self.outputs,
                self.weight.len(),
            ));
        }
        if self.bias.len() != self.outputs {
            return Err(Error::dimension(format!("{name}.bias"), self.outputs, self.bias.len()));
        }
        if self.weight.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::invariant(name, "non-finite parameter"));
        }
        Ok(())
    }

    #[inline]
    pub fn forward(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.inputs);
        for (o, out) in y.iter_mut().enumerate().take(self.outputs) {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let mut z = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                z += *w * *xi;
            }
            *out = self.activation.apply(z);
        }
    }

    /// Accumulates parameter gradients into `grads` and, if requested,
    /// writes the gradient with respect to `x` into `gx`.
    #[inline]
    pub fn backward(&self, x: &[T], y: &[T], gy: &[T], grads: &mut Dense<T>, gx: Option<&mut [T]>) {
        let n_in = self.inputs;
        let mut gx = gx;
        if let Some(g) = gx.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
        for o in 0..self.outputs {
            let gz = gy[o] * self.activation.derivative_from_output(y[o]);
            if gz == T::zero() {
                continue;
            }
            grads.bias[o] += gz;
            let grow = &mut grads.weight[o * n_in..(o + 1) * n_in];
            for (gw, xi) in grow.iter_mut().zip(x) {
                *gw += gz * *xi;
            }
            if let Some(g) = gx.as_deref_mut() {
                let row = &self.weight[o * n_in..(o + 1) * n_in];
                for (gi, w) in g.iter_mut().zip(row) {
                    *gi += gz * *w;
                }
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Dense<U> {
        Dense {
            inputs: self.inputs,
            outputs: self.outputs,
            weight: cast_vec(&self.weight),
            bias: cast_vec(&self.bias),
            activation: self.activation,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Chain of dense layers.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

impl<T: Real> Mlp<T> {
    pub fn new(layers: Vec<Dense<T>>) -> Result<Self> {
        let mlp = Mlp { layers };
        mlp.validate("mlp")?;
        Ok(mlp)
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        for (k, l) in self.layers.iter().enumerate() {
            l.validate(&format!("{name}.l{k}"))?;
            if k > 0 && self.layers[k - 1].outputs != l.inputs {
                return Err(Error::dimension(
                    format!("{name}.l{k} input width"),
                    self.layers[k - 1].outputs,
                    l.inputs,
                ));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    /// Length of the activation record written by [`Mlp::forward_into`].
    pub fn record_len(&self, input_width: usize) -> usize {
        input_width + self.layers.iter().map(|l| l.outputs).sum::<usize>()
    }

    /// Runs the network and records every activation (input first, output
    /// last) into `acts`. An empty network passes its input through.
    pub fn forward_into(&self, input: &[T], acts: &mut Vec<T>) {
        acts.clear();
        acts.extend_from_slice(input);
        let mut start = 0;
        for l in &self.layers {
            let end = acts.len();
            acts.resize(end + l.outputs, T::zero());
            let (prev, next) = acts.split_at_mut(end);
            l.forward(&prev[start..end], next);
            start = end;
        }
    }

    pub fn forward(&self, input: &[T]) -> Vec<T> {
        let mut acts = Vec::with_capacity(self.record_len(input.len()));
        self.forward_into(input, &mut acts);
        let out = self.output_width().max(if self.layers.is_empty() { input.len() } else { 0 });
        acts[acts.len() - out..].to_vec()
    }

    /// Output slice of an activation record.
    pub fn output_of<'a>(&self, acts: &'a [T]) -> &'a [T] {
        let w = if self.layers.is_empty() {
            acts.len()
        } else {
            self.output_width()
        };
        &acts[acts.len() - w..]
    }

    /// Backpropagates `grad_out` through a record produced by
    /// [`Mlp::forward_into`]. Parameter gradients accumulate into `grads`;
    /// the input gradient is written to `grad_input`.
    pub fn backward(
        &self,
        acts: &[T],
        grad_out: &[T],
        grads: &mut Mlp<T>,
        grad_input: &mut Vec<T>,
        scratch: &mut Vec<T>,
    ) {
        if self.layers.is_empty() {
            grad_input.clear();
            grad_input.extend_from_slice(grad_out);
            return;
        }
        // Offsets of each layer's input inside `acts`.
        let mut offsets = Vec::with_capacity(self.layers.len() + 1);
        let mut off = 0;
        offsets.push(0);
        let input_width = self.layers[0].inputs;
        off += input_width;
        offsets.push(off);
        for l in &self.layers[..self.layers.len() - 1] {
            off += l.outputs;
            offsets.push(off);
        }

        scratch.clear();
        scratch.extend_from_slice(grad_out);
        for (k, l) in self.layers.iter().enumerate().rev() {
            let x = &acts[offsets[k]..offsets[k] + l.inputs];
            let y = &acts[offsets[k + 1]..offsets[k + 1] + l.outputs];
            grad_input.clear();
            grad_input.resize(l.inputs, T::zero());
            l.backward(x, y, scratch, &mut grads.layers[k], Some(grad_input));
            std::mem::swap(scratch, grad_input);
        }
        std::mem::swap(scratch, grad_input);
    }

    pub fn add_assign(&mut self, other: &Mlp<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += *y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += *y);
        }
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self.layers.iter().map(Dense::cast).collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Dense::parameter_count).sum()
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
        for (k, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.l{k}.weight"), &l.weight));
            out.push((format!("{prefix}.l{k}.bias"), &l.bias));
        }
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        for (k, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("{prefix}.l{k}.weight"), &mut l.weight));
            out.push((format!("{prefix}.l{k}.bias"), &mut l.bias));
        }
    }
}

/// Skybox shader: a trunk over the feature, a view-independent opacity head
/// on the trunk output, and a color head over `trunk ⊕ encode(d)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundMlp<T> {
    pub trunk: Mlp<T>,
    pub opacity: Dense<T>,
    pub color: Mlp<T>,
}

impl<T: Real> BackgroundMlp<T> {
    pub fn zeros_like(&self) -> Self {
        BackgroundMlp {
            trunk: self.trunk.zeros_like(),
            opacity: self.opacity.zeros_like(),
            color: self.color.zeros_like(),
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        self.trunk.validate(&format!("{name}.trunk"))?;
        self.opacity.validate(&format!("{name}.opacity"))?;
        self.color.validate(&format!("{name}.color"))?;
        if self.opacity.outputs != 1 {
            return Err(Error::dimension(format!("{name}.opacity outputs"), 1, self.opacity.outputs));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &BackgroundMlp<T>) {
        self.trunk.add_assign(&other.trunk);
        self.color.add_assign(&other.color);
        let (a, b) = (&mut self.opacity, &other.opacity);
        a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += *y);
        a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += *y);
    }

    pub fn cast<U: Real>(&self) -> BackgroundMlp<U> {
        BackgroundMlp {
            trunk: self.trunk.cast(),
            opacity: self.opacity.cast(),
            color: self.color.cast(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.trunk.parameter_count() + self.opacity.parameter_count() + self.color.parameter_count()
    }

    pub fn tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a [T])>) {
        self.trunk.tensors(&format!("{prefix}.trunk"), out);
        out.push((format!("{prefix}.opacity.weight"), &self.opacity.weight));
        out.push((format!("{prefix}.opacity.bias"), &self.opacity.bias));
        self.color.tensors(&format!("{prefix}.color"), out);
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [T])>) {
        self.trunk.tensors_mut(&format!("{prefix}.trunk"), out);
        out.push((format!("{prefix}.opacity.weight"), &mut self.opacity.weight));
        out.push((format!("{prefix}.opacity.bias"), &mut self.opacity.bias));
        self.color.tensors_mut(&format!("{prefix}.color"), out);
    }
}

/// How the view direction enters the shaders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ViewEncoding {
    #[default]
    Raw,
    /// `d` followed by `sin(2^k π d), cos(2^k π d)` for `k < bands`.
    Frequency { bands: usize },
}

impl ViewEncoding {
    pub fn width(self) -> usize {
        match self {
            ViewEncoding::Raw => 3,
            ViewEncoding::Frequency { bands } => 3 + 6 * bands,
        }
    }

    #[inline]
    pub fn encode<T: Real>(self, d: [T; 3], out: &mut Vec<T>) {
        out.extend_from_slice(&d);
        if let ViewEncoding::Frequency { bands } = self {
            let pi = T::lit(std::f64::consts::PI);
            for k in 0..bands {
                let s = T::lit((1u64 << k) as f64) * pi;
                for &c in &d {
                    out.push((s * c).sin());
                }
                for &c in &d {
                    out.push((s * c).cos());
                }
            }
        }
    }
}

/// Layer widths shared by both shaders.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShaderArch {
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    pub view_encoding: ViewEncoding,
}

impl ShaderArch {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::invariant("shader.feature_dim", "must be > 0"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invariant(
                "shader.hidden",
                "at least one non-empty hidden layer is required",
            ));
        }
        Ok(())
    }

    fn trunk_width(&self) -> usize {
        let n = self.hidden.len();
        if n >= 2 {
            self.hidden[n - 2]
        } else {
            self.feature_dim
        }
    }

    /// `D + enc -> hidden.. -> 3`, ReLU hidden units, logistic output.
    pub fn foreground<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Mlp<T> {
        let mut layers = Vec::new();
        let mut width = self.feature_dim + self.view_encoding.width();
        for &h in &self.hidden {
            layers.push(Dense::init(width, h, Activation::Relu, rng));
            width = h;
        }
        layers.push(Dense::init(width, 3, Activation::Logistic, rng));
        Mlp { layers }
    }

    /// Trunk gets all hidden layers but the last; the color head gets the last.
    pub fn background<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> BackgroundMlp<T> {
        let n = self.hidden.len();
        let mut trunk = Vec::new();
        let mut width = self.feature_dim;
        for &h in &self.hidden[..n - 1] {
            trunk.push(Dense::init(width, h, Activation::Relu, rng));
            width = h;
        }
        let tw = self.trunk_width();
        let opacity = Dense::init(tw, 1, Activation::Logistic, rng);
        let last = self.hidden[n - 1];
        let color = vec![
            Dense::init(tw + self.view_encoding.width(), last, Activation::Relu, rng),
            Dense::init(last, 3, Activation::Logistic, rng),
        ];
        BackgroundMlp {
            trunk: Mlp { layers: trunk },
            opacity,
            color: Mlp { layers: color },
        }
    }

    /// Checks that both networks have the shapes this architecture implies.
    pub fn check<T: Real>(&self, fg: &Mlp<T>, bg: &BackgroundMlp<T>) -> Result<()> {
        fn sig<U: Real>(layers: &[Dense<U>]) -> Vec<(usize, usize, Activation)> {
            layers.iter().map(|l| (l.inputs, l.outputs, l.activation)).collect()
        }
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let want_fg: Mlp<f64> = self.foreground(&mut rng);
        let want_bg: BackgroundMlp<f64> = self.background(&mut rng);
        let pairs = [
            ("mlp_fg", sig(&want_fg.layers), sig(&fg.layers)),
            ("mlp_sky.trunk", sig(&want_bg.trunk.layers), sig(&bg.trunk.layers)),
            (
                "mlp_sky.opacity",
                sig(std::slice::from_ref(&want_bg.opacity)),
                sig(std::slice::from_ref(&bg.opacity)),
            ),
            ("mlp_sky.color", sig(&want_bg.color.layers), sig(&bg.color.layers)),
        ];
        for (name, want, got) in pairs {
            if want != got {
                return Err(Error::invariant(name, format!("expected layers {want:?}, found {got:?}")));
            }
        }
        fg.validate("mlp_fg")?;
        bg.validate("mlp_sky")
    }
}
