//! Minimal dense feed-forward networks.
//!
//! Parameters live in one flat vector, layer by layer: the `fan_out × fan_in`
//! weight matrix in row-major order followed by the `fan_out` biases.
//! [`stacked_jacobian`] returns the exact per-sample output Jacobians by
//! running one reverse pass per (sample, output) pair.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::{Error, Result};

/// Flat vector of all weights and biases.
pub type ParamVector = DVector<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            // written so that NaN passes through instead of being clamped
            Activation::Relu => {
                if z < 0.0 {
                    0.0
                } else {
                    z
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative with the ReLU subgradient at zero fixed to 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Shape of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Index of the first weight of this layer.
    pub offset: usize,
    pub activation: Activation,
}

impl Layer {
    pub fn bias_offset(&self) -> usize {
        self.offset + self.fan_in * self.fan_out
    }

    pub fn param_len(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

/// Architecture of a multi-layer perceptron.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    widths: Vec<usize>,
    activations: Vec<Activation>,
}

impl MlpSpec {
    /// Builds a network whose hidden layers use `hidden` and whose output layer is linear.
    pub fn new(widths: Vec<usize>, hidden: Activation) -> Result<Self> {
        let layers = widths.len().saturating_sub(1);
        let mut activations = vec![hidden; layers];
        if let Some(last) = activations.last_mut() {
            *last = Activation::Identity;
        }
        Self::with_activations(widths, activations)
    }

    pub fn with_activations(widths: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "an MLP needs at least an input and an output width, got {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "all layer widths must be positive, got {widths:?}"
            )));
        }
        if activations.len() != widths.len() - 1 {
            return Err(Error::mismatch(
                "MlpSpec activations",
                widths.len() - 1,
                activations.len(),
            ));
        }
        Ok(Self {
            widths,
            activations,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated at construction")
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn layers(&self) -> Vec<Layer> {
        let mut offset = 0;
        self.widths
            .windows(2)
            .zip(&self.activations)
            .map(|(pair, &activation)| {
                let layer = Layer {
                    fan_in: pair[0],
                    fan_out: pair[1],
                    offset,
                    activation,
                };
                offset += layer.param_len();
                layer
            })
            .collect()
    }
}

/// He-style uniform initialization: weights from `U(-√(6/fan_in), √(6/fan_in))`, zero biases.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = DVector::zeros(spec.param_count());
    for layer in spec.layers() {
        let bound = (6.0 / layer.fan_in as f64).sqrt();
        for v in &mut w.as_mut_slice()[layer.offset..layer.bias_offset()] {
            *v = rng.random_range(-bound..bound);
        }
    }
    w
}

/// A mini-batch of `b` feature rows and their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: DMatrix<f64>,
    targets: DMatrix<f64>,
}

impl Batch {
    pub fn new(features: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::InvalidArgument("a batch needs at least one sample".into()));
        }
        if features.nrows() != targets.nrows() {
            return Err(Error::mismatch(
                "Batch rows",
                features.nrows(),
                targets.nrows(),
            ));
        }
        Ok(Self { features, targets })
    }

    pub fn size(&self) -> usize {
        self.features.nrows()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }
}

/// Stacked per-sample Jacobians `J ∈ ℝ^{(b·c) × d}`.
///
/// Rows `[i·c, (i+1)·c)` hold `∂Φ(xᵢ; w)/∂w`. The matrix is stored transposed
/// (`d × bc`, column-major) so every row of `J` is one contiguous column.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedJacobian {
    transposed: DMatrix<f64>,
    outputs: usize,
}

impl StackedJacobian {
    pub fn from_transposed(transposed: DMatrix<f64>, outputs_per_sample: usize) -> Result<Self> {
        if outputs_per_sample == 0 || !transposed.ncols().is_multiple_of(outputs_per_sample) {
            return Err(Error::mismatch(
                "StackedJacobian rows",
                format!("a multiple of {outputs_per_sample}"),
                transposed.ncols(),
            ));
        }
        Ok(Self {
            transposed,
            outputs: outputs_per_sample,
        })
    }

    /// Builds from the `(b·c) × d` row layout.
    pub fn from_matrix(matrix: &DMatrix<f64>, outputs_per_sample: usize) -> Result<Self> {
        Self::from_transposed(matrix.transpose(), outputs_per_sample)
    }

    /// Number of rows `b·c`.
    pub fn rows(&self) -> usize {
        self.transposed.ncols()
    }

    /// Number of parameters `d`.
    pub fn params(&self) -> usize {
        self.transposed.nrows()
    }

    pub fn outputs_per_sample(&self) -> usize {
        self.outputs
    }

    pub fn samples(&self) -> usize {
        self.rows() / self.outputs
    }

    /// `Jᵀ` as a `d × bc` matrix.
    pub fn transposed(&self) -> &DMatrix<f64> {
        &self.transposed
    }

    /// `J` in its natural `(b·c) × d` layout (copies).
    pub fn to_matrix(&self) -> DMatrix<f64> {
        self.transposed.transpose()
    }

    /// `J v`.
    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        self.transposed.tr_mul(v)
    }

    /// `Jᵀ u`.
    pub fn tr_mul_vec(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.transposed * u
    }

    /// `J Jᵀ`, the `bc × bc` Gram matrix.
    pub fn gram(&self) -> DMatrix<f64> {
        linalg::gram(&self.transposed)
    }

    pub fn is_finite(&self) -> bool {
        linalg::all_finite(self.transposed.as_slice())
    }
}

/// Anything that maps `(w, X)` to outputs and can differentiate that map.
pub trait Model {
    fn param_count(&self) -> usize;
    fn output_width(&self) -> usize;
    fn forward(&self, w: &ParamVector, x: &DMatrix<f64>) -> Result<DMatrix<f64>>;
    fn forward_with_jacobian(
        &self,
        w: &ParamVector,
        x: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, StackedJacobian)>;
    /// `Σᵢ J_{Φᵢ}ᵀ uᵢ` for a `b × c` cotangent `u`.
    fn vjp(&self, w: &ParamVector, x: &DMatrix<f64>, cotangent: &DMatrix<f64>)
        -> Result<DVector<f64>>;
}

impl Model for MlpSpec {
    fn param_count(&self) -> usize {
        MlpSpec::param_count(self)
    }

    fn output_width(&self) -> usize {
        MlpSpec::output_width(self)
    }

    fn forward(&self, w: &ParamVector, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        forward(self, w, x)
    }

    fn forward_with_jacobian(
        &self,
        w: &ParamVector,
        x: &DMatrix<f64>,
    ) -> Result<(DMatrix<f64>, StackedJacobian)> {
        forward_with_jacobian(self, w, x)
    }

    fn vjp(
        &self,
        w: &ParamVector,
        x: &DMatrix<f64>,
        cotangent: &DMatrix<f64>,
    ) -> Result<DVector<f64>> {
        vector_jacobian_product(self, w, x, cotangent)
    }
}

struct Trace {
    /// Input to each layer, `b × fan_in`.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activation of each layer, `b × fan_out`.
    pre: Vec<DMatrix<f64>>,
    output: DMatrix<f64>,
}

fn check_inputs(spec: &MlpSpec, w: &ParamVector, x: &DMatrix<f64>) -> Result<()> {
    if w.len() != spec.param_count() {
        return Err(Error::mismatch(
            "parameter vector length",
            spec.param_count(),
            w.len(),
        ));
    }
    if x.ncols() != spec.input_width() {
        return Err(Error::mismatch(
            "feature columns",
            spec.input_width(),
            x.ncols(),
        ));
    }
    if !linalg::vec_all_finite(w) {
        return Err(Error::NonFinite("parameter vector".into()));
    }
    Ok(())
}

fn weights_view<'a>(w: &'a ParamVector, layer: &Layer) -> DMatrixView<'a, f64> {
    // A row-major fan_out × fan_in block is the column-major fan_in × fan_out transpose.
    DMatrixView::from_slice(
        &w.as_slice()[layer.offset..layer.bias_offset()],
        layer.fan_in,
        layer.fan_out,
    )
}

fn run_forward(spec: &MlpSpec, w: &ParamVector, x: &DMatrix<f64>, keep: bool) -> Trace {
    let layers = spec.layers();
    let mut inputs = Vec::with_capacity(if keep { layers.len() } else { 0 });
    let mut pre = Vec::with_capacity(inputs.capacity());
    let mut a = x.clone();
    for layer in &layers {
        let mut z = &a * weights_view(w, layer);
        let bias = &w.as_slice()[layer.bias_offset()..layer.bias_offset() + layer.fan_out];
        for (mut col, &bj) in z.column_iter_mut().zip(bias) {
            col.add_scalar_mut(bj);
        }
        let act = layer.activation;
        let next = z.map(|v| act.apply(v));
        if keep {
            inputs.push(a);
            pre.push(z);
        }
        a = next;
    }
    Trace {
        inputs,
        pre,
        output: a,
    }
}

/// Evaluates `Φ(xᵢ; w)` for every row of `x`.
pub fn forward(spec: &MlpSpec, w: &ParamVector, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_inputs(spec, w, x)?;
    Ok(run_forward(spec, w, x, false).output)
}

/// Stacked per-sample Jacobians of the network outputs with respect to `w`.
pub fn stacked_jacobian(
    spec: &MlpSpec,
    w: &ParamVector,
    x: &DMatrix<f64>,
) -> Result<StackedJacobian> {
    forward_with_jacobian(spec, w, x).map(|(_, j)| j)
}

/// Forward pass plus stacked Jacobian, sharing the activations.
pub fn forward_with_jacobian(
    spec: &MlpSpec,
    w: &ParamVector,
    x: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, StackedJacobian)> {
    check_inputs(spec, w, x)?;
    let trace = run_forward(spec, w, x, true);
    let layers = spec.layers();
    let (b, c, d) = (x.nrows(), spec.output_width(), spec.param_count());
    let max_width = spec.widths().iter().copied().max().unwrap_or(1);

    let mut jt = DMatrix::<f64>::zeros(d, b * c);
    let data = jt.as_mut_slice();
    let ws = w.as_slice();

    let mut layer_inputs: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.fan_in]).collect();
    let mut layer_derivs: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.fan_out]).collect();
    let mut delta = Vec::with_capacity(max_width);
    let mut prev = Vec::with_capacity(max_width);

    for i in 0..b {
        for (l, layer) in layers.iter().enumerate() {
            for (j, v) in layer_inputs[l].iter_mut().enumerate() {
                *v = trace.inputs[l][(i, j)];
            }
            for (o, v) in layer_derivs[l].iter_mut().enumerate() {
                *v = layer.activation.derivative(trace.pre[l][(i, o)]);
            }
        }
        for k in 0..c {
            let row = i * c + k;
            let col = &mut data[row * d..(row + 1) * d];
            delta.clear();
            delta.resize(c, 0.0);
            delta[k] = 1.0;
            for l in (0..layers.len()).rev() {
                let layer = &layers[l];
                for (dv, &g) in delta.iter_mut().zip(&layer_derivs[l]) {
                    *dv *= g;
                }
                let a_in = &layer_inputs[l];
                for (o, &g) in delta.iter().enumerate() {
                    let start = layer.offset + o * layer.fan_in;
                    for (dst, &av) in col[start..start + layer.fan_in].iter_mut().zip(a_in) {
                        *dst = g * av;
                    }
                }
                let bo = layer.bias_offset();
                col[bo..bo + layer.fan_out].copy_from_slice(&delta);
                if l > 0 {
                    prev.clear();
                    prev.resize(layer.fan_in, 0.0);
                    for (o, &g) in delta.iter().enumerate() {
                        if g == 0.0 {
                            continue;
                        }
                        let start = layer.offset + o * layer.fan_in;
                        for (p, &wv) in prev.iter_mut().zip(&ws[start..start + layer.fan_in]) {
                            *p += g * wv;
                        }
                    }
                    std::mem::swap(&mut delta, &mut prev);
                }
            }
        }
    }
    let jac = StackedJacobian::from_transposed(jt, c)?;
    Ok((trace.output, jac))
}

/// Batched reverse pass: `Σᵢ J_{Φᵢ}ᵀ uᵢ` without materializing `J`.
pub fn vector_jacobian_product(
    spec: &MlpSpec,
    w: &ParamVector,
    x: &DMatrix<f64>,
    cotangent: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_inputs(spec, w, x)?;
    if cotangent.shape() != (x.nrows(), spec.output_width()) {
        return Err(Error::mismatch(
            "cotangent shape",
            format!("{}x{}", x.nrows(), spec.output_width()),
            format!("{}x{}", cotangent.nrows(), cotangent.ncols()),
        ));
    }
    let trace = run_forward(spec, w, x, true);
    let layers = spec.layers();
    let mut grad = DVector::<f64>::zeros(spec.param_count());
    let mut delta = cotangent.clone();
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let act = layer.activation;
        delta.zip_apply(&trace.pre[l], |dv, z| *dv *= act.derivative(z));
        // (fan_in × fan_out) column-major is the row-major weight layout.
        let gw = linalg::tr_mul(&trace.inputs[l], &delta);
        grad.as_mut_slice()[layer.offset..layer.bias_offset()].copy_from_slice(gw.as_slice());
        for (o, col) in delta.column_iter().enumerate() {
            grad[layer.bias_offset() + o] = col.sum();
        }
        if l > 0 {
            delta = &delta * weights_view(w, layer).transpose();
        }
    }
    Ok(grad)
}
