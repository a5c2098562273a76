//! Dense feed-forward networks with real and jet-valued passes.
//!
//! Parameters live in one flat vector; layer `l` occupies a row-major
//! `d_out x d_in` weight block followed by `d_out` biases. Hidden layers
//! apply the activation; the output layer is affine.
//!
//! The batched jet pass ([`jet_forward`] / [`jet_backward`]) works one layer
//! at a time on coefficient planes (`B x width` matrices, one per Taylor
//! coefficient). [`record_on_tape`] builds the same computation from
//! elementary operations on an [`autodiff::Tape`]; it is slow and serves as
//! the reference for the batched path.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{self, AdError, Jet, JetFn, NodeId, Tape};
use crate::rng::{seeded, Stream};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
}

impl Activation {
    fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Softplus => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Softplus),
            _ => None,
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Softplus => autodiff::softplus(x),
        }
    }

    fn jet_fn(self) -> JetFn {
        match self {
            Activation::Tanh => JetFn::Tanh,
            Activation::Softplus => JetFn::Softplus,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    layer_dims: Vec<usize>,
    activation: Activation,
    flat: Vec<f64>,
}

/// Offset of layer `l`'s weights and biases within the flat vector.
#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    d_in: usize,
    d_out: usize,
    w: usize,
    b: usize,
}

fn spans(dims: &[usize]) -> Vec<LayerSpan> {
    let mut off = 0;
    dims.windows(2)
        .map(|w| {
            let (d_in, d_out) = (w[0], w[1]);
            let span = LayerSpan { d_in, d_out, w: off, b: off + d_in * d_out };
            off += d_in * d_out + d_out;
            span
        })
        .collect()
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl ModelParams {
    /// Wraps an explicit flat vector.
    pub fn from_flat(layer_dims: Vec<usize>, activation: Activation, flat: Vec<f64>) -> Result<Self, NnError> {
        validate_dims(&layer_dims)?;
        let want = param_count(&layer_dims);
        if flat.len() != want {
            return Err(NnError::Shape(format!("flat has {} values, architecture needs {want}", flat.len())));
        }
        Ok(Self { layer_dims, activation, flat })
    }

    pub fn zeros(layer_dims: Vec<usize>, activation: Activation) -> Result<Self, NnError> {
        let n = {
            validate_dims(&layer_dims)?;
            param_count(&layer_dims)
        };
        Self::from_flat(layer_dims, activation, vec![0.0; n])
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated nonempty")
    }

    fn span(&self, l: usize) -> LayerSpan {
        spans(&self.layer_dims)[l]
    }

    /// `d_out x d_in` weight view of layer `l`.
    pub fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let sp = self.span(l);
        ArrayView2::from_shape((sp.d_out, sp.d_in), &self.flat[sp.w..sp.b]).expect("span matches shape")
    }

    pub fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let sp = self.span(l);
        ArrayView1::from(&self.flat[sp.b..sp.b + sp.d_out])
    }

    pub fn weight_mut(&mut self, l: usize) -> ArrayViewMut2<'_, f64> {
        let sp = self.span(l);
        ArrayViewMut2::from_shape((sp.d_out, sp.d_in), &mut self.flat[sp.w..sp.b]).expect("span matches shape")
    }

    pub fn bias_mut(&mut self, l: usize) -> ArrayViewMut1<'_, f64> {
        let sp = self.span(l);
        ArrayViewMut1::from(&mut self.flat[sp.b..sp.b + sp.d_out])
    }

    /// Writes the parameter checkpoint: magic `CRVR1`, the number of
    /// layer dims (u32 LE), each dim (u32 LE), an activation tag byte
    /// (0 = tanh, 1 = softplus), then the flat parameters as f64 LE.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<(), NnError> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.layer_dims.len() as u32).to_le_bytes())?;
        for &d in &self.layer_dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&[self.activation.tag()])?;
        for v in &self.flat {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self, NnError> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(NnError::Checkpoint(format!("bad magic {:?}", String::from_utf8_lossy(&magic))));
        }
        let mut u4 = [0u8; 4];
        r.read_exact(&mut u4)?;
        let n_dims = u32::from_le_bytes(u4) as usize;
        if n_dims > 64 {
            return Err(NnError::Checkpoint(format!("implausible layer count {n_dims}")));
        }
        let mut dims = Vec::with_capacity(n_dims);
        for _ in 0..n_dims {
            r.read_exact(&mut u4)?;
            dims.push(u32::from_le_bytes(u4) as usize);
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let activation = Activation::from_tag(tag[0])
            .ok_or_else(|| NnError::Checkpoint(format!("unknown activation tag {}", tag[0])))?;
        validate_dims(&dims)?;
        let n = param_count(&dims);
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| NnError::Checkpoint(format!("truncated: expected {n} parameters")))?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(NnError::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        let flat = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
        Self::from_flat(dims, activation, flat)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(f)
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"CRVR1";

fn validate_dims(dims: &[usize]) -> Result<(), NnError> {
    if dims.len() < 2 {
        return Err(NnError::Architecture(format!("need at least 2 layer dims, got {}", dims.len())));
    }
    if dims.contains(&0) {
        return Err(NnError::Architecture("layer dims must be positive".into()));
    }
    Ok(())
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<ModelParams, NnError> {
    let mut p = ModelParams::zeros(layer_dims.to_vec(), activation)?;
    let mut rng = seeded(seed, Stream::Init);
    for sp in spans(layer_dims) {
        let bound = (6.0 / (sp.d_in + sp.d_out) as f64).sqrt();
        for v in &mut p.flat[sp.w..sp.b] {
            *v = rng.random_range(-bound..bound);
        }
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>) -> Result<Self, NnError> {
        if inputs.nrows() == 0 {
            return Err(NnError::Shape("batch has no rows".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(NnError::Shape(format!("{} rows but {} labels", inputs.nrows(), labels.len())));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows at `idx`, in order.
    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch { inputs: self.inputs.select(Axis(0), idx), labels: idx.iter().map(|&i| self.labels[i]).collect() }
    }

    fn validate(&self, params: &ModelParams) -> Result<(), NnError> {
        check_inputs(params, self.inputs.view())?;
        let c = params.output_dim();
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= c) {
            return Err(NnError::Shape(format!("label {bad} >= output dimension {c}")));
        }
        if self.labels.len() != self.inputs.nrows() {
            return Err(NnError::Shape("labels and rows differ".into()));
        }
        Ok(())
    }
}

fn check_inputs(params: &ModelParams, x: ArrayView2<f64>) -> Result<(), NnError> {
    if x.ncols() != params.input_dim() {
        return Err(NnError::Shape(format!("inputs have {} columns, network expects {}", x.ncols(), params.input_dim())));
    }
    Ok(())
}

/// Affine map `x W^T + b` over rows.
fn affine(x: ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut z = x.dot(&w.t());
    z += &b;
    z
}

/// Activations of every layer (input first, logits last).
fn forward_trace(params: &ModelParams, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
    let l_count = params.num_layers();
    let mut acts = Vec::with_capacity(l_count + 1);
    acts.push(x.to_owned());
    for l in 0..l_count {
        let mut z = affine(acts[l].view(), params.weight(l), params.bias(l));
        if l + 1 < l_count {
            let act = params.activation;
            z.mapv_inplace(|v| act.apply(v));
        }
        acts.push(z);
    }
    acts
}

pub fn forward(params: &ModelParams, inputs: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
    check_inputs(params, inputs)?;
    Ok(forward_trace(params, inputs).pop().expect("at least one layer"))
}

/// Row-wise softmax.
pub fn softmax(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut p = logits.to_owned();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

pub fn predict_proba(params: &ModelParams, inputs: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
    Ok(softmax(forward(params, inputs)?.view()))
}

/// `log sum exp(row) - row[label]`, stable.
fn row_cross_entropy(row: ArrayView1<f64>, label: usize) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
    m + s.ln() - row[label]
}

/// Mean cross-entropy of the batch, without gradient.
pub fn loss(params: &ModelParams, batch: &Batch) -> Result<f64, NnError> {
    batch.validate(params)?;
    let logits = forward(params, batch.inputs.view())?;
    let total: f64 = logits.rows().into_iter().zip(&batch.labels).map(|(r, &y)| row_cross_entropy(r, y)).sum();
    Ok(total / batch.len() as f64)
}

/// Mean softmax cross-entropy and its gradient with respect to the flat
/// parameter vector.
pub fn loss_and_grad(params: &ModelParams, batch: &Batch) -> Result<(f64, Vec<f64>), NnError> {
    batch.validate(params)?;
    let acts = forward_trace(params, batch.inputs.view());
    let logits = acts.last().expect("logits");
    let bsz = batch.len() as f64;
    let total: f64 = logits.rows().into_iter().zip(&batch.labels).map(|(r, &y)| row_cross_entropy(r, y)).sum();
    let mut delta = softmax(logits.view());
    for (mut row, &y) in delta.rows_mut().into_iter().zip(&batch.labels) {
        row[y] -= 1.0;
    }
    delta /= bsz;
    let mut grad = vec![0.0; params.flat.len()];
    let sps = spans(&params.layer_dims);
    for l in (0..params.num_layers()).rev() {
        let sp = sps[l];
        let h = &acts[l];
        let gw = delta.t().dot(h);
        grad[sp.w..sp.b].copy_from_slice(gw.as_slice().expect("standard layout"));
        let gb = delta.sum_axis(Axis(0));
        grad[sp.b..sp.b + sp.d_out].copy_from_slice(gb.as_slice().expect("contiguous"));
        if l > 0 {
            let mut dh = delta.dot(&params.weight(l));
            // h = act(z): act'(z) from the stored output.
            match params.activation {
                Activation::Tanh => dh.zip_mut_with(h, |d, &hv| *d *= 1.0 - hv * hv),
                Activation::Softplus => dh.zip_mut_with(h, |d, &hv| *d *= 1.0 - (-hv).exp()),
            }
            delta = dh;
        }
    }
    Ok((total / bsz, grad))
}

/// Scalar read off the network output along a jet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Cross-entropy against the sample's label.
    Loss,
    /// The logit that is largest at `t = 0` (ties to the lowest index).
    MaxLogit,
    /// A fixed class logit.
    Logit(usize),
}

impl Head {
    pub fn as_str(&self) -> String {
        match self {
            Head::Loss => "loss".into(),
            Head::MaxLogit => "max_logit".into(),
            Head::Logit(c) => format!("logit{c}"),
        }
    }
}

/// Coefficient planes of a batch of jets: `planes[k]` is `B x width`.
type Planes = Vec<Array2<f64>>;

/// Saved state of a batched jet forward pass.
#[derive(Debug, Clone)]
pub struct JetForward {
    order: usize,
    /// Jet planes entering each layer; `inputs[0]` has only two active planes.
    inputs: Vec<Planes>,
    /// `act'(z)` jets for each hidden layer.
    act_deriv: Vec<Planes>,
    logits: Planes,
}

impl JetForward {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn batch_len(&self) -> usize {
        self.logits[0].nrows()
    }

    /// Jet of logit `c` for sample `row`.
    pub fn logit_jet(&self, row: usize, c: usize) -> Jet {
        let coeffs: Vec<f64> = self.logits.iter().map(|p| p[[row, c]]).collect();
        Jet::from_coeffs(&coeffs).expect("order validated")
    }

    pub fn logit_planes(&self) -> &[Array2<f64>] {
        &self.logits
    }
}

/// Applies the activation elementwise to jet planes, returning the output
/// planes and the planes of `act'(z)`.
fn activate_planes(act: Activation, z: &Planes) -> Result<(Planes, Planes), AdError> {
    let order = z.len() - 1;
    let shape = z[0].raw_dim();
    let mut out: Planes = (0..=order).map(|_| Array2::zeros(shape)).collect();
    let mut der: Planes = (0..=order).map(|_| Array2::zeros(shape)).collect();
    let mut buf = [0.0; autodiff::MAX_ORDER + 1];
    for ((i, j), _) in z[0].indexed_iter() {
        for k in 0..=order {
            buf[k] = z[k][[i, j]];
        }
        let a = Jet::from_coeffs(&buf[..=order])?;
        let (v, d) = autodiff::jet_fn_with_derivative(act.jet_fn(), &a)?;
        for k in 0..=order {
            out[k][[i, j]] = v.coeffs()[k];
            der[k][[i, j]] = d.coeffs()[k];
        }
    }
    Ok((out, der))
}

/// Propagates jets `x_i + t u_i` (one row per sample) through the network.
pub fn jet_forward(
    params: &ModelParams,
    points: ArrayView2<f64>,
    directions: ArrayView2<f64>,
    order: usize,
) -> Result<JetForward, NnError> {
    Jet::zero(order)?;
    check_inputs(params, points)?;
    if points.dim() != directions.dim() {
        return Err(NnError::Shape("points and directions differ in shape".into()));
    }
    let l_count = params.num_layers();
    let mut inputs = Vec::with_capacity(l_count);
    let mut act_deriv = Vec::with_capacity(l_count.saturating_sub(1));
    let mut h: Planes = vec![points.to_owned(), directions.to_owned()];
    let mut logits = Vec::new();
    for l in 0..l_count {
        let w = params.weight(l);
        let mut z: Planes = Vec::with_capacity(order + 1);
        for k in 0..=order {
            if k < h.len() {
                if k == 0 {
                    z.push(affine(h[0].view(), w, params.bias(l)));
                } else {
                    z.push(h[k].dot(&w.t()));
                }
            } else {
                z.push(Array2::zeros((points.nrows(), w.nrows())));
            }
        }
        inputs.push(std::mem::take(&mut h));
        if l + 1 < l_count {
            let (out, der) = activate_planes(params.activation, &z)?;
            act_deriv.push(der);
            h = out;
        } else {
            logits = z;
        }
    }
    Ok(JetForward { order, inputs, act_deriv, logits })
}

/// Head jet for every row, plus what its reverse rule needs.
fn head_row(fwd: &JetForward, row: usize, head: Head, label: Option<usize>) -> Result<(Jet, HeadAdj), NnError> {
    let c_count = fwd.logits[0].ncols();
    match head {
        Head::Logit(c) => {
            if c >= c_count {
                return Err(NnError::Shape(format!("class {c} >= {c_count}")));
            }
            Ok((fwd.logit_jet(row, c), HeadAdj::Single(c)))
        }
        Head::MaxLogit => {
            let r = fwd.logits[0].row(row);
            let mut best = 0;
            for c in 1..c_count {
                if r[c] > r[best] {
                    best = c;
                }
            }
            Ok((fwd.logit_jet(row, best), HeadAdj::Single(best)))
        }
        Head::Loss => {
            let y = label.ok_or_else(|| NnError::Shape("loss head needs labels".into()))?;
            if y >= c_count {
                return Err(NnError::Shape(format!("label {y} >= {c_count}")));
            }
            let ys: Vec<Jet> = (0..c_count).map(|c| fwd.logit_jet(row, c)).collect();
            let m = ys.iter().map(|j| j.value()).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<Jet> = ys.iter().map(|j| j.add_scalar(-m).exp()).collect();
            let mut s = exps[0];
            for e in &exps[1..] {
                s = s.add(e)?;
            }
            let inv_s = s.recip()?;
            let lse = s.ln()?.add_scalar(m);
            let l = lse.sub(&ys[y])?;
            let probs = exps.iter().map(|e| e.mul(&inv_s)).collect::<Result<Vec<_>, _>>()?;
            Ok((l, HeadAdj::Loss { label: y, probs }))
        }
    }
}

enum HeadAdj {
    Single(usize),
    Loss { label: usize, probs: Vec<Jet> },
}

/// Jets of the chosen head for every row of a forward pass.
pub fn head_jets(fwd: &JetForward, head: Head, labels: Option<&[usize]>) -> Result<Vec<Jet>, NnError> {
    (0..fwd.batch_len()).map(|r| head_row(fwd, r, head, labels.map(|l| l[r])).map(|(j, _)| j)).collect()
}

/// Reverse sweep through a jet forward pass.
///
/// `seed[r][k]` is the adjoint of coefficient `k` of row `r`'s head jet.
/// Returns the gradient with respect to the flat parameters.
pub fn jet_backward(
    params: &ModelParams,
    fwd: &JetForward,
    head: Head,
    labels: Option<&[usize]>,
    seed: &[Vec<f64>],
) -> Result<Vec<f64>, NnError> {
    let order = fwd.order;
    let bsz = fwd.batch_len();
    if seed.len() != bsz {
        return Err(NnError::Shape(format!("{} seeds for {bsz} rows", seed.len())));
    }
    let c_count = fwd.logits[0].ncols();
    let mut delta: Planes = (0..=order).map(|_| Array2::zeros((bsz, c_count))).collect();
    let mut tmp = vec![0.0; order + 1];
    for r in 0..bsz {
        if seed[r].iter().all(|&v| v == 0.0) {
            continue;
        }
        let (_, adj) = head_row(fwd, r, head, labels.map(|l| l[r]))?;
        match adj {
            HeadAdj::Single(c) => {
                for k in 0..=order {
                    delta[k][[r, c]] += seed[r][k];
                }
            }
            HeadAdj::Loss { label, probs } => {
                for (c, p) in probs.iter().enumerate() {
                    tmp.iter_mut().for_each(|v| *v = 0.0);
                    p.transpose_mul(&seed[r], &mut tmp);
                    for k in 0..=order {
                        delta[k][[r, c]] += tmp[k];
                    }
                }
                for k in 0..=order {
                    delta[k][[r, label]] -= seed[r][k];
                }
            }
        }
    }
    let mut grad = vec![0.0; params.flat.len()];
    let sps = spans(&params.layer_dims);
    for l in (0..params.num_layers()).rev() {
        let sp = sps[l];
        let h = &fwd.inputs[l];
        let mut gw = Array2::<f64>::zeros((sp.d_out, sp.d_in));
        for (k, hk) in h.iter().enumerate() {
            gw += &delta[k].t().dot(hk);
        }
        grad[sp.w..sp.b].copy_from_slice(gw.as_slice().expect("standard layout"));
        let gb = delta[0].sum_axis(Axis(0));
        grad[sp.b..sp.b + sp.d_out].copy_from_slice(gb.as_slice().expect("contiguous"));
        if l == 0 {
            break;
        }
        let w = params.weight(l);
        let dh: Planes = delta.iter().map(|d| d.dot(&w)).collect();
        // Through h = act(z): delta_z = T(act'(z)) delta_h per element.
        let der = &fwd.act_deriv[l - 1];
        let shape = dh[0].raw_dim();
        let mut dz: Planes = (0..=order).map(|_| Array2::zeros(shape)).collect();
        for ((i, j), _) in dh[0].indexed_iter() {
            for jj in 0..=order {
                let mut acc = 0.0;
                for k in jj..=order {
                    acc += dh[k][[i, j]] * der[k - jj][[i, j]];
                }
                dz[jj][[i, j]] = acc;
            }
        }
        delta = dz;
    }
    Ok(grad)
}

/// Jet of `head` along `point + t * direction`.
pub fn scalar_head_jet(
    params: &ModelParams,
    point: &[f64],
    direction: &[f64],
    order: usize,
    head: Head,
    label: Option<usize>,
) -> Result<Jet, NnError> {
    let d = point.len();
    let x = Array2::from_shape_vec((1, d), point.to_vec()).map_err(|e| NnError::Shape(e.to_string()))?;
    let u = Array2::from_shape_vec((1, direction.len()), direction.to_vec())
        .map_err(|e| NnError::Shape(e.to_string()))?;
    let fwd = jet_forward(params, x.view(), u.view(), order)?;
    let labels = label.map(|y| vec![y]);
    Ok(head_jets(&fwd, head, labels.as_deref())?.remove(0))
}

/// Records the network and head on `tape` from elementary operations.
/// Returns the parameter nodes (flat order) and the output node.
pub fn record_on_tape(
    params: &ModelParams,
    tape: &mut Tape,
    point: &[f64],
    direction: &[f64],
    head: Head,
    label: Option<usize>,
) -> Result<(Vec<NodeId>, NodeId), NnError> {
    if point.len() != params.input_dim() || direction.len() != point.len() {
        return Err(NnError::Shape("point/direction do not match the input dimension".into()));
    }
    let theta: Vec<NodeId> = params.flat.iter().map(|&v| tape.param(v)).collect::<Result<_, _>>()?;
    let mut h: Vec<NodeId> =
        point.iter().zip(direction).map(|(&x, &u)| tape.lifted(x, u)).collect::<Result<_, _>>()?;
    let sps = spans(&params.layer_dims);
    for (l, sp) in sps.iter().enumerate() {
        let mut z = Vec::with_capacity(sp.d_out);
        for o in 0..sp.d_out {
            let mut terms = Vec::with_capacity(sp.d_in + 1);
            for (i, &hi) in h.iter().enumerate() {
                terms.push(tape.mul(theta[sp.w + o * sp.d_in + i], hi)?);
            }
            terms.push(theta[sp.b + o]);
            let mut zo = tape.sum(&terms)?;
            if l + 1 < sps.len() {
                zo = tape.apply(params.activation.jet_fn(), zo)?;
            }
            z.push(zo);
        }
        h = z;
    }
    let out = match head {
        Head::Logit(c) => *h.get(c).ok_or_else(|| NnError::Shape(format!("class {c} out of range")))?,
        Head::MaxLogit => {
            let mut best = 0;
            for c in 1..h.len() {
                if tape.value(h[c])?.value() > tape.value(h[best])?.value() {
                    best = c;
                }
            }
            h[best]
        }
        Head::Loss => {
            let y = label.ok_or_else(|| NnError::Shape("loss head needs a label".into()))?;
            let exps: Vec<NodeId> = h.iter().map(|&z| tape.apply(JetFn::Exp, z)).collect::<Result<_, _>>()?;
            let s = tape.sum(&exps)?;
            let lse = tape.apply(JetFn::Log, s)?;
            tape.sub(lse, h[y])?
        }
    };
    Ok((theta, out))
}

/// Gradient of the mean cross-entropy with respect to the inputs (rows).
pub fn input_gradient(params: &ModelParams, batch: &Batch) -> Result<Array2<f64>, NnError> {
    batch.validate(params)?;
    let acts = forward_trace(params, batch.inputs.view());
    let mut delta = softmax(acts.last().expect("logits").view());
    for (mut row, &y) in delta.rows_mut().into_iter().zip(&batch.labels) {
        row[y] -= 1.0;
    }
    delta /= batch.len() as f64;
    for l in (0..params.num_layers()).rev() {
        let mut dh = delta.dot(&params.weight(l));
        if l > 0 {
            let h = &acts[l];
            match params.activation {
                Activation::Tanh => dh.zip_mut_with(h, |d, &hv| *d *= 1.0 - hv * hv),
                Activation::Softplus => dh.zip_mut_with(h, |d, &hv| *d *= 1.0 - (-hv).exp()),
            }
        }
        delta = dh;
    }
    Ok(delta)
}

/// Argmax per row, ties to the lowest index.
pub fn argmax_rows(m: ArrayView2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for c in 1..r.len() {
                if r[c] > r[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Copies `src` rows into a new matrix (used for replicating samples
/// once per sampled direction).
pub(crate) fn repeat_rows(src: ArrayView2<f64>, times: usize) -> Array2<f64> {
    let mut out = Array2::zeros((src.nrows() * times, src.ncols()));
    for (i, row) in src.rows().into_iter().enumerate() {
        for t in 0..times {
            out.slice_mut(s![i * times + t, ..]).assign(&row);
        }
    }
    out
}
