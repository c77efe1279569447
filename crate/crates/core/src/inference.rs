//! Dense MLP runtime.
//!
//! Networks are stored in bundles as `fc{i}.weight` (`[out, in]`, row-major)
//! and `fc{i}.bias` (`[out]`). Every layer but the last uses ReLU.
//!
//! [`pipelined_forward`] runs a decoder thread one layer ahead of the
//! compute thread, handing layers over through a channel of capacity one.

use std::path::Path;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::decode_layer;
use crate::container::{write_atomic, CompressedModel, Tensor, TensorBundle};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim × in_dim`, row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weight: Vec<f32>,
        bias: Vec<f32>,
        activation: Activation,
    ) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Dimension(format!(
                "dense layer {in_dim}->{out_dim} got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(DenseLayer {
            in_dim,
            out_dim,
            weight,
            bias,
            activation,
        })
    }

    /// `act(W·x + b)` for every row of `input`, dot products accumulated in
    /// index order.
    fn apply(&self, input: &Array2<f32>) -> Result<Array2<f32>> {
        if input.ncols() != self.in_dim {
            return Err(Error::Dimension(format!(
                "layer expects {} inputs, batch has {}",
                self.in_dim,
                input.ncols()
            )));
        }
        let mut out = Array2::<f32>::zeros((input.nrows(), self.out_dim));
        for (x, mut y) in input.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &self.weight[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = 0.0f32;
                for (w, xi) in row.iter().zip(x.iter()) {
                    acc += w * xi;
                }
                acc += self.bias[o];
                *yo = match self.activation {
                    Activation::Relu => acc.max(0.0),
                    Activation::Identity => acc,
                };
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    pub layers: Vec<DenseLayer>,
}

pub fn weight_name(i: usize) -> String {
    format!("fc{i}.weight")
}

pub fn bias_name(i: usize) -> String {
    format!("fc{i}.bias")
}

fn activation_for(i: usize, n: usize) -> Activation {
    if i + 1 == n {
        Activation::Identity
    } else {
        Activation::Relu
    }
}

fn dense_from_tensors(
    weight: (&[u64], Vec<f32>),
    bias: (&[u64], Vec<f32>),
    activation: Activation,
) -> Result<DenseLayer> {
    let (wshape, wdata) = weight;
    let (bshape, bdata) = bias;
    if wshape.len() != 2 || bshape.len() != 1 || bshape[0] != wshape[0] {
        return Err(Error::Dimension(format!(
            "weight shape {wshape:?} and bias shape {bshape:?} do not form a dense layer"
        )));
    }
    DenseLayer::new(
        wshape[1] as usize,
        wshape[0] as usize,
        wdata,
        bdata,
        activation,
    )
}

impl MlpNetwork {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Dimension("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Dimension(format!(
                    "layer outputs {} but next layer expects {}",
                    pair[0].out_dim, pair[1].in_dim
                )));
            }
        }
        if layers.last().unwrap().activation != Activation::Identity {
            return Err(Error::Dimension("final layer must be Identity".into()));
        }
        Ok(MlpNetwork { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    /// Reads `fc0`, `fc1`, … from a bundle.
    pub fn from_bundle(bundle: &TensorBundle) -> Result<Self> {
        let n = (0..)
            .take_while(|&i| bundle.get(&weight_name(i)).is_some())
            .count();
        let layers = (0..n)
            .map(|i| {
                let w = bundle.get(&weight_name(i)).unwrap();
                let b = bundle
                    .get(&bias_name(i))
                    .ok_or_else(|| Error::Dimension(format!("missing {}", bias_name(i))))?;
                dense_from_tensors(
                    (&w.shape, w.data.clone()),
                    (&b.shape, b.data.clone()),
                    activation_for(i, n),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        MlpNetwork::new(layers)
    }

    pub fn to_bundle(&self) -> TensorBundle {
        let mut tensors = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            tensors.push(Tensor {
                name: weight_name(i),
                shape: vec![l.out_dim as u64, l.in_dim as u64],
                data: l.weight.clone(),
            });
            tensors.push(Tensor {
                name: bias_name(i),
                shape: vec![l.out_dim as u64],
                data: l.bias.clone(),
            });
        }
        TensorBundle { tensors }
    }
}

pub fn mlp_forward(net: &MlpNetwork, batch: &Array2<f32>) -> Result<Array2<f32>> {
    let mut x = batch.to_owned();
    for layer in &net.layers {
        x = layer.apply(&x)?;
    }
    Ok(x)
}

fn network_depth(model: &CompressedModel) -> usize {
    (0..)
        .take_while(|&i| model.layer(&weight_name(i)).is_some())
        .count()
}

fn decode_dense(model: &CompressedModel, i: usize, n: usize) -> Result<DenseLayer> {
    let w = model
        .layer(&weight_name(i))
        .ok_or_else(|| Error::Dimension(format!("missing {}", weight_name(i))))?;
    let b = model
        .layer(&bias_name(i))
        .ok_or_else(|| Error::Dimension(format!("missing {}", bias_name(i))))?;
    dense_from_tensors(
        (w.shape(), decode_layer(w)?),
        (b.shape(), decode_layer(b)?),
        activation_for(i, n),
    )
}

/// Decodes every layer of `model` into a network.
pub fn decode_network(model: &CompressedModel) -> Result<MlpNetwork> {
    let n = network_depth(model);
    let layers = (0..n)
        .map(|i| decode_dense(model, i, n))
        .collect::<Result<Vec<_>>>()?;
    MlpNetwork::new(layers)
}

/// Wall-clock offsets of each stage, relative to the start of the pass.
#[derive(Debug, Clone, Default)]
pub struct PipelineTrace {
    pub decode: Vec<(Duration, Duration)>,
    pub compute: Vec<(Duration, Duration)>,
    pub total: Duration,
}

impl PipelineTrace {
    /// `decode₁ + Σ max(decodeᵢ₊₁, computeᵢ) + compute_last` from the
    /// measured stage durations.
    pub fn ideal_overlap(&self) -> Duration {
        let d: Vec<Duration> = self.decode.iter().map(|(s, e)| *e - *s).collect();
        let c: Vec<Duration> = self.compute.iter().map(|(s, e)| *e - *s).collect();
        if d.is_empty() {
            return Duration::ZERO;
        }
        let mut t = d[0];
        for i in 0..c.len().saturating_sub(1) {
            t += d.get(i + 1).copied().unwrap_or_default().max(c[i]);
        }
        t + c.last().copied().unwrap_or_default()
    }
}

pub fn pipelined_forward(model: &CompressedModel, batch: &Array2<f32>) -> Result<Array2<f32>> {
    pipelined_forward_traced(model, batch).map(|(y, _)| y)
}

/// Decoder and compute stages on two threads; layer `i + 1` may be decoded
/// while layer `i` computes.
pub fn pipelined_forward_traced(
    model: &CompressedModel,
    batch: &Array2<f32>,
) -> Result<(Array2<f32>, PipelineTrace)> {
    let n = network_depth(model);
    if n == 0 {
        return Err(Error::Dimension("model holds no fc layers".into()));
    }
    let start = Instant::now();
    let (tx, rx) = mpsc::sync_channel::<Result<(DenseLayer, Duration, Duration)>>(1);
    thread::scope(|s| {
        s.spawn(move || {
            for i in 0..n {
                let t0 = start.elapsed();
                let layer = decode_dense(model, i, n);
                let failed = layer.is_err();
                let msg = layer.map(|l| (l, t0, start.elapsed()));
                if tx.send(msg).is_err() || failed {
                    return;
                }
            }
        });

        // rx moves into the compute stage so an early error unblocks the decoder
        run_compute(rx, batch, n, start)
    })
}

type Handoff = mpsc::Receiver<Result<(DenseLayer, Duration, Duration)>>;

fn run_compute(
    rx: Handoff,
    batch: &Array2<f32>,
    n: usize,
    start: Instant,
) -> Result<(Array2<f32>, PipelineTrace)> {
    let mut trace = PipelineTrace::default();
    let mut x = batch.to_owned();
    for _ in 0..n {
        let (layer, d0, d1) = rx
            .recv()
            .map_err(|_| Error::Consistency("decoder stopped early".into()))??;
        trace.decode.push((d0, d1));
        let c0 = start.elapsed();
        x = layer.apply(&x)?;
        trace.compute.push((c0, start.elapsed()));
    }
    trace.total = start.elapsed();
    Ok((x, trace))
}

/// Feature matrix plus 0/1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f32>,
    pub y: Vec<u8>,
}

const DATASET_SEED: u64 = 0x7e57_b10b;
const BLOB_MEAN: [f32; 4] = [1.5, -1.0, 0.5, 2.0];
const TRAIN_SIZE: usize = 2000;
const TEST_SIZE: usize = 1000;

fn blobs(n: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let mut x = Array2::<f32>::zeros((n, 4));
    let mut y = Vec::with_capacity(n);
    for (i, mut row) in x.axis_iter_mut(Axis(0)).enumerate() {
        let label = (i % 2) as u8;
        let sign = if label == 1 { 1.0 } else { -1.0 };
        for (k, v) in row.iter_mut().enumerate() {
            *v = sign * BLOB_MEAN[k] + normal.sample(rng);
        }
        y.push(label);
    }
    Dataset { x, y }
}

/// Two balanced Gaussian blobs in 4-D: `(train, test)` with 2000 and 1000
/// rows, always generated from the same seed.
pub fn toy_dataset() -> (Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(DATASET_SEED);
    let train = blobs(TRAIN_SIZE, &mut rng);
    let test = blobs(TEST_SIZE, &mut rng);
    (train, test)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Writes atomically (temp file, then rename).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["x1", "x2", "x3", "x4", "label"])?;
        for (row, label) in self.x.axis_iter(Axis(0)).zip(&self.y) {
            let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            rec.push(label.to_string());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        write_atomic(path.as_ref(), &bytes)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["x1", "x2", "x3", "x4", "label"] {
            return Err(Error::format(0, "csv header must be x1,x2,x3,x4,label"));
        }
        let mut flat = Vec::new();
        let mut y = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = || Error::format(line + 1, "malformed csv row");
            for k in 0..4 {
                flat.push(rec.get(k).ok_or_else(bad)?.trim().parse::<f32>().map_err(|_| bad())?);
            }
            let label: u8 = rec.get(4).ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            if label > 1 {
                return Err(bad());
            }
            y.push(label);
        }
        let x = Array2::from_shape_vec((y.len(), 4), flat).expect("n x 4 layout");
        Ok(Dataset { x, y })
    }
}

/// Top-1 accuracy; ties go to the lower class index.
pub fn eval_accuracy(net: &MlpNetwork, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("empty dataset"));
    }
    accuracy(&mlp_forward(net, &data.x)?, &data.y)
}

/// Fraction of rows of `logits` whose argmax equals the label.
pub fn accuracy(logits: &Array2<f32>, labels: &[u8]) -> Result<f64> {
    if logits.nrows() != labels.len() || labels.is_empty() {
        return Err(Error::Dimension(format!(
            "{} output rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    let correct = logits
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &label)| argmax(row.iter().copied()) == label as usize)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

pub fn eval_accuracy_compressed(model: &CompressedModel, data: &Dataset) -> Result<f64> {
    eval_accuracy(&decode_network(model)?, data)
}

fn argmax(it: impl Iterator<Item = f32>) -> usize {
    let mut best = (0, f32::NEG_INFINITY);
    for (i, v) in it.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

const TOY_DIMS: [usize; 4] = [4, 32, 16, 2];
const TOY_STEP: f32 = 0.1;
const TOY_EPOCHS: usize = 500;

/// Trains the 4→32→16→2 toy classifier on [`toy_dataset`] with full-batch
/// gradient descent on softmax cross-entropy.
pub fn train_toy(seed: u64) -> MlpNetwork {
    let (train, _) = toy_dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_layers = TOY_DIMS.len() - 1;
    let mut weights: Vec<Array2<f32>> = Vec::new();
    let mut biases: Vec<Array1<f32>> = Vec::new();
    for i in 0..n_layers {
        let (fan_in, fan_out) = (TOY_DIMS[i], TOY_DIMS[i + 1]);
        let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
        weights.push(Array2::from_shape_fn((fan_out, fan_in), |_| {
            rng.gen_range(-limit..limit)
        }));
        biases.push(Array1::zeros(fan_out));
    }

    let n = train.len() as f32;
    let mut onehot = Array2::<f32>::zeros((train.len(), 2));
    for (i, &label) in train.y.iter().enumerate() {
        onehot[[i, label as usize]] = 1.0;
    }

    for _ in 0..TOY_EPOCHS {
        // forward, keeping every layer's input
        let mut inputs = vec![train.x.clone()];
        for i in 0..n_layers {
            let mut z = inputs[i].dot(&weights[i].t()) + &biases[i];
            if i + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(z);
        }
        let logits = inputs.pop().unwrap();
        let mut grad = logits;
        for mut row in grad.axis_iter_mut(Axis(0)) {
            let m = row.fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row /= s;
        }
        grad = (grad - &onehot) / n;

        for i in (0..n_layers).rev() {
            let a = &inputs[i];
            let dw = grad.t().dot(a);
            let db = grad.sum_axis(Axis(0));
            if i > 0 {
                let mut next = grad.dot(&weights[i]);
                next.zip_mut_with(a, |g, &act| {
                    if act <= 0.0 {
                        *g = 0.0
                    }
                });
                grad = next;
            }
            weights[i].scaled_add(-TOY_STEP, &dw);
            biases[i].scaled_add(-TOY_STEP, &db);
        }
    }

    let layers = weights
        .into_iter()
        .zip(biases)
        .enumerate()
        .map(|(i, (w, b))| DenseLayer {
            in_dim: w.ncols(),
            out_dim: w.nrows(),
            weight: w.iter().copied().collect(),
            bias: b.to_vec(),
            activation: activation_for(i, n_layers),
        })
        .collect();
    MlpNetwork { layers }
}

/// Seeded random MLP with weights and biases uniform in `[-0.5, 0.5]`.
pub fn random_network(dims: &[usize], seed: u64) -> Result<MlpNetwork> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::domain("need at least two positive layer widths"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.len() - 1;
    let layers = (0..n)
        .map(|i| {
            let (din, dout) = (dims[i], dims[i + 1]);
            let weight = (0..din * dout).map(|_| rng.gen_range(-0.5f32..=0.5)).collect();
            let bias = (0..dout).map(|_| rng.gen_range(-0.5f32..=0.5)).collect();
            DenseLayer::new(din, dout, weight, bias, activation_for(i, n))
        })
        .collect::<Result<Vec<_>>>()?;
    MlpNetwork::new(layers)
}
