//! The recurrent snap-angle network and its hand-written backward pass.
//!
//! Layout (defaults for a 64-pixel face):
//!
//! ```text
//! 4×64×64 binary faces
//!   conv 4→8   5×5 /2 + ReLU   -> 8×32×32
//!   conv 8→16  5×5 /2 + ReLU   -> 16×16×16
//!   conv 16→32 3×3 /2 + ReLU   -> 32×8×8
//!   fc 2048→128                -> feature f_t
//!   h_t = tanh(Wx f_t + Wh h_{t-1} + b)          (aggregator, 128)
//!   fc 128→64 + ReLU, fc 64→21, softmax          (predictor)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::FaceMask;

pub const MAGIC: &[u8; 5] = b"SNAP1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub face_size: usize,
    pub conv_channels: [usize; 3],
    pub feature: usize,
    pub hidden: usize,
    pub predictor: usize,
    pub actions: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { face_size: 64, conv_channels: [8, 16, 32], feature: 128, hidden: 128, predictor: 64, actions: 21 }
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvShape {
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    in_size: usize,
    out_size: usize,
}

impl ConvShape {
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn pixels(&self) -> usize {
        self.out_size * self.out_size
    }
}

const KERNELS: [(usize, usize, usize); 3] = [(5, 2, 2), (5, 2, 2), (3, 2, 1)];

impl NetConfig {
    fn convs(&self) -> Result<[ConvShape; 3]> {
        let mut size = self.face_size;
        let mut cin = 4;
        let mut shapes = Vec::with_capacity(3);
        for (i, &(k, stride, pad)) in KERNELS.iter().enumerate() {
            if size + 2 * pad < k {
                return Err(Error::invalid(format!("face size {} too small for the conv stack", self.face_size)));
            }
            let out = (size + 2 * pad - k) / stride + 1;
            shapes.push(ConvShape { cin, cout: self.conv_channels[i], k, stride, pad, in_size: size, out_size: out });
            size = out;
            cin = self.conv_channels[i];
        }
        Ok([shapes[0], shapes[1], shapes[2]])
    }

    pub fn flat_features(&self) -> Result<usize> {
        let c = self.convs()?;
        Ok(c[2].cout * c[2].pixels())
    }

    pub fn validate(&self) -> Result<()> {
        self.convs()?;
        if self.conv_channels.contains(&0) || self.feature == 0 || self.hidden == 0 || self.predictor == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.actions < 2 {
            return Err(Error::invalid("need at least two actions"));
        }
        Ok(())
    }

    /// `(name, dims)` of every parameter tensor, in storage order.
    pub fn tensor_shapes(&self) -> Result<Vec<(&'static str, Vec<usize>)>> {
        self.validate()?;
        let c = self.convs()?;
        let flat = self.flat_features()?;
        let mut v = Vec::new();
        for (i, s) in c.iter().enumerate() {
            let (w, b) = [("conv1.w", "conv1.b"), ("conv2.w", "conv2.b"), ("conv3.w", "conv3.b")][i];
            v.push((w, vec![s.cout, s.cin, s.k, s.k]));
            v.push((b, vec![s.cout]));
        }
        v.push(("feat.w", vec![self.feature, flat]));
        v.push(("feat.b", vec![self.feature]));
        v.push(("rnn.wx", vec![self.hidden, self.feature]));
        v.push(("rnn.wh", vec![self.hidden, self.hidden]));
        v.push(("rnn.b", vec![self.hidden]));
        v.push(("pred1.w", vec![self.predictor, self.hidden]));
        v.push(("pred1.b", vec![self.predictor]));
        v.push(("pred2.w", vec![self.actions, self.predictor]));
        v.push(("pred2.b", vec![self.actions]));
        Ok(v)
    }
}

// Storage indices.
const CONV_W: [usize; 3] = [0, 2, 4];
const CONV_B: [usize; 3] = [1, 3, 5];
const FEAT_W: usize = 6;
const FEAT_B: usize = 7;
const RNN_WX: usize = 8;
const RNN_WH: usize = 9;
const RNN_B: usize = 10;
const PRED1_W: usize = 11;
const PRED1_B: usize = 12;
const PRED2_W: usize = 13;
const PRED2_B: usize = 14;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

/// Parameters `{w_f, w_a, w_p}`: conv stack and feature layer, recurrent cell, predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyWeights {
    config: NetConfig,
    tensors: Vec<Tensor>,
}

impl PolicyWeights {
    pub fn zeros(config: NetConfig) -> Result<Self> {
        let tensors = config
            .tensor_shapes()?
            .into_iter()
            .map(|(name, dims)| {
                let len = dims.iter().product();
                Tensor { name: name.to_string(), dims, data: vec![0.0; len] }
            })
            .collect();
        Ok(Self { config, tensors })
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases.
    pub fn init(config: NetConfig, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut w.tensors {
            if t.dims.len() < 2 {
                continue;
            }
            let fan_in: usize = t.dims[1..].iter().product();
            let bound = 1.0 / (fan_in as f64).sqrt();
            t.data.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
        }
        Ok(w)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// `self += scale · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &PolicyWeights, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += scale * y);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.tensors.iter_mut().for_each(|t| t.data.iter_mut().for_each(|v| *v *= factor));
    }

    /// Writes the `SNAP1` format: magic, then for each tensor a u32 name
    /// length, the UTF-8 name, a u32 rank, u32 dims and little-endian f64
    /// values. A leading `config` tensor records the network shape.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let meta = [
            c.face_size,
            c.conv_channels[0],
            c.conv_channels[1],
            c.conv_channels[2],
            c.feature,
            c.hidden,
            c.predictor,
            c.actions,
        ];
        let config = Tensor { name: "config".into(), dims: vec![meta.len()], data: meta.iter().map(|&v| v as f64).collect() };
        let mut out = MAGIC.to_vec();
        for t in std::iter::once(&config).chain(&self.tensors) {
            out.extend((t.name.len() as u32).to_le_bytes());
            out.extend(t.name.as_bytes());
            out.extend((t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend((d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |reason: &str| Error::Format { path: "<weights>".into(), reason: reason.to_string() };
        let mut r = bytes;
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(|_| fail("truncated header"))?;
        if &magic != MAGIC {
            return Err(fail("bad magic, expected SNAP1"));
        }
        let read_u32 = |r: &mut &[u8]| -> Result<usize> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| fail("truncated tensor header"))?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let mut tensors = Vec::new();
        while !r.is_empty() {
            let len = read_u32(&mut r)?;
            if r.len() < len {
                return Err(fail("truncated tensor name"));
            }
            let name = std::str::from_utf8(&r[..len]).map_err(|_| fail("tensor name is not UTF-8"))?.to_string();
            r = &r[len..];
            let rank = read_u32(&mut r)?;
            let dims = (0..rank).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
            let count: usize = dims.iter().product();
            if r.len() < count * 8 {
                return Err(fail("truncated tensor data"));
            }
            let data = r[..count * 8].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
            r = &r[count * 8..];
            tensors.push(Tensor { name, dims, data });
        }
        let mut iter = tensors.into_iter();
        let meta = iter.next().filter(|t| t.name == "config" && t.data.len() == 8).ok_or_else(|| fail("missing config tensor"))?;
        let m: Vec<usize> = meta.data.iter().map(|&v| v as usize).collect();
        let config = NetConfig {
            face_size: m[0],
            conv_channels: [m[1], m[2], m[3]],
            feature: m[4],
            hidden: m[5],
            predictor: m[6],
            actions: m[7],
        };
        let tensors: Vec<Tensor> = iter.collect();
        let expected = config.tensor_shapes()?;
        if expected.len() != tensors.len() {
            return Err(fail("tensor count does not match config"));
        }
        for ((name, dims), t) in expected.iter().zip(&tensors) {
            if *name != t.name || *dims != t.dims {
                return Err(fail(&format!("tensor {} has unexpected name or shape", t.name)));
            }
        }
        let w = Self { config, tensors };
        if !w.is_finite() {
            return Err(fail("non-finite weight"));
        }
        Ok(w)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { reason, .. } => Error::Format { path: path.to_path_buf(), reason },
            other => other,
        })
    }
}

/// Activations of one time step, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct StepCache {
    cols: [Vec<f64>; 3],
    acts: [Vec<f64>; 3],
    feature: Vec<f64>,
    h_prev: Vec<f64>,
    h: Vec<f64>,
    z1: Vec<f64>,
    pub pdf: Vec<f64>,
}

impl StepCache {
    pub fn hidden(&self) -> &[f64] {
        &self.h
    }

    /// Which ReLU units were active, conv layers first, then the predictor.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.acts.iter().flatten().chain(&self.z1).map(|&v| v > 0.0).collect()
    }
}

fn im2col(x: &[f64], s: &ConvShape, cols: &mut [f64]) {
    let n = s.pixels();
    for ci in 0..s.cin {
        for ky in 0..s.k {
            for kx in 0..s.k {
                let row = (ci * s.k + ky) * s.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..s.out_size {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    let line = &mut dst[oy * s.out_size..(oy + 1) * s.out_size];
                    if iy < 0 || iy >= s.in_size as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(ci * s.in_size + iy as usize) * s.in_size..][..s.in_size];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        *v = if ix < 0 || ix >= s.in_size as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(dcols: &[f64], s: &ConvShape, dx: &mut [f64]) {
    let n = s.pixels();
    dx.fill(0.0);
    for ci in 0..s.cin {
        for ky in 0..s.k {
            for kx in 0..s.k {
                let row = (ci * s.k + ky) * s.k + kx;
                let src = &dcols[row * n..(row + 1) * n];
                for oy in 0..s.out_size {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= s.in_size as isize {
                        continue;
                    }
                    let base = (ci * s.in_size + iy as usize) * s.in_size;
                    for ox in 0..s.out_size {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix >= 0 && ix < s.in_size as isize {
                            dx[base + ix as usize] += src[oy * s.out_size + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out[r] = b[r] + Σ_c w[r, c] x[c]`
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| bias + w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

/// `dx[c] += Σ_r w[r, c] g[r]`
fn affine_t(w: &[f64], g: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        dx.iter_mut().zip(&w[r * cols..(r + 1) * cols]).for_each(|(d, wv)| *d += wv * gr);
    }
}

/// `dw[r, c] += g[r] x[c]`
fn outer_acc(dw: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        dw[r * cols..(r + 1) * cols].iter_mut().zip(x).for_each(|(d, xv)| *d += gr * xv);
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Stacks four binary faces into the network input.
pub fn faces_to_input(faces: &[FaceMask; 4]) -> Vec<f64> {
    faces.iter().flat_map(|f| f.data.iter().map(|&v| v as f64)).collect()
}

impl PolicyWeights {
    fn t(&self, i: usize) -> &[f64] {
        &self.tensors[i].data
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.config.hidden]
    }

    /// One step: action pdf and the activations needed for backprop.
    pub fn forward(&self, input: &[f64], h_prev: &[f64]) -> Result<StepCache> {
        let convs = self.config.convs()?;
        let expected = 4 * self.config.face_size * self.config.face_size;
        if input.len() != expected {
            return Err(Error::ShapeMismatch { expected: format!("{expected} inputs"), actual: format!("{}", input.len()) });
        }
        if h_prev.len() != self.config.hidden {
            return Err(Error::ShapeMismatch {
                expected: format!("hidden state of {}", self.config.hidden),
                actual: format!("{}", h_prev.len()),
            });
        }
        let mut cols: [Vec<f64>; 3] = Default::default();
        let mut acts: [Vec<f64>; 3] = Default::default();
        let mut x = input;
        for (i, s) in convs.iter().enumerate() {
            let n = s.pixels();
            let mut c = vec![0.0; s.patch() * n];
            im2col(x, s, &mut c);
            let w = self.t(CONV_W[i]);
            let b = self.t(CONV_B[i]);
            let mut out = vec![0.0; s.cout * n];
            for co in 0..s.cout {
                let o = &mut out[co * n..(co + 1) * n];
                o.fill(b[co]);
                for k in 0..s.patch() {
                    let wv = w[co * s.patch() + k];
                    if wv == 0.0 {
                        continue;
                    }
                    o.iter_mut().zip(&c[k * n..(k + 1) * n]).for_each(|(ov, cv)| *ov += wv * cv);
                }
                o.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cols[i] = c;
            acts[i] = out;
            x = &acts[i];
        }
        let feature = affine(self.t(FEAT_W), self.t(FEAT_B), &acts[2]);
        let mut pre = affine(self.t(RNN_WX), self.t(RNN_B), &feature);
        let rec = affine(self.t(RNN_WH), &vec![0.0; self.config.hidden], h_prev);
        pre.iter_mut().zip(&rec).for_each(|(p, r)| *p += r);
        let h: Vec<f64> = pre.iter().map(|v| v.tanh()).collect();
        let mut z1 = affine(self.t(PRED1_W), self.t(PRED1_B), &h);
        z1.iter_mut().for_each(|v| *v = v.max(0.0));
        let logits = affine(self.t(PRED2_W), self.t(PRED2_B), &z1);
        let pdf = softmax(&logits);
        Ok(StepCache { cols, acts, feature, h_prev: h_prev.to_vec(), h, z1, pdf })
    }

    /// Backpropagates `dlogits` through one step, accumulating into `grad`.
    /// `dh_next` carries the gradient arriving at this step's hidden state from
    /// later steps; the return value is the gradient for the previous hidden state.
    pub fn backward_step(&self, cache: &StepCache, dlogits: &[f64], dh_next: &[f64], grad: &mut PolicyWeights) -> Vec<f64> {
        let convs = self.config.convs().expect("validated config");
        let g = &mut grad.tensors;
        outer_acc(&mut g[PRED2_W].data, dlogits, &cache.z1);
        g[PRED2_B].data.iter_mut().zip(dlogits).for_each(|(d, v)| *d += v);
        let mut dz1 = vec![0.0; self.config.predictor];
        affine_t(self.t(PRED2_W), dlogits, &mut dz1);
        dz1.iter_mut().zip(&cache.z1).for_each(|(d, &z)| if z <= 0.0 { *d = 0.0 });
        outer_acc(&mut g[PRED1_W].data, &dz1, &cache.h);
        g[PRED1_B].data.iter_mut().zip(&dz1).for_each(|(d, v)| *d += v);
        let mut dh = dh_next.to_vec();
        affine_t(self.t(PRED1_W), &dz1, &mut dh);
        let dpre: Vec<f64> = dh.iter().zip(&cache.h).map(|(d, h)| d * (1.0 - h * h)).collect();
        outer_acc(&mut g[RNN_WX].data, &dpre, &cache.feature);
        outer_acc(&mut g[RNN_WH].data, &dpre, &cache.h_prev);
        g[RNN_B].data.iter_mut().zip(&dpre).for_each(|(d, v)| *d += v);
        let mut dh_prev = vec![0.0; self.config.hidden];
        affine_t(self.t(RNN_WH), &dpre, &mut dh_prev);
        let mut dfeat = vec![0.0; self.config.feature];
        affine_t(self.t(RNN_WX), &dpre, &mut dfeat);
        outer_acc(&mut g[FEAT_W].data, &dfeat, &cache.acts[2]);
        g[FEAT_B].data.iter_mut().zip(&dfeat).for_each(|(d, v)| *d += v);
        let mut dact = vec![0.0; cache.acts[2].len()];
        affine_t(self.t(FEAT_W), &dfeat, &mut dact);

        for i in (0..3).rev() {
            let s = &convs[i];
            let n = s.pixels();
            // through the ReLU
            dact.iter_mut().zip(&cache.acts[i]).for_each(|(d, &a)| if a <= 0.0 { *d = 0.0 });
            let cols = &cache.cols[i];
            let w = self.t(CONV_W[i]);
            {
                let dw = &mut g[CONV_W[i]].data;
                for co in 0..s.cout {
                    let dout = &dact[co * n..(co + 1) * n];
                    if dout.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    for k in 0..s.patch() {
                        dw[co * s.patch() + k] += dout.iter().zip(&cols[k * n..(k + 1) * n]).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            {
                let db = &mut g[CONV_B[i]].data;
                for co in 0..s.cout {
                    db[co] += dact[co * n..(co + 1) * n].iter().sum::<f64>();
                }
            }
            if i == 0 {
                break;
            }
            let mut dcols = vec![0.0; s.patch() * n];
            for co in 0..s.cout {
                let dout = &dact[co * n..(co + 1) * n];
                if dout.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for k in 0..s.patch() {
                    let wv = w[co * s.patch() + k];
                    dcols[k * n..(k + 1) * n].iter_mut().zip(dout).for_each(|(d, g)| *d += wv * g);
                }
            }
            let mut dx = vec![0.0; s.cin * s.in_size * s.in_size];
            col2im(&dcols, s, &mut dx);
            dact = dx;
        }
        dh_prev
    }
}
