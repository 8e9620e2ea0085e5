//! Forward and backward passes of the residual CNN.
//!
//! Per-sample shapes are kept: each input is a `rows x frames` grid and the
//! convolutional trunk is followed by global average pooling, so inputs of
//! different heights and widths share one set of weights.

use super::ops::{col2im_acc, gemm_acc, gemm_at_acc, gemm_bt_acc, im2col, softmax, Scalar};
use super::{ArchConfig, ModelError};
use crate::spectro::Grid;

#[derive(Debug, Clone, Copy)]
struct ConvSpec {
    cin: usize,
    cout: usize,
    stride: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct DenseSpec {
    inp: usize,
    out: usize,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Stage {
    entry: ConvSpec,
    blocks: Vec<(ConvSpec, ConvSpec)>,
}

/// Where each parameter tensor sits in the flat parameter list.
#[derive(Debug, Clone)]
struct Layout {
    stages: Vec<Stage>,
    hidden: Vec<DenseSpec>,
    output: DenseSpec,
}

impl Layout {
    fn new(arch: &ArchConfig) -> Self {
        let mut next = 0;
        let mut take = || {
            next += 2;
            (next - 2, next - 1)
        };
        let mut cin = 1;
        let mut stages = Vec::new();
        for &(cout, stride) in &arch.conv_stages {
            let (w, b) = take();
            let entry = ConvSpec {
                cin,
                cout,
                stride,
                w,
                b,
            };
            let blocks = (0..arch.blocks_per_stage)
                .map(|_| {
                    let mut conv = || {
                        let (w, b) = take();
                        ConvSpec {
                            cin: cout,
                            cout,
                            stride: 1,
                            w,
                            b,
                        }
                    };
                    (conv(), conv())
                })
                .collect();
            stages.push(Stage { entry, blocks });
            cin = cout;
        }
        let mut inp = cin;
        let mut hidden = Vec::new();
        for &out in &arch.fc_widths {
            let (w, b) = take();
            hidden.push(DenseSpec { inp, out, w, b });
            inp = out;
        }
        let (w, b) = take();
        Self {
            stages,
            hidden,
            output: DenseSpec {
                inp,
                out: arch.n_classes,
                w,
                b,
            },
        }
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut conv = |c: &ConvSpec| {
            out.push(vec![c.cout, c.cin, 3, 3]);
            out.push(vec![c.cout]);
        };
        for s in &self.stages {
            conv(&s.entry);
            for (a, b) in &s.blocks {
                conv(a);
                conv(b);
            }
        }
        for d in self.hidden.iter().chain(std::iter::once(&self.output)) {
            out.push(vec![d.out, d.inp]);
            out.push(vec![d.out]);
        }
        out
    }
}

/// Parameter tensor shapes, in storage order, for `arch`.
pub fn param_shapes(arch: &ArchConfig) -> Vec<Vec<usize>> {
    Layout::new(arch).shapes()
}

/// Per-sample dropout multipliers, one vector per hidden layer: either 0 or
/// `1 / (1 - rate)`.
pub type DropoutMasks<T> = Vec<Vec<T>>;

/// Gradients (or any per-parameter quantity) in parameter order.
pub type ParamSet<T> = Vec<Vec<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    arch: ArchConfig,
    params: ParamSet<T>,
}

struct ConvTrace<T> {
    cols: Vec<T>,
    in_dims: (usize, usize, usize),
    out_hw: (usize, usize),
}

struct BlockTrace<T> {
    c1: ConvTrace<T>,
    h1: Vec<T>,
    c2: ConvTrace<T>,
    y: Vec<T>,
}

struct StageTrace<T> {
    entry: ConvTrace<T>,
    r: Vec<T>,
    blocks: Vec<BlockTrace<T>>,
}

struct DenseTrace<T> {
    input: Vec<T>,
    act: Vec<T>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Trace<T> {
    stages: Vec<StageTrace<T>>,
    feat_dims: (usize, usize, usize),
    hidden: Vec<DenseTrace<T>>,
    masks: Option<DropoutMasks<T>>,
    logits_in: Vec<T>,
    pub probs: Vec<f64>,
}

impl<T> Trace<T> {
    /// Input vector of the output layer.
    pub fn logits_input(&self) -> &[T] {
        &self.logits_in
    }
}

fn relu_in_place<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zero-mean, unit-variance copy of `g`; a constant grid maps to zeros.
pub fn standardize<T: Scalar>(g: &Grid) -> Vec<T> {
    let d = g.data();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return vec![T::zero(); d.len()];
    }
    d.iter().map(|v| T::of((v - mean) / std)).collect()
}

impl<T: Scalar> Network<T> {
    pub fn from_params(arch: ArchConfig, params: ParamSet<T>) -> Result<Self, ModelError> {
        let shapes = param_shapes(&arch);
        if shapes.len() != params.len() {
            return Err(ModelError::ParamCount {
                expected: shapes.len(),
                got: params.len(),
            });
        }
        for (i, (s, p)) in shapes.iter().zip(&params).enumerate() {
            let n: usize = s.iter().product();
            if n != p.len() {
                return Err(ModelError::ParamShape {
                    index: i,
                    expected: n,
                    got: p.len(),
                });
            }
        }
        Ok(Self { arch, params })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    pub fn zeros_like(&self) -> ParamSet<T> {
        self.params
            .iter()
            .map(|p| vec![T::zero(); p.len()])
            .collect()
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            arch: self.arch.clone(),
            params: self
                .params
                .iter()
                .map(|p| p.iter().map(|v| U::of(v.f64())).collect())
                .collect(),
        }
    }

    fn check_input(&self, g: &Grid) -> Result<(), ModelError> {
        if g.rows() == 0 || g.cols() == 0 || g.rows() > self.arch.input_mels {
            return Err(ModelError::InputShape {
                rows: g.rows(),
                cols: g.cols(),
                max_rows: self.arch.input_mels,
            });
        }
        Ok(())
    }

    fn conv_forward(
        &self,
        c: &ConvSpec,
        x: &[T],
        dims: (usize, usize, usize),
    ) -> (ConvTrace<T>, Vec<T>) {
        let (cin, h, w) = dims;
        let mut cols = Vec::new();
        let (oh, ow) = im2col(x, cin, h, w, c.stride, &mut cols);
        let p = oh * ow;
        let mut out = vec![T::zero(); c.cout * p];
        for (o, &bias) in self.params[c.b].iter().enumerate() {
            out[o * p..(o + 1) * p].iter_mut().for_each(|v| *v = bias);
        }
        gemm_acc(c.cout, cin * 9, p, &self.params[c.w], &cols, &mut out);
        (
            ConvTrace {
                cols,
                in_dims: dims,
                out_hw: (oh, ow),
            },
            out,
        )
    }

    /// Accumulates weight and bias gradients; returns the input gradient
    /// when `want_input` is set.
    fn conv_backward(
        &self,
        c: &ConvSpec,
        t: &ConvTrace<T>,
        dout: &[T],
        grads: &mut ParamSet<T>,
        want_input: bool,
    ) -> Option<Vec<T>> {
        let (cin, h, w) = t.in_dims;
        let p = t.out_hw.0 * t.out_hw.1;
        let k = cin * 9;
        gemm_bt_acc(c.cout, p, k, dout, &t.cols, &mut grads[c.w]);
        for (o, g) in grads[c.b].iter_mut().enumerate() {
            *g = *g + dout[o * p..(o + 1) * p].iter().copied().sum::<T>();
        }
        if !want_input {
            return None;
        }
        let mut dcols = vec![T::zero(); k * p];
        gemm_at_acc(k, c.cout, p, &self.params[c.w], dout, &mut dcols);
        let mut dx = vec![T::zero(); cin * h * w];
        col2im_acc(&dcols, cin, h, w, c.stride, &mut dx);
        Some(dx)
    }

    fn dense(&self, d: &DenseSpec, x: &[T]) -> Vec<T> {
        let mut out = self.params[d.b].clone();
        gemm_acc(d.out, d.inp, 1, &self.params[d.w], x, &mut out);
        out
    }

    fn dense_backward(&self, d: &DenseSpec, x: &[T], dz: &[T], grads: &mut ParamSet<T>) -> Vec<T> {
        gemm_acc(d.out, 1, d.inp, dz, x, &mut grads[d.w]);
        for (g, &v) in grads[d.b].iter_mut().zip(dz) {
            *g = *g + v;
        }
        let mut dx = vec![T::zero(); d.inp];
        gemm_at_acc(d.inp, d.out, 1, &self.params[d.w], dz, &mut dx);
        dx
    }

    /// Forward pass for one grid. `masks`, when given, applies dropout.
    pub fn forward_trace(
        &self,
        grid: &Grid,
        masks: Option<DropoutMasks<T>>,
    ) -> Result<Trace<T>, ModelError> {
        self.check_input(grid)?;
        let layout = Layout::new(&self.arch);
        if let Some(m) = &masks {
            let ok = m.len() == layout.hidden.len()
                && m.iter().zip(&layout.hidden).all(|(v, d)| v.len() == d.out);
            if !ok {
                return Err(ModelError::MaskShape);
            }
        }
        let mut x = standardize::<T>(grid);
        let mut dims = (1, grid.rows(), grid.cols());
        let mut stages = Vec::with_capacity(layout.stages.len());
        for s in &layout.stages {
            let (entry, mut r) = self.conv_forward(&s.entry, &x, dims);
            relu_in_place(&mut r);
            dims = (s.entry.cout, entry.out_hw.0, entry.out_hw.1);
            let mut cur = r.clone();
            let mut blocks = Vec::with_capacity(s.blocks.len());
            for (c1, c2) in &s.blocks {
                let (t1, mut h1) = self.conv_forward(c1, &cur, dims);
                relu_in_place(&mut h1);
                let (t2, h2) = self.conv_forward(c2, &h1, dims);
                let mut y: Vec<T> = cur.iter().zip(&h2).map(|(&a, &b)| a + b).collect();
                relu_in_place(&mut y);
                cur = y.clone();
                blocks.push(BlockTrace {
                    c1: t1,
                    h1,
                    c2: t2,
                    y,
                });
            }
            stages.push(StageTrace { entry, r, blocks });
            x = cur;
        }
        let (c, h, w) = dims;
        let area = T::of((h * w) as f64);
        let mut v: Vec<T> = (0..c)
            .map(|ch| x[ch * h * w..(ch + 1) * h * w].iter().copied().sum::<T>() / area)
            .collect();
        let mut hidden = Vec::with_capacity(layout.hidden.len());
        for (i, d) in layout.hidden.iter().enumerate() {
            let mut act = self.dense(d, &v);
            relu_in_place(&mut act);
            let out = match &masks {
                Some(m) => act.iter().zip(&m[i]).map(|(&a, &k)| a * k).collect(),
                None => act.clone(),
            };
            hidden.push(DenseTrace { input: v, act });
            v = out;
        }
        let logits: Vec<f64> = self
            .dense(&layout.output, &v)
            .iter()
            .map(|z| z.f64())
            .collect();
        Ok(Trace {
            stages,
            feat_dims: dims,
            hidden,
            masks,
            logits_in: v,
            probs: softmax(&logits),
        })
    }

    /// Backpropagates `dlogits` through a trace, adding into `grads`.
    pub fn backward_trace(&self, trace: &Trace<T>, dlogits: &[f64], grads: &mut ParamSet<T>) {
        let layout = Layout::new(&self.arch);
        let dz: Vec<T> = dlogits.iter().map(|&v| T::of(v)).collect();
        let mut dv = self.dense_backward(&layout.output, &trace.logits_in, &dz, grads);
        for (i, d) in layout.hidden.iter().enumerate().rev() {
            let t = &trace.hidden[i];
            let dz: Vec<T> = (0..d.out)
                .map(|j| {
                    let g = match &trace.masks {
                        Some(m) => dv[j] * m[i][j],
                        None => dv[j],
                    };
                    if t.act[j] > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                })
                .collect();
            dv = self.dense_backward(d, &t.input, &dz, grads);
        }
        let (c, h, w) = trace.feat_dims;
        let area = T::of((h * w) as f64);
        let mut dx: Vec<T> = (0..c)
            .flat_map(|ch| std::iter::repeat_n(dv[ch] / area, h * w))
            .collect();
        for (si, s) in layout.stages.iter().enumerate().rev() {
            let st = &trace.stages[si];
            for (bi, (c1, c2)) in s.blocks.iter().enumerate().rev() {
                let bt = &st.blocks[bi];
                let dpre: Vec<T> = dx
                    .iter()
                    .zip(&bt.y)
                    .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                    .collect();
                let dh1 = self
                    .conv_backward(c2, &bt.c2, &dpre, grads, true)
                    .expect("input grad");
                let dh1: Vec<T> = dh1
                    .iter()
                    .zip(&bt.h1)
                    .map(|(&g, &a)| if a > T::zero() { g } else { T::zero() })
                    .collect();
                let dskip = self
                    .conv_backward(c1, &bt.c1, &dh1, grads, true)
                    .expect("input grad");
                dx = dpre.iter().zip(&dskip).map(|(&a, &b)| a + b).collect();
            }
            let da: Vec<T> = dx
                .iter()
                .zip(&st.r)
                .map(|(&g, &r)| if r > T::zero() { g } else { T::zero() })
                .collect();
            match self.conv_backward(&s.entry, &st.entry, &da, grads, si > 0) {
                Some(d) => dx = d,
                None => break,
            }
        }
    }

    /// Class probabilities with dropout off.
    pub fn predict(&self, grid: &Grid) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward_trace(grid, None)?.probs)
    }

    /// Mean cross-entropy over the batch and its gradient. `masks[i]` is the
    /// dropout mask for sample `i`, or `None` for no dropout.
    pub fn loss_and_grads(
        &self,
        inputs: &[Grid],
        labels: &[usize],
        masks: Option<Vec<DropoutMasks<T>>>,
    ) -> Result<(Vec<Vec<f64>>, f64, ParamSet<T>), ModelError> {
        if inputs.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if inputs.len() != labels.len() {
            return Err(ModelError::BatchMismatch {
                inputs: inputs.len(),
                labels: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.arch.n_classes) {
            return Err(ModelError::Label(bad));
        }
        let n = inputs.len() as f64;
        let mut grads = self.zeros_like();
        let mut probs = Vec::with_capacity(inputs.len());
        let mut masks = masks.map(|m| m.into_iter());
        for (x, &y) in inputs.iter().zip(labels) {
            let m = masks.as_mut().and_then(|it| it.next());
            let trace = self.forward_trace(x, m)?;
            let dlogits: Vec<f64> = trace
                .probs
                .iter()
                .enumerate()
                .map(|(k, &p)| (p - f64::from(u8::from(k == y))) / n)
                .collect();
            self.backward_trace(&trace, &dlogits, &mut grads);
            probs.push(trace.probs);
        }
        let l = super::loss(&probs, labels);
        Ok((probs, l, grads))
    }
}
