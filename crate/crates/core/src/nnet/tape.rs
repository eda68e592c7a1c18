//! Tensor-level tape for reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the ids of
//! its inputs. [`Tape::backward`] walks the nodes in reverse insertion order,
//! which is a valid reverse topological order because inputs always precede
//! their consumers.

use super::NnError;

/// Dense n-dimensional array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() || shape.contains(&0) {
            return Err(NnError::Shape(format!(
                "shape {:?} does not hold {} values",
                shape,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    Relu(Var),
    Sigmoid(Var),
    Reshape(Var),
    Add(Var, Var),
    Scale(Var, f64),
    Square(Var),
    Sum(Var),
    Reparameterize {
        mu: Var,
        logvar: Var,
        eps: Vec<f64>,
    },
    Mse {
        pred: Var,
        target: Vec<f64>,
    },
    GaussianKl {
        mu: Var,
        logvar: Var,
    },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Differentiable leaf (a parameter).
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(t.shape.clone(), t.data.clone(), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient (data).
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var, NnError> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push(t.shape, t.data, Op::Leaf, false))
    }

    /// `[n, k] × [k, m] → [n, m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NnError::Shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for (o, bpj) in row.iter_mut().zip(&bv[p * m..(p + 1) * m]) {
                    *o += aip * bpj;
                }
            }
        }
        let ng = self.needs(&[a, b]);
        Ok(self.push(vec![n, m], out, Op::MatMul(a, b), ng))
    }

    /// Adds a `[m]` bias to every row of `[n, m]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NnError> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sx.len() != 2 || sb.len() != 1 || sx[1] != sb[0] {
            return Err(NnError::Shape(format!("add_bias {sx:?} + {sb:?}")));
        }
        let m = sx[1];
        let shape = sx.to_vec();
        let bv = self.value(bias);
        let out = self
            .value(x)
            .chunks_exact(m)
            .flat_map(|row| row.iter().zip(bv).map(|(r, b)| r + b))
            .collect();
        let ng = self.needs(&[x, bias]);
        Ok(self.push(shape, out, Op::AddBias(x, bias), ng))
    }

    /// Valid (unpadded) strided 2-D convolution.
    /// `input [n, c, h, w]`, `kernel [o, c, k, k]`, `bias [o]` → `[n, o, oh, ow]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var, NnError> {
        let (si, sk, sb) = (self.shape(input), self.shape(kernel), self.shape(bias));
        if si.len() != 4 || sk.len() != 4 || sb.len() != 1 || si[1] != sk[1] || sk[2] != sk[3] || sk[0] != sb[0] {
            return Err(NnError::Shape(format!("conv2d input {si:?} kernel {sk:?} bias {sb:?}")));
        }
        let k = sk[2];
        if stride == 0 || si[2] < k || si[3] < k {
            return Err(NnError::Shape(format!("conv2d kernel {k} stride {stride} on {si:?}")));
        }
        let geom = ConvGeometry {
            batch: si[0],
            in_channels: si[1],
            in_h: si[2],
            in_w: si[3],
            out_channels: sk[0],
            kernel: k,
            stride,
            out_h: (si[2] - k) / stride + 1,
            out_w: (si[3] - k) / stride + 1,
        };
        let out = conv_forward(&geom, self.value(input), self.value(kernel), self.value(bias));
        let ng = self.needs(&[input, kernel, bias]);
        Ok(self.push(
            vec![geom.batch, geom.out_channels, geom.out_h, geom.out_w],
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            ng,
        ))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let ng = self.needs(&[x]);
        self.push(shape, out, op, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| c * v, Op::Scale(x, c))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, NnError> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(NnError::Shape(format!("reshape {:?} -> {:?}", self.shape(x), shape)));
        }
        let out = self.value(x).to_vec();
        let ng = self.needs(&[x]);
        Ok(self.push(shape, out, Op::Reshape(x), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(NnError::Shape(format!("add {:?} + {:?}", self.shape(a), self.shape(b))));
        }
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a, b]);
        Ok(self.push(shape, out, Op::Add(a, b), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let ng = self.needs(&[x]);
        self.push(vec![1], vec![s], Op::Sum(x), ng)
    }

    /// `z = mu + exp(logvar / 2) ⊙ eps` with `eps` held fixed.
    pub fn reparameterize(&mut self, mu: Var, logvar: Var, eps: Vec<f64>) -> Result<Var, NnError> {
        if self.shape(mu) != self.shape(logvar) || eps.len() != self.value(mu).len() {
            return Err(NnError::Shape(format!(
                "reparameterize mu {:?} logvar {:?} eps {}",
                self.shape(mu),
                self.shape(logvar),
                eps.len()
            )));
        }
        let out = self
            .value(mu)
            .iter()
            .zip(self.value(logvar))
            .zip(&eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect();
        let shape = self.shape(mu).to_vec();
        let ng = self.needs(&[mu, logvar]);
        Ok(self.push(shape, out, Op::Reparameterize { mu, logvar, eps }, ng))
    }

    /// Mean squared error over every element.
    pub fn mse(&mut self, pred: Var, target: Vec<f64>) -> Result<Var, NnError> {
        if target.len() != self.value(pred).len() {
            return Err(NnError::Shape(format!(
                "mse prediction {:?} vs {} targets",
                self.shape(pred),
                target.len()
            )));
        }
        let n = target.len() as f64;
        let s = self
            .value(pred)
            .iter()
            .zip(&target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        let ng = self.needs(&[pred]);
        Ok(self.push(vec![1], vec![s], Op::Mse { pred, target }, ng))
    }

    /// KL(N(mu, exp(logvar)) || N(0, I)) summed over the latent axis and
    /// averaged over the batch axis. Inputs are `[batch, latent]`.
    pub fn gaussian_kl(&mut self, mu: Var, logvar: Var) -> Result<Var, NnError> {
        let s = self.shape(mu);
        if s.len() != 2 || s != self.shape(logvar) {
            return Err(NnError::Shape(format!("kl mu {:?} logvar {:?}", s, self.shape(logvar))));
        }
        let batch = s[0] as f64;
        let total: f64 = self
            .value(mu)
            .iter()
            .zip(self.value(logvar))
            .map(|(m, lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
            .sum();
        let ng = self.needs(&[mu, logvar]);
        Ok(self.push(vec![1], vec![total / batch], Op::GaussianKl { mu, logvar }, ng))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        let node = self.nodes.get(loss.0).ok_or(NnError::NoForward)?;
        if node.value.len() != 1 {
            return Err(NnError::Shape(format!("backward from non-scalar {:?}", node.shape)));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                // dA = G Bᵀ
                acc(*a, &mut |ga| {
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            ga[i * k + p] += gi.iter().zip(&bv[p * m..(p + 1) * m]).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                // dB = Aᵀ G
                acc(*b, &mut |gb| {
                    for i in 0..n {
                        let gi = &g[i * m..(i + 1) * m];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for (o, gij) in gb[p * m..(p + 1) * m].iter_mut().zip(gi) {
                                *o += aip * gij;
                            }
                        }
                    }
                });
            }
            Op::AddBias(x, bias) => {
                acc(*x, &mut |gx| {
                    for (o, v) in gx.iter_mut().zip(g) {
                        *o += v;
                    }
                });
                let m = self.nodes[bias.0].value.len();
                acc(*bias, &mut |gb| {
                    for row in g.chunks_exact(m) {
                        for (o, v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let (iv, kv) = (&self.nodes[input.0].value, &self.nodes[kernel.0].value);
                acc(*input, &mut |gi| conv_backward_input(geom, g, kv, gi));
                acc(*kernel, &mut |gk| conv_backward_kernel(geom, g, iv, gk));
                acc(*bias, &mut |gb| {
                    let plane = geom.out_h * geom.out_w;
                    for (c, chunk) in g.chunks_exact(plane).enumerate() {
                        gb[c % geom.out_channels] += chunk.iter().sum::<f64>();
                    }
                });
            }
            Op::Relu(x) => {
                let xv = &self.nodes[x.0].value;
                acc(*x, &mut |gx| {
                    for ((o, v), xi) in gx.iter_mut().zip(g).zip(xv) {
                        if *xi > 0.0 {
                            *o += v;
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                acc(*x, &mut |gx| {
                    for ((o, v), yi) in gx.iter_mut().zip(g).zip(y) {
                        *o += v * yi * (1.0 - yi);
                    }
                });
            }
            Op::Reshape(x) => acc(*x, &mut |gx| {
                for (o, v) in gx.iter_mut().zip(g) {
                    *o += v;
                }
            }),
            Op::Add(a, b) => {
                for v in [a, b] {
                    acc(*v, &mut |gv| {
                        for (o, x) in gv.iter_mut().zip(g) {
                            *o += x;
                        }
                    });
                }
            }
            Op::Scale(x, c) => acc(*x, &mut |gx| {
                for (o, v) in gx.iter_mut().zip(g) {
                    *o += c * v;
                }
            }),
            Op::Square(x) => {
                let xv = &self.nodes[x.0].value;
                acc(*x, &mut |gx| {
                    for ((o, v), xi) in gx.iter_mut().zip(g).zip(xv) {
                        *o += 2.0 * xi * v;
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| {
                for o in gx.iter_mut() {
                    *o += g[0];
                }
            }),
            Op::Reparameterize { mu, logvar, eps } => {
                acc(*mu, &mut |gm| {
                    for (o, v) in gm.iter_mut().zip(g) {
                        *o += v;
                    }
                });
                let lv = &self.nodes[logvar.0].value;
                acc(*logvar, &mut |gl| {
                    for (((o, v), l), e) in gl.iter_mut().zip(g).zip(lv).zip(eps) {
                        *o += v * e * 0.5 * (0.5 * l).exp();
                    }
                });
            }
            Op::Mse { pred, target } => {
                let pv = &self.nodes[pred.0].value;
                let scale = 2.0 * g[0] / target.len() as f64;
                acc(*pred, &mut |gp| {
                    for ((o, p), t) in gp.iter_mut().zip(pv).zip(target) {
                        *o += scale * (p - t);
                    }
                });
            }
            Op::GaussianKl { mu, logvar } => {
                let batch = self.nodes[mu.0].shape[0] as f64;
                let mv = &self.nodes[mu.0].value;
                let lv = &self.nodes[logvar.0].value;
                acc(*mu, &mut |gm| {
                    for (o, m) in gm.iter_mut().zip(mv) {
                        *o += g[0] * m / batch;
                    }
                });
                acc(*logvar, &mut |gl| {
                    for (o, l) in gl.iter_mut().zip(lv) {
                        *o += g[0] * 0.5 * (l.exp() - 1.0) / batch;
                    }
                });
            }
        }
    }
}

fn conv_forward(geom: &ConvGeometry, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let ConvGeometry {
        batch,
        in_channels: c_in,
        in_h,
        in_w,
        out_channels: c_out,
        kernel: k,
        stride,
        out_h,
        out_w,
    } = *geom;
    let mut out = vec![0.0; batch * c_out * out_h * out_w];
    for b in 0..batch {
        for o in 0..c_out {
            let plane = &mut out[((b * c_out + o) * out_h) * out_w..((b * c_out + o + 1) * out_h) * out_w];
            plane.iter_mut().for_each(|v| *v = bias[o]);
            for c in 0..c_in {
                let img = &input[(b * c_in + c) * in_h * in_w..(b * c_in + c + 1) * in_h * in_w];
                let ker = &kernel[(o * c_in + c) * k * k..(o * c_in + c + 1) * k * k];
                for y in 0..out_h {
                    for x in 0..out_w {
                        let mut s = 0.0;
                        for ky in 0..k {
                            let row = &img[(y * stride + ky) * in_w + x * stride..][..k];
                            let kr = &ker[ky * k..(ky + 1) * k];
                            s += row.iter().zip(kr).map(|(a, w)| a * w).sum::<f64>();
                        }
                        plane[y * out_w + x] += s;
                    }
                }
            }
        }
    }
    out
}

fn conv_backward_input(geom: &ConvGeometry, g: &[f64], kernel: &[f64], gi: &mut [f64]) {
    let ConvGeometry {
        batch,
        in_channels: c_in,
        in_h,
        in_w,
        out_channels: c_out,
        kernel: k,
        stride,
        out_h,
        out_w,
    } = *geom;
    for b in 0..batch {
        for o in 0..c_out {
            let gp = &g[((b * c_out + o) * out_h) * out_w..][..out_h * out_w];
            for c in 0..c_in {
                let ker = &kernel[(o * c_in + c) * k * k..][..k * k];
                let gimg = &mut gi[(b * c_in + c) * in_h * in_w..][..in_h * in_w];
                for y in 0..out_h {
                    for x in 0..out_w {
                        let gv = gp[y * out_w + x];
                        if gv == 0.0 {
                            continue;
                        }
                        for ky in 0..k {
                            let row = &mut gimg[(y * stride + ky) * in_w + x * stride..][..k];
                            for (r, w) in row.iter_mut().zip(&ker[ky * k..(ky + 1) * k]) {
                                *r += gv * w;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv_backward_kernel(geom: &ConvGeometry, g: &[f64], input: &[f64], gk: &mut [f64]) {
    let ConvGeometry {
        batch,
        in_channels: c_in,
        in_h,
        in_w,
        out_channels: c_out,
        kernel: k,
        stride,
        out_h,
        out_w,
    } = *geom;
    for b in 0..batch {
        for o in 0..c_out {
            let gp = &g[((b * c_out + o) * out_h) * out_w..][..out_h * out_w];
            for c in 0..c_in {
                let img = &input[(b * c_in + c) * in_h * in_w..][..in_h * in_w];
                let gker = &mut gk[(o * c_in + c) * k * k..][..k * k];
                for y in 0..out_h {
                    for x in 0..out_w {
                        let gv = gp[y * out_w + x];
                        if gv == 0.0 {
                            continue;
                        }
                        for ky in 0..k {
                            let row = &img[(y * stride + ky) * in_w + x * stride..][..k];
                            for (w, a) in gker[ky * k..(ky + 1) * k].iter_mut().zip(row) {
                                *w += gv * a;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central-difference oracle over every parameter entry.
    fn check(params: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let loss = f(&mut tape, &vars);
        let grads = tape.backward(loss).unwrap();
        let eval = |ps: &[Tensor]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ps.iter().map(|p| t.param(p)).collect();
            let l = f(&mut t, &vs);
            t.value(l)[0]
        };
        let h = 1e-5;
        for pi in 0..params.len() {
            let analytic = grads.wrt(vars[pi]).unwrap();
            for (i, &a) in analytic.iter().enumerate() {
                let mut plus = params.to_vec();
                plus[pi].data[i] += h;
                let mut minus = params.to_vec();
                minus[pi].data[i] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                let rel = (a - numeric).abs() / denom;
                assert!(rel < 1e-4, "param {pi}[{i}]: analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let w = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.5]).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(&w);
        let s = tape.sum(v);
        assert_eq!(tape.value(s), &[6.0]);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(v).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn half_squared_norm_gradient_is_identity() {
        let w = Tensor::new(vec![4], vec![0.5, -1.0, 2.0, 3.0]).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(&w);
        let sq = tape.square(v);
        let s = tape.sum(sq);
        let half = tape.scale(s, 0.5);
        let g = tape.backward(half).unwrap();
        assert_eq!(g.wrt(v).unwrap(), w.data.as_slice());
    }

    #[test]
    fn backward_requires_recorded_node() {
        let tape = Tape::new();
        assert!(matches!(tape.backward(Var(0)), Err(NnError::NoForward)));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let v = tape.param(&Tensor::zeros(vec![3]));
        assert!(matches!(tape.backward(v), Err(NnError::Shape(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
        let w = tape.param(&Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        let a = tape.add(c, w).unwrap();
        let s = tape.sum(a);
        let g = tape.backward(s).unwrap();
        assert!(g.wrt(c).is_none());
        assert_eq!(g.wrt(w).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn dense_relu_sigmoid_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = vec![
            random_tensor(&mut rng, vec![3, 4]),
            random_tensor(&mut rng, vec![4, 5]),
            random_tensor(&mut rng, vec![5]),
        ];
        let target: Vec<f64> = (0..15).map(|_| rng.random_range(0.0..1.0)).collect();
        check(&params, |t, v| {
            let h = t.matmul(v[0], v[1]).unwrap();
            let h = t.add_bias(h, v[2]).unwrap();
            let h = t.relu(h);
            let y = t.sigmoid(h);
            t.mse(y, target.clone()).unwrap()
        });
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = vec![
            random_tensor(&mut rng, vec![2, 2, 7, 6]),
            random_tensor(&mut rng, vec![3, 2, 3, 3]),
            random_tensor(&mut rng, vec![3]),
        ];
        check(&params, |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], 2).unwrap();
            let sq = t.square(y);
            t.sum(sq)
        });
    }

    #[test]
    fn conv_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, vec![1, 2, 5, 5]);
        let k = random_tensor(&mut rng, vec![1, 2, 3, 3]);
        let b = Tensor::new(vec![1], vec![0.25]).unwrap();
        let mut tape = Tape::new();
        let (xv, kv, bv) = (tape.param(&x), tape.param(&k), tape.param(&b));
        let y = tape.conv2d(xv, kv, bv, 2).unwrap();
        assert_eq!(tape.shape(y), &[1, 1, 2, 2]);
        for oy in 0..2 {
            for ox in 0..2 {
                let mut s = 0.25;
                for c in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            s += x.data[c * 25 + (oy * 2 + ky) * 5 + ox * 2 + kx] * k.data[c * 9 + ky * 3 + kx];
                        }
                    }
                }
                assert!((tape.value(y)[oy * 2 + ox] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reparameterize_and_kl_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = vec![random_tensor(&mut rng, vec![3, 2]), random_tensor(&mut rng, vec![3, 2])];
        let eps: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
        check(&params, |t, v| {
            let z = t.reparameterize(v[0], v[1], eps.clone()).unwrap();
            let sq = t.square(z);
            let recon = t.sum(sq);
            let kl = t.gaussian_kl(v[0], v[1]).unwrap();
            let kl = t.scale(kl, 0.3);
            t.add(recon, kl).unwrap()
        });
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::new();
        let a = tape.param(&Tensor::zeros(vec![2, 3]));
        let b = tape.param(&Tensor::zeros(vec![2, 3]));
        assert!(tape.matmul(a, b).is_err());
        assert!(tape.reshape(a, vec![5]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
