use std::collections::HashMap;

use super::kernels::{
    conv_backward, conv_forward, conv_t_backward, conv_t_forward, up2_scatter_index, ConvGeometry,
};
use super::{Array, ParamId, ParamStore};
use crate::grid::{
    avg_pool2_raw, avg_pool2_raw_adjoint, upsample2_raw, upsample2_raw_adjoint, warp_raw,
    warp_raw_backward, Interpolation,
};
use crate::metrics::{diffusion_energy_raw, diffusion_grad_raw, local_ncc_grad_raw};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Constant,
    Param,
    Flatten(Var),
    Add(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: Box<ConvGeometry>,
        cols: Vec<f64>,
    },
    ConvT {
        x: Var,
        w: Var,
        b: Var,
        scatter: Vec<usize>,
    },
    Cin {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        sigma: Vec<f64>,
    },
    Upsample2(Var),
    AvgPool2(Var),
    Warp {
        image: Var,
        field: Var,
    },
    Ncc {
        a: Var,
        b: Var,
        ga: Vec<f64>,
        gb: Vec<f64>,
    },
    Diffusion(Var),
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Array,
    op: Op,
    needs_grad: bool,
}

/// Tape of one forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    frozen: bool,
}

/// CIN stabilizer added to the channel standard deviation.
pub const CIN_EPS: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that records no gradient information (inference only).
    pub fn inference() -> Self {
        Graph {
            frozen: true,
            ..Self::default()
        }
    }

    fn push(&mut self, value: Array, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs_grad && !self.frozen,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Leaf for a parameter; repeated requests return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add: shape mismatch");
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Array::new(va.shape().to_vec(), data);
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x);
        let out = Array::new(
            v.shape().to_vec(),
            v.data().iter().map(|e| e * factor).collect(),
        );
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, factor), ng)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x);
        let data = v
            .data()
            .iter()
            .map(|&e| if e > 0.0 { e } else { slope * e })
            .collect();
        let out = Array::new(v.shape().to_vec(), data);
        let ng = self.ng(x);
        self.push(out, Op::LeakyRelu(x, slope), ng)
    }

    /// Concatenates spatial tensors along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let spatial = self.value(parts[0]).spatial().to_vec();
        let mut data = Vec::new();
        let mut channels = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.spatial(), &spatial[..], "concat: spatial mismatch");
            channels += v.channels();
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![channels];
        shape.extend(spatial);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Array::new(shape, data), Op::Concat(parts.to_vec()), ng)
    }

    /// Same values as a 1-D node.
    pub fn flatten(&mut self, x: Var) -> Var {
        let data = self.value(x).data().to_vec();
        let ng = self.ng(x);
        self.push(Array::new(vec![data.len()], data), Op::Flatten(x), ng)
    }

    /// Contiguous sub-vector `[start, start + len)` of a 1-D node.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let data = self.value(x).data()[start..start + len].to_vec();
        let ng = self.ng(x);
        self.push(Array::new(vec![len], data), Op::Slice { x, start }, ng)
    }

    /// `w @ x + b` for a vector `x`; `w` is `[out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let (out_n, in_n) = (vw.shape()[0], vw.shape()[1]);
        assert_eq!(vx.len(), in_n, "linear: input size");
        let mut y = vb.data().to_vec();
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &vw.data()[o * in_n..(o + 1) * in_n];
            *yo += row.iter().zip(vx.data()).map(|(a, b)| a * b).sum::<f64>();
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(Array::new(vec![out_n], y), Op::Linear { x, w, b }, ng)
    }

    /// Cubic convolution; `w` is `[cout, cin, k, k(, k)]`.
    pub fn conv(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let cin = vx.channels();
        let cout = vw.shape()[0];
        assert_eq!(vw.shape()[1], cin, "conv: input channels");
        let k = vw.shape()[2];
        let geom = ConvGeometry::new(vx.spatial(), k, stride, pad);
        let (y, cols) = conv_forward(&geom, vx.data(), cin, vw.data(), vb.data(), cout);
        let mut shape = vec![cout];
        shape.extend(&geom.out_dims);
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        let cols = if ng && !self.frozen { cols } else { Vec::new() };
        self.push(
            Array::new(shape, y),
            Op::Conv {
                x,
                w,
                b,
                geom: Box::new(geom),
                cols,
            },
            ng,
        )
    }

    /// Kernel-2, stride-2 transposed convolution; `w` is `[cin, cout, 2, 2(, 2)]`.
    pub fn conv_transpose2(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let cin = vx.channels();
        let cout = vw.shape()[1];
        assert_eq!(vw.shape()[0], cin, "conv_transpose2: input channels");
        let scatter = up2_scatter_index(vx.spatial());
        let y = conv_t_forward(
            vx.spatial(),
            &scatter,
            vx.data(),
            cin,
            vw.data(),
            vb.data(),
            cout,
        );
        let mut shape = vec![cout];
        shape.extend(vx.spatial().iter().map(|d| d * 2));
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(Array::new(shape, y), Op::ConvT { x, w, b, scatter }, ng)
    }

    /// Conditional instance normalization:
    /// `gamma_c * (x_c - mean_c) / (std_c + eps) + beta_c` per channel.
    pub fn cin(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (vx, vg, vb) = (self.value(x), self.value(gamma), self.value(beta));
        let c = vx.channels();
        assert_eq!(vg.len(), c, "cin: gamma size");
        assert_eq!(vb.len(), c, "cin: beta size");
        let n = vx.len() / c;
        let mut xhat = vec![0.0; vx.len()];
        let mut y = vec![0.0; vx.len()];
        let mut sigma = vec![0.0; c];
        for ch in 0..c {
            let xs = &vx.data()[ch * n..(ch + 1) * n];
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            sigma[ch] = sd;
            let inv = 1.0 / (sd + CIN_EPS);
            let (g, bt) = (vg.data()[ch], vb.data()[ch]);
            for i in 0..n {
                let h = (xs[i] - mean) * inv;
                xhat[ch * n + i] = h;
                y[ch * n + i] = g * h + bt;
            }
        }
        let out = Array::new(vx.shape().to_vec(), y);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::Cin {
                x,
                gamma,
                beta,
                xhat,
                sigma,
            },
            ng,
        )
    }

    /// Multilinear x2 upsampling of every channel.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = upsample2_raw(v.data(), v.channels(), v.spatial());
        let mut shape = vec![v.channels()];
        shape.extend(v.spatial().iter().map(|d| d * 2));
        let ng = self.ng(x);
        self.push(Array::new(shape, data), Op::Upsample2(x), ng)
    }

    /// 2-wide average pooling of every channel.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = avg_pool2_raw(v.data(), v.channels(), v.spatial());
        let mut shape = vec![v.channels()];
        shape.extend(v.spatial().iter().map(|d| d / 2));
        let ng = self.ng(x);
        self.push(Array::new(shape, data), Op::AvgPool2(x), ng)
    }

    /// Samples every channel of `image` at `x + field(x)` (multilinear, clamped).
    pub fn warp(&mut self, image: Var, field: Var) -> Var {
        let (vi, vf) = (self.value(image), self.value(field));
        assert_eq!(vi.spatial(), vf.spatial(), "warp: grid mismatch");
        assert_eq!(vf.channels(), vf.spatial().len(), "warp: field components");
        let data = warp_raw(
            vi.data(),
            vi.channels(),
            vi.spatial(),
            vf.data(),
            Interpolation::Linear,
        );
        let out = Array::new(vi.shape().to_vec(), data);
        let ng = self.ng(image) || self.ng(field);
        self.push(out, Op::Warp { image, field }, ng)
    }

    /// Scalar local NCC between two single-channel tensors.
    pub fn ncc(&mut self, a: Var, b: Var, window: usize) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "ncc: shape mismatch");
        let (v, ga, gb) = local_ncc_grad_raw(va.data(), vb.data(), va.spatial(), window);
        let ng = self.ng(a) || self.ng(b);
        let (ga, gb) = if ng && !self.frozen {
            (ga, gb)
        } else {
            (Vec::new(), Vec::new())
        };
        self.push(Array::scalar(v), Op::Ncc { a, b, ga, gb }, ng)
    }

    /// Scalar diffusion energy of a `[D, ...]` field tensor.
    pub fn diffusion(&mut self, field: Var) -> Var {
        let v = self.value(field);
        let e = diffusion_energy_raw(v.data(), v.spatial(), v.channels());
        let ng = self.ng(field);
        self.push(Array::scalar(e), Op::Diffusion(field), ng)
    }

    /// `sum_i w_i * s_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let v = terms
            .iter()
            .map(|&(s, w)| w * self.value(s).data()[0])
            .sum();
        let ng = terms.iter().any(|&(s, _)| self.ng(s));
        self.push(Array::scalar(v), Op::WeightedSum(terms.to_vec()), ng)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert!(!self.frozen, "backward on an inference graph");
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.needs_grad {
                self.step(node, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Gradients {
            grads,
            params: self.params.clone(),
        }
    }

    fn step(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, delta: Vec<f64>| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(e) => e.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::Flatten(x) => acc(*x, g.to_vec()),
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Scale(x, f) => acc(*x, g.iter().map(|e| e * f).collect()),
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                acc(
                    *x,
                    g.iter()
                        .zip(xv)
                        .map(|(&gi, &xi)| if xi > 0.0 { gi } else { slope * gi })
                        .collect(),
                );
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    acc(p, g[off..off + n].to_vec());
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                let mut d = vec![0.0; self.value(*x).len()];
                d[*start..*start + g.len()].copy_from_slice(g);
                acc(*x, d);
            }
            Op::Linear { x, w, b } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let in_n = vx.len();
                if self.ng(*x) {
                    let mut dx = vec![0.0; in_n];
                    for (o, &go) in g.iter().enumerate() {
                        let row = &vw.data()[o * in_n..(o + 1) * in_n];
                        dx.iter_mut().zip(row).for_each(|(d, r)| *d += go * r);
                    }
                    acc(*x, dx);
                }
                if self.ng(*w) {
                    let mut dw = Vec::with_capacity(g.len() * in_n);
                    for &go in g {
                        dw.extend(vx.data().iter().map(|xi| go * xi));
                    }
                    acc(*w, dw);
                }
                acc(*b, g.to_vec());
            }
            Op::Conv {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (dx, dw, db) = conv_backward(
                    geom,
                    cols,
                    vx.channels(),
                    vw.data(),
                    vw.shape()[0],
                    g,
                    self.ng(*x),
                );
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                acc(*w, dw);
                acc(*b, db);
            }
            Op::ConvT { x, w, b, scatter } => {
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (dx, dw, db) = conv_t_backward(
                    vx.spatial(),
                    scatter,
                    vx.data(),
                    vx.channels(),
                    vw.data(),
                    vw.shape()[1],
                    g,
                    self.ng(*x),
                );
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                acc(*w, dw);
                acc(*b, db);
            }
            Op::Cin {
                x,
                gamma,
                beta,
                xhat,
                sigma,
            } => {
                let vg = self.value(*gamma).data();
                let c = vg.len();
                let n = xhat.len() / c;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = vec![0.0; xhat.len()];
                for ch in 0..c {
                    let gs = &g[ch * n..(ch + 1) * n];
                    let hs = &xhat[ch * n..(ch + 1) * n];
                    dgamma[ch] = gs.iter().zip(hs).map(|(a, b)| a * b).sum();
                    dbeta[ch] = gs.iter().sum();
                    // dL/dxhat = gamma * g
                    let s = sigma[ch] + CIN_EPS;
                    let mean_gh = vg[ch] * dbeta[ch] / n as f64;
                    // sum_j dxhat_j (x_j - mean) = gamma * s * sum_j g_j xhat_j
                    let proj = if sigma[ch] > 0.0 {
                        vg[ch] * dgamma[ch] * s / (s * s * n as f64 * sigma[ch])
                    } else {
                        0.0
                    };
                    for i in 0..n {
                        let centred = hs[i] * s;
                        dx[ch * n + i] = (vg[ch] * gs[i] - mean_gh) / s - proj * centred;
                    }
                }
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Upsample2(x) => {
                let v = self.value(*x);
                acc(*x, upsample2_raw_adjoint(g, v.channels(), v.spatial()));
            }
            Op::AvgPool2(x) => {
                let v = self.value(*x);
                acc(*x, avg_pool2_raw_adjoint(g, v.channels(), v.spatial()));
            }
            Op::Warp { image, field } => {
                let (vi, vf) = (self.value(*image), self.value(*field));
                let mut gi = self.ng(*image).then(|| vec![0.0; vi.len()]);
                let mut gf = vec![0.0; vf.len()];
                warp_raw_backward(
                    vi.data(),
                    vi.channels(),
                    vi.spatial(),
                    vf.data(),
                    g,
                    gi.as_deref_mut(),
                    &mut gf,
                );
                if let Some(gi) = gi {
                    acc(*image, gi);
                }
                acc(*field, gf);
            }
            Op::Ncc { a, b, ga, gb } => {
                acc(*a, ga.iter().map(|e| e * g[0]).collect());
                acc(*b, gb.iter().map(|e| e * g[0]).collect());
            }
            Op::Diffusion(f) => {
                let v = self.value(*f);
                let d = diffusion_grad_raw(v.data(), v.spatial(), v.channels());
                acc(*f, d.into_iter().map(|e| e * g[0]).collect());
            }
            Op::WeightedSum(terms) => {
                for &(s, w) in terms {
                    acc(s, vec![w * g[0]]);
                }
            }
        }
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Var>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params.get(&id).and_then(|&v| self.of(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(n: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    /// Checks d(sum(out * probe))/d(param) against central differences.
    fn check(shapes: &[Vec<usize>], build: impl Fn(&mut Graph, &[Var]) -> Var, tol: f64) {
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let n = s.iter().product();
                store.add(
                    format!("p{i}"),
                    Array::new(s.clone(), pseudo(n, 17 + i as u64)),
                )
            })
            .collect();
        let run = |store: &ParamStore| -> (Graph, Var) {
            let mut g = Graph::new();
            let vars: Vec<Var> = ids.iter().map(|&id| g.param(store, id)).collect();
            let out = build(&mut g, &vars);
            let n = g.value(out).len();
            let flat = g.flatten(out);
            let probe = g.constant(Array::new(vec![1, n], pseudo(n, 99)));
            let zero = g.constant(Array::zeros(vec![1]));
            let scalar = g.linear(flat, probe, zero);
            (g, scalar)
        };
        let (g, scalar) = run(&store);
        let grads = g.backward(scalar);
        let h = 1e-6;
        for (pi, &id) in ids.iter().enumerate() {
            let analytic = grads.param(id).unwrap();
            for (j, &a) in analytic.iter().enumerate() {
                let mut shifted = store.clone();
                shifted.get_mut(id).data_mut()[j] += h;
                let (gp, sp) = run(&shifted);
                shifted.get_mut(id).data_mut()[j] -= 2.0 * h;
                let (gm, sm) = run(&shifted);
                let fd = (gp.value(sp).data()[0] - gm.value(sm).data()[0]) / (2.0 * h);
                let err = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-3);
                assert!(err < tol, "param {pi}[{j}]: fd {fd} vs analytic {a}");
            }
        }
    }

    #[test]
    fn conv_gradients() {
        check(
            &[vec![2, 6, 5], vec![3, 2, 3, 3], vec![3]],
            |g, v| g.conv(v[0], v[1], v[2], 2, 1),
            1e-6,
        );
        check(
            &[vec![2, 4, 3, 3], vec![2, 2, 3, 3, 3], vec![2]],
            |g, v| g.conv(v[0], v[1], v[2], 1, 1),
            1e-6,
        );
    }

    #[test]
    fn conv_transpose_gradients() {
        check(
            &[vec![3, 3, 2], vec![3, 2, 2, 2], vec![2]],
            |g, v| g.conv_transpose2(v[0], v[1], v[2]),
            1e-6,
        );
    }

    #[test]
    fn cin_and_linear_gradients() {
        check(
            &[vec![3, 4, 5], vec![6, 4], vec![6], vec![4]],
            |g, v| {
                let gb = g.linear(v[3], v[1], v[2]);
                let gamma = g.slice(gb, 0, 3);
                let beta = g.slice(gb, 3, 3);
                let h = g.cin(v[0], gamma, beta);
                g.leaky_relu(h, 0.2)
            },
            1e-5,
        );
    }

    #[test]
    fn warp_resample_gradients() {
        check(
            &[vec![2, 5, 6], vec![2, 5, 6]],
            |g, v| {
                let f = g.scale(v[1], 1.3);
                let w = g.warp(v[0], f);
                let u = g.upsample2(w);
                g.avg_pool2(u)
            },
            1e-5,
        );
    }

    #[test]
    fn loss_gradients() {
        check(
            &[vec![1, 6, 7], vec![1, 6, 7], vec![2, 6, 7]],
            |g, v| {
                let n = g.ncc(v[0], v[1], 3);
                let d = g.diffusion(v[2]);
                let s = g.weighted_sum(&[(n, -1.0), (d, 0.7)]);
                let c = g.concat(&[s, s]);
                g.add(c, c)
            },
            1e-5,
        );
    }
}
