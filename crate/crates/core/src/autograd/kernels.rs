//! Convolution and matrix kernels shared by the graph operations.

use crate::grid::next_index;

/// `c = alpha * op(a) * op(b) + beta * c` for row-major operands.
///
/// `a` is `m x k` (or `k x m` when `ta`), `b` is `k x n` (or `n x k` when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides describe in-bounds row-major views of `a`, `b` and
    // `c`, whose lengths are checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Tap table of a strided, zero-padded cubic convolution.
#[derive(Clone, Debug)]
pub struct ConvGeometry {
    pub in_dims: Vec<usize>,
    pub out_dims: Vec<usize>,
    pub kernel: usize,
    /// kernel volume `kernel^D`
    pub taps: usize,
    /// `[tap][out_pos]` input flat index, or -1 where padding is read
    index: Vec<i64>,
}

impl ConvGeometry {
    pub fn new(in_dims: &[usize], kernel: usize, stride: usize, pad: usize) -> Self {
        let nd = in_dims.len();
        let out_dims: Vec<usize> = in_dims
            .iter()
            .map(|&n| (n + 2 * pad - kernel) / stride + 1)
            .collect();
        let taps = kernel.pow(nd as u32);
        let p: usize = out_dims.iter().product();
        let in_strides = crate::grid::strides(in_dims);
        let kdims = vec![kernel; nd];
        let mut index = vec![-1i64; taps * p];
        let mut kidx = vec![0usize; nd];
        for t in 0..taps {
            let mut oidx = vec![0usize; nd];
            for pos in 0..p {
                let mut flat = 0i64;
                let mut ok = true;
                for a in 0..nd {
                    let i = (oidx[a] * stride + kidx[a]) as i64 - pad as i64;
                    if i < 0 || i >= in_dims[a] as i64 {
                        ok = false;
                        break;
                    }
                    flat += i * in_strides[a] as i64;
                }
                if ok {
                    index[t * p + pos] = flat;
                }
                next_index(&mut oidx, &out_dims);
            }
            next_index(&mut kidx, &kdims);
        }
        ConvGeometry {
            in_dims: in_dims.to_vec(),
            out_dims,
            kernel,
            taps,
            index,
        }
    }

    pub fn out_len(&self) -> usize {
        self.out_dims.iter().product()
    }

    fn in_len(&self) -> usize {
        self.in_dims.iter().product()
    }

    /// `[cin * taps, out_pos]` patch matrix.
    pub(crate) fn im2col(&self, x: &[f64], cin: usize) -> Vec<f64> {
        let p = self.out_len();
        let n = self.in_len();
        let mut cols = vec![0.0; cin * self.taps * p];
        for c in 0..cin {
            let xc = &x[c * n..(c + 1) * n];
            for t in 0..self.taps {
                let row = &mut cols[(c * self.taps + t) * p..(c * self.taps + t + 1) * p];
                let idx = &self.index[t * p..(t + 1) * p];
                for (dst, &i) in row.iter_mut().zip(idx) {
                    if i >= 0 {
                        *dst = xc[i as usize];
                    }
                }
            }
        }
        cols
    }

    pub(crate) fn col2im(&self, cols: &[f64], cin: usize) -> Vec<f64> {
        let p = self.out_len();
        let n = self.in_len();
        let mut x = vec![0.0; cin * n];
        for c in 0..cin {
            let xc = &mut x[c * n..(c + 1) * n];
            for t in 0..self.taps {
                let row = &cols[(c * self.taps + t) * p..(c * self.taps + t + 1) * p];
                let idx = &self.index[t * p..(t + 1) * p];
                for (&v, &i) in row.iter().zip(idx) {
                    if i >= 0 {
                        xc[i as usize] += v;
                    }
                }
            }
        }
        x
    }
}

/// Forward convolution; returns the output and the patch matrix for reuse.
pub fn conv_forward(
    geom: &ConvGeometry,
    x: &[f64],
    cin: usize,
    w: &[f64],
    b: &[f64],
    cout: usize,
) -> (Vec<f64>, Vec<f64>) {
    let p = geom.out_len();
    let cols = geom.im2col(x, cin);
    let mut y = vec![0.0; cout * p];
    for (co, row) in y.chunks_exact_mut(p).enumerate() {
        row.fill(b[co]);
    }
    gemm(
        cout,
        cin * geom.taps,
        p,
        w,
        false,
        &cols,
        false,
        1.0,
        &mut y,
    );
    (y, cols)
}

/// Gradients of a convolution: `(dx, dw, db)`; `dx` only when requested.
pub(crate) fn conv_backward(
    geom: &ConvGeometry,
    cols: &[f64],
    cin: usize,
    w: &[f64],
    cout: usize,
    dy: &[f64],
    want_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let p = geom.out_len();
    let kk = cin * geom.taps;
    let mut dw = vec![0.0; cout * kk];
    gemm(cout, p, kk, dy, false, cols, true, 0.0, &mut dw);
    let db = dy.chunks_exact(p).map(|r| r.iter().sum()).collect();
    let dx = want_dx.then(|| {
        let mut dcols = vec![0.0; kk * p];
        gemm(kk, cout, p, w, true, dy, false, 0.0, &mut dcols);
        geom.col2im(&dcols, cin)
    });
    (dx, dw, db)
}

/// Output flat index of every `(tap, input position)` pair for a
/// kernel-2 / stride-2 transposed convolution.
pub(crate) fn up2_scatter_index(in_dims: &[usize]) -> Vec<usize> {
    let nd = in_dims.len();
    let out_dims: Vec<usize> = in_dims.iter().map(|d| 2 * d).collect();
    let ost = crate::grid::strides(&out_dims);
    let taps = 1 << nd;
    let p: usize = in_dims.iter().product();
    let mut out = vec![0usize; taps * p];
    for t in 0..taps {
        // tap bits: axis 0 is the most significant, matching C-order kernels
        let mut iidx = vec![0usize; nd];
        for pos in 0..p {
            let mut flat = 0;
            for a in 0..nd {
                let bit = (t >> (nd - 1 - a)) & 1;
                flat += (2 * iidx[a] + bit) * ost[a];
            }
            out[t * p + pos] = flat;
            next_index(&mut iidx, in_dims);
        }
    }
    out
}

/// Kernel-2 / stride-2 transposed convolution. `w` is `[cin, cout, 2^D]`.
pub(crate) fn conv_t_forward(
    in_dims: &[usize],
    scatter: &[usize],
    x: &[f64],
    cin: usize,
    w: &[f64],
    b: &[f64],
    cout: usize,
) -> Vec<f64> {
    let p: usize = in_dims.iter().product();
    let taps = 1 << in_dims.len();
    let rows = cout * taps;
    let mut z = vec![0.0; rows * p];
    gemm(rows, cin, p, w, true, x, false, 0.0, &mut z);
    let out_n = p * taps;
    let mut y = vec![0.0; cout * out_n];
    for co in 0..cout {
        let yc = &mut y[co * out_n..(co + 1) * out_n];
        for t in 0..taps {
            let zr = &z[(co * taps + t) * p..(co * taps + t + 1) * p];
            let sc = &scatter[t * p..(t + 1) * p];
            for (&v, &o) in zr.iter().zip(sc) {
                yc[o] = v + b[co];
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_t_backward(
    in_dims: &[usize],
    scatter: &[usize],
    x: &[f64],
    cin: usize,
    w: &[f64],
    cout: usize,
    dy: &[f64],
    want_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let p: usize = in_dims.iter().product();
    let taps = 1 << in_dims.len();
    let rows = cout * taps;
    let out_n = p * taps;
    let mut dz = vec![0.0; rows * p];
    let mut db = vec![0.0; cout];
    for co in 0..cout {
        let dyc = &dy[co * out_n..(co + 1) * out_n];
        db[co] = dyc.iter().sum();
        for t in 0..taps {
            let dzr = &mut dz[(co * taps + t) * p..(co * taps + t + 1) * p];
            let sc = &scatter[t * p..(t + 1) * p];
            for (d, &o) in dzr.iter_mut().zip(sc) {
                *d = dyc[o];
            }
        }
    }
    let mut dw = vec![0.0; cin * rows];
    gemm(cin, p, rows, x, false, &dz, true, 0.0, &mut dw);
    let dx = want_dx.then(|| {
        let mut dx = vec![0.0; cin * p];
        gemm(cin, rows, p, w, false, &dz, false, 0.0, &mut dx);
        dx
    });
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2,3],[4,5,6]] (2x3), b = [[1,0],[0,1],[1,1]] (3x2)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // a^T stored as 3x2
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = [0.0; 4];
        gemm(2, 3, 2, &at, true, &bt, true, 0.0, &mut c2);
        assert_eq!(c2, c);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let dims = [5usize, 6];
        let (cin, cout) = (2, 3);
        let x: Vec<f64> = (0..cin * 30).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let w: Vec<f64> = (0..cout * cin * 9)
            .map(|i| ((i * 5) % 11) as f64 * 0.1)
            .collect();
        let b = vec![0.5, -1.0, 2.0];
        for (stride, pad) in [(1, 1), (2, 1)] {
            let g = ConvGeometry::new(&dims, 3, stride, pad);
            let (y, _) = conv_forward(&g, &x, cin, &w, &b, cout);
            let (oh, ow) = (g.out_dims[0], g.out_dims[1]);
            for co in 0..cout {
                for r in 0..oh {
                    for c in 0..ow {
                        let mut s = b[co];
                        for ci in 0..cin {
                            for kr in 0..3 {
                                for kc in 0..3 {
                                    let ir = (r * stride + kr) as i64 - pad as i64;
                                    let ic = (c * stride + kc) as i64 - pad as i64;
                                    if ir >= 0 && ir < 5 && ic >= 0 && ic < 6 {
                                        s += w[((co * cin + ci) * 3 + kr) * 3 + kc]
                                            * x[ci * 30 + ir as usize * 6 + ic as usize];
                                    }
                                }
                            }
                        }
                        assert!((y[(co * oh + r) * ow + c] - s).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn transposed_conv_matches_direct_scatter() {
        let dims = [2usize, 3];
        let (cin, cout) = (2, 2);
        let x: Vec<f64> = (0..cin * 6).map(|i| i as f64 + 1.0).collect();
        let w: Vec<f64> = (0..cin * cout * 4)
            .map(|i| (i as f64) * 0.25 - 1.0)
            .collect();
        let b = vec![0.1, 0.2];
        let sc = up2_scatter_index(&dims);
        let y = conv_t_forward(&dims, &sc, &x, cin, &w, &b, cout);
        for co in 0..cout {
            for r in 0..4 {
                for c in 0..6 {
                    let (ir, ic, kr, kc) = (r / 2, c / 2, r % 2, c % 2);
                    let mut s = b[co];
                    for ci in 0..cin {
                        s += w[(ci * cout + co) * 4 + kr * 2 + kc] * x[ci * 6 + ir * 3 + ic];
                    }
                    assert!((y[co * 24 + r * 6 + c] - s).abs() < 1e-12);
                }
            }
        }
    }
}
