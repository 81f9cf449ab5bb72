//! Plain slice kernels shared by the tape's forward and backward rules.
//!
//! Every reduction accumulates in ascending index order so that inserting
//! exact zero terms leaves results bit-identical.

/// `c[m×k] = a[m×n] · b[n×k]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let row = &a[i * n..(i + 1) * n];
        let out = &mut c[i * k..(i + 1) * k];
        for (j, &aij) in row.iter().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            for (o, &bjk) in out.iter_mut().zip(brow) {
                *o += aij * bjk;
            }
        }
    }
    c
}

/// `c[n×k] = aᵀ · b` for `a[m×n]`, `b[m×k]`.
pub fn matmul_tn(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * k];
    for i in 0..m {
        let brow = &b[i * k..(i + 1) * k];
        for j in 0..n {
            let aij = a[i * n + j];
            let out = &mut c[j * k..(j + 1) * k];
            for (o, &bik) in out.iter_mut().zip(brow) {
                *o += aij * bik;
            }
        }
    }
    c
}

/// `c[m×n] = a · bᵀ` for `a[m×k]`, `b[n×k]`.
pub fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).fold(0.0, |s, (x, y)| s + x * y);
        }
    }
    c
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Output extent along one spatial axis, `None` when not integral.
    pub fn out_extent(len: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
        let padded = len + 2 * padding;
        if stride == 0 || padded < k || !(padded - k).is_multiple_of(stride) {
            return None;
        }
        Some((padded - k) / stride + 1)
    }

    fn input_at(&self, oy: usize, ky: usize) -> Option<usize> {
        let y = (oy * self.stride + ky).checked_sub(self.padding)?;
        (y < self.h).then_some(y)
    }

    fn input_at_x(&self, ox: usize, kx: usize) -> Option<usize> {
        let x = (ox * self.stride + kx).checked_sub(self.padding)?;
        (x < self.w).then_some(x)
    }
}

/// Direct cross-correlation, `x[N×C×H×W] ⋆ w[D×C×kh×kw]`.
pub fn conv2d(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.d * g.oh * g.ow];
    for ni in 0..g.n {
        for di in 0..g.d {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0.0;
                    for ci in 0..g.c {
                        for ky in 0..g.kh {
                            let Some(y) = g.input_at(oy, ky) else { continue };
                            for kx in 0..g.kw {
                                let Some(xx) = g.input_at_x(ox, kx) else { continue };
                                let xv = x[((ni * g.c + ci) * g.h + y) * g.w + xx];
                                let wv = w[((di * g.c + ci) * g.kh + ky) * g.kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * g.d + di) * g.oh + oy) * g.ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Gradients of [`conv2d`] with respect to input and kernel.
pub fn conv2d_backward(x: &[f64], w: &[f64], dout: &[f64], g: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    for ni in 0..g.n {
        for di in 0..g.d {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let go = dout[((ni * g.d + di) * g.oh + oy) * g.ow + ox];
                    if go == 0.0 {
                        continue;
                    }
                    for ci in 0..g.c {
                        for ky in 0..g.kh {
                            let Some(y) = g.input_at(oy, ky) else { continue };
                            for kx in 0..g.kw {
                                let Some(xx) = g.input_at_x(ox, kx) else { continue };
                                let xi = ((ni * g.c + ci) * g.h + y) * g.w + xx;
                                let wi = ((di * g.c + ci) * g.kh + ky) * g.kw + kx;
                                dx[xi] += go * w[wi];
                                dw[wi] += go * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2×3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3×2
        let c = matmul(&a, &b, 2, 3, 2);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
        let bt = transpose(&b, 3, 2);
        assert_eq!(matmul_nt(&a, &bt, 2, 3, 2), c);
        let at = transpose(&a, 2, 3);
        assert_eq!(matmul_tn(&at, &b, 3, 2, 2), c);
    }

    #[test]
    fn out_extent_integrality() {
        assert_eq!(ConvGeom::out_extent(3, 3, 1, 0), Some(1));
        assert_eq!(ConvGeom::out_extent(4, 3, 2, 0), None);
        assert_eq!(ConvGeom::out_extent(5, 3, 2, 1), Some(3));
        assert_eq!(ConvGeom::out_extent(2, 3, 1, 0), None);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
