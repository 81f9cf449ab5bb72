#![allow(dead_code)]

use lumos::autodiff::{RngStream, Tape, Tensor, TensorError, Var};

/// Central finite differences of a scalar function of one tensor.
pub fn numeric_grad(x: &Tensor, h: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = f(&probe);
            probe.data_mut()[i] = orig - h;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with a small floor on the denominator so that exact-zero
/// gradients compare on an absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| rel_err(*x, *y)).fold(0.0, f64::max)
}

pub fn random_tensor(rng: &mut RngStream, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    lumos::autodiff::uniform_sample(rng, lo, hi, shape)
}

/// Analytic gradient of `build(x)` (reduced by a fixed random projection to a
/// scalar) against central differences of the same forward.
pub fn check_unary(
    x: &Tensor,
    h: f64,
    build: impl Fn(&mut Tape, Var) -> Result<Var, TensorError>,
) -> f64 {
    let weights = {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let out = build(&mut tape, v).unwrap();
        let mut rng = RngStream::new(77);
        random_tensor(&mut rng, tape.shape(out), -1.0, 1.0)
    };
    let scalar = |t: &mut Tape, v: Var| -> Var {
        let out = build(t, v).unwrap();
        let w = t.constant(weights.clone());
        let p = t.mul(out, w).unwrap();
        t.sum(p).unwrap()
    };
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let s = scalar(&mut tape, v);
    let analytic = tape.backward(s).unwrap().get_or_zeros(v);
    let numeric = numeric_grad(x, h, |p| {
        let mut t = Tape::new();
        let v = t.constant(p.clone());
        let s = scalar(&mut t, v);
        t.scalar_value(s)
    });
    max_rel_err(analytic.data(), &numeric)
}

pub mod topologies;
