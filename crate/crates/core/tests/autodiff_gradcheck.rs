mod common;

use common::{check_unary, max_rel_err, numeric_grad, random_tensor};
use lumos::autodiff::{RngStream, Tape, Tensor};

const H: f64 = 1e-5;

fn input(seed: u64, lo: f64, hi: f64) -> Tensor {
    random_tensor(&mut RngStream::new(seed), &[3, 4], lo, hi)
}

#[test]
fn elementwise_primitives_match_finite_differences() {
    let x = input(1, -2.0, 2.0);
    let other = input(2, -2.0, 2.0);
    let bias = random_tensor(&mut RngStream::new(3), &[4], -1.0, 1.0);
    let rows = random_tensor(&mut RngStream::new(4), &[3], -1.0, 1.0);
    let checks: Vec<(&str, f64)> = vec![
        ("add", check_unary(&x, H, |t, v| { let o = t.constant(other.clone()); t.add(v, o) })),
        ("add_rhs", check_unary(&x, H, |t, v| { let o = t.constant(other.clone()); t.add(o, v) })),
        ("sub", check_unary(&x, H, |t, v| { let o = t.constant(other.clone()); t.sub(o, v) })),
        ("mul", check_unary(&x, H, |t, v| { let o = t.constant(other.clone()); t.mul(v, o) })),
        ("square", check_unary(&x, H, |t, v| t.mul(v, v))),
        ("scale", check_unary(&x, H, |t, v| t.scale(v, -1.7))),
        ("add_scalar", check_unary(&x, H, |t, v| t.add_scalar(v, 0.3))),
        ("sigmoid", check_unary(&x, H, |t, v| t.sigmoid(v))),
        ("relu", check_unary(&x, H, |t, v| t.relu(v))),
        ("tanh", check_unary(&x, H, |t, v| t.tanh(v))),
        ("exp", check_unary(&x, H, |t, v| t.exp(v))),
        ("clip01", check_unary(&input(5, -0.5, 1.5), H, |t, v| t.clip01(v))),
        ("log", check_unary(&input(6, 0.5, 2.0), H, |t, v| t.log(v))),
        ("sum", check_unary(&x, H, |t, v| t.sum(v))),
        ("mean", check_unary(&x, H, |t, v| t.mean(v))),
        ("softmax", check_unary(&x, H, |t, v| t.softmax(v))),
        ("log_softmax", check_unary(&x, H, |t, v| t.log_softmax(v))),
        ("gather_rows", check_unary(&x, H, |t, v| t.gather_rows(v, &[2, 0, 2]))),
        ("gather_cols", check_unary(&x, H, |t, v| t.gather(v, 1, &[3, 1]))),
        ("concat_axis0", check_unary(&x, H, |t, v| { let o = t.constant(other.clone()); t.concat(&[o, v], 0) })),
        ("concat_axis1", check_unary(&x, H, |t, v| t.concat(&[v, v], 1))),
        ("transpose", check_unary(&x, H, |t, v| t.transpose(v))),
        ("reshape", check_unary(&x, H, |t, v| t.reshape(v, &[2, 6]))),
        ("add_along", check_unary(&x, H, |t, v| { let b = t.constant(bias.clone()); t.add_along(v, b, 1) })),
        ("add_along_vec", check_unary(&bias, H, |t, b| { let a = t.constant(x.clone()); t.add_along(a, b, 1) })),
        ("mul_along", check_unary(&x, H, |t, v| { let s = t.constant(rows.clone()); t.mul_along(v, s, 0) })),
        ("mul_along_vec", check_unary(&rows, H, |t, s| { let a = t.constant(x.clone()); t.mul_along(a, s, 0) })),
        ("mul_scalar", check_unary(&Tensor::scalar(0.7), H, |t, s| { let a = t.constant(x.clone()); t.mul_scalar(a, s) })),
    ];
    for (name, err) in checks {
        println!("{name:>14}: rel err {err:.2e}");
        assert!(err < 1e-4, "{name} gradient rel err {err}");
    }
}

#[test]
fn matmul_gradient_is_ones_times_b_transposed() {
    let mut rng = RngStream::new(11);
    let a = random_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let b = random_tensor(&mut rng, &[4, 2], -1.0, 1.0);
    let mut tape = Tape::new();
    let av = tape.leaf(a.clone());
    let bv = tape.leaf(b.clone());
    let c = tape.matmul(av, bv).unwrap();
    let s = tape.sum(c).unwrap();
    let grads = tape.backward(s).unwrap();
    let ga = grads.get(av).unwrap();
    // ones[3×2] · Bᵀ: every row equals the row sums of B.
    let row_sums: Vec<f64> = (0..4).map(|j| b.data()[j * 2] + b.data()[j * 2 + 1]).collect();
    let expected: Vec<f64> = (0..3).flat_map(|_| row_sums.clone()).collect();
    assert!(max_rel_err(ga.data(), &expected) < 1e-12);
    let numeric = numeric_grad(&a, H, |p| {
        let mut t = Tape::new();
        let x = t.constant(p.clone());
        let y = t.constant(b.clone());
        let c = t.matmul(x, y).unwrap();
        let s = t.sum(c).unwrap();
        t.scalar_value(s)
    });
    let err = max_rel_err(ga.data(), &numeric);
    assert!(err < 1e-6, "matmul rel err {err}");
    assert!(check_unary(&b, H, |t, v| { let x = t.constant(a.clone()); t.matmul(x, v) }) < 1e-6);
}

#[test]
fn conv_kernel_and_input_gradients_match_finite_differences() {
    let mut rng = RngStream::new(21);
    let x = random_tensor(&mut rng, &[2, 2, 4, 4], -1.0, 1.0);
    let w3 = random_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
    let w2 = random_tensor(&mut rng, &[3, 2, 2, 2], -1.0, 1.0);
    for (w, stride, padding) in [(&w3, 1, 0), (&w3, 1, 1), (&w2, 2, 0), (&w2, 2, 1)] {
        let kernel_err = check_unary(w, H, |t, v| { let xi = t.constant(x.clone()); t.conv2d(xi, v, stride, padding) });
        let input_err = check_unary(&x, H, |t, v| { let wi = t.constant(w.clone()); t.conv2d(v, wi, stride, padding) });
        println!("stride {stride} pad {padding}: kernel {kernel_err:.2e} input {input_err:.2e}");
        assert!(kernel_err < 1e-5);
        assert!(input_err < 1e-5);
    }
}

#[test]
fn clip01_is_idempotent() {
    let mut rng = RngStream::new(31);
    let x = random_tensor(&mut rng, &[1000], -3.0, 3.0);
    let mut tape = Tape::new();
    let v = tape.constant(x);
    let once = tape.clip01(v).unwrap();
    let twice = tape.clip01(once).unwrap();
    assert_eq!(tape.value(once), tape.value(twice));
}

#[test]
fn composite_loss_gradient() {
    // mean((sigmoid(x·W + b) - y)^2) with every parameter checked.
    let mut rng = RngStream::new(41);
    let x = random_tensor(&mut rng, &[5, 3], -1.0, 1.0);
    let w = random_tensor(&mut rng, &[3, 2], -1.0, 1.0);
    let b = random_tensor(&mut rng, &[2], -1.0, 1.0);
    let y = random_tensor(&mut rng, &[5, 2], 0.0, 1.0);
    let loss = |t: &mut Tape, wv, bv| {
        let xv = t.constant(x.clone());
        let yv = t.constant(y.clone());
        let z = t.matmul(xv, wv).unwrap();
        let z = t.add_along(z, bv, 1).unwrap();
        let p = t.sigmoid(z).unwrap();
        let d = t.sub(p, yv).unwrap();
        let sq = t.mul(d, d).unwrap();
        t.mean(sq).unwrap()
    };
    let mut tape = Tape::new();
    let wv = tape.leaf(w.clone());
    let bv = tape.leaf(b.clone());
    let l = loss(&mut tape, wv, bv);
    let g = tape.backward(l).unwrap();
    let nw = numeric_grad(&w, H, |p| {
        let mut t = Tape::new();
        let (wv, bv) = (t.constant(p.clone()), t.constant(b.clone()));
        let l = loss(&mut t, wv, bv);
        t.scalar_value(l)
    });
    let nb = numeric_grad(&b, H, |p| {
        let mut t = Tape::new();
        let (wv, bv) = (t.constant(w.clone()), t.constant(p.clone()));
        let l = loss(&mut t, wv, bv);
        t.scalar_value(l)
    });
    assert!(max_rel_err(g.get(wv).unwrap().data(), &nw) < 1e-4);
    assert!(max_rel_err(g.get(bv).unwrap().data(), &nb) < 1e-4);
}
