use dxmi_core::nets::{Activation, MlpSpec};
use dxmi_core::optim::Optimizer;
use dxmi_core::rng::Rng;
use dxmi_core::{Tape, Tensor, Var};

const H: f64 = 1e-5;

/// Max relative error between the taped gradient and central differences of
/// `f` at `x`. `f` builds a scalar from a single leaf.
fn gradcheck(x: &Tensor, f: &dyn Fn(&mut Tape, Var) -> Var) -> f64 {
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone());
    let root = f(&mut tape, v);
    let g = tape.backward(root).unwrap().wrt(v);
    let eval = |p: &Tensor| {
        let mut t = Tape::new();
        let v = t.constant(p.clone());
        let r = f(&mut t, v);
        t.value(r).item()
    };
    let mut worst: f64 = 0.0;
    for i in 0..x.numel() {
        let mut up = x.clone();
        up.data_mut()[i] += H;
        let mut dn = x.clone();
        dn.data_mut()[i] -= H;
        let fd = (eval(&up) - eval(&dn)) / (2.0 * H);
        let an = g.data()[i];
        let err = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3);
        worst = worst.max(err);
    }
    worst
}

fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_in(-2.0, 2.0)).collect()).unwrap()
}

#[test]
fn identity_and_sum_of_squares() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    assert_eq!(tape.backward(x).unwrap().wrt(x).item(), 1.0);

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, -2.0]));
    let sq = tape.square(x);
    let s = tape.sum(sq);
    assert_eq!(tape.backward(s).unwrap().wrt(x).data(), &[2.0, -4.0]);
}

#[test]
fn stop_gradient_cuts_one_branch() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(5.0));
    let s = tape.stop_gradient(x);
    let p = tape.mul(s, x).unwrap();
    assert_eq!(tape.backward(p).unwrap().wrt(x).item(), 5.0);
    assert_eq!(tape.backward(s).unwrap().wrt(x).item(), 0.0);
}

#[test]
fn unary_primitives_gradcheck() {
    let mut rng = Rng::from_seed(11);
    type Op = fn(&mut Tape, Var) -> Var;
    let ops: [(&str, Op); 8] = [
        ("tanh", |t, v| t.tanh(v)),
        ("softplus", |t, v| t.softplus(v)),
        ("sigmoid", |t, v| t.sigmoid(v)),
        ("silu", |t, v| t.silu(v)),
        ("exp", |t, v| t.exp(v)),
        ("square", |t, v| t.square(v)),
        ("neg", |t, v| t.neg(v)),
        ("log_softplus", |t, v| {
            let s = t.softplus(v);
            t.log(s)
        }),
    ];
    for (name, op) in ops {
        for _ in 0..100 {
            let x = random_tensor(&mut rng, &[3, 2]);
            let err = gradcheck(&x, &|t, v| {
                let y = op(t, v);
                let w = t.constant(Tensor::matrix(3, 2, vec![0.3, -1.1, 0.7, 2.0, -0.4, 1.3]));
                let z = t.mul(y, w).unwrap();
                t.sum(z)
            });
            assert!(err <= 1e-4, "{name}: rel err {err}");
        }
    }
}

#[test]
fn binary_and_structural_primitives_gradcheck() {
    let mut rng = Rng::from_seed(12);
    for _ in 0..100 {
        let x = random_tensor(&mut rng, &[4, 3]);
        let w = random_tensor(&mut rng, &[3, 2]);
        let b = random_tensor(&mut rng, &[2]);
        let other = random_tensor(&mut rng, &[4, 3]);
        let f = |t: &mut Tape, v: Var| {
            let wv = t.constant(w.clone());
            let bv = t.constant(b.clone());
            let ov = t.constant(other.clone());
            let prod = t.mul(v, ov).unwrap();
            let diff = t.sub(prod, v).unwrap();
            let sum = t.add(diff, ov).unwrap();
            let aff = t.affine(sum, wv, bv).unwrap();
            let mm = t.matmul(v, wv).unwrap();
            let cat = t.concat_cols(aff, mm).unwrap();
            let rs = t.row_sum(cat);
            let sc = t.scale(rs, 0.7);
            let ac = t.add_const(sc, 0.1);
            let sq = t.square(ac);
            let m = t.mean(sq);
            let i = t.index(v, 5).unwrap();
            let bc = t.broadcast(i, &[4, 1]).unwrap();
            let ms = t.mul_scalar(rs, i).unwrap();
            let tail = t.add(ms, bc).unwrap();
            let tail = t.mean(tail);
            t.add(m, tail).unwrap()
        };
        let err = gradcheck(&x, &f);
        assert!(err <= 1e-4, "rel err {err}");
        let err = gradcheck(&w, &|t, wv| {
            let xv = t.constant(x.clone());
            let bv = t.constant(b.clone());
            let a = t.affine(xv, wv, bv).unwrap();
            let a = t.tanh(a);
            t.sum(a)
        });
        assert!(err <= 1e-4, "weight rel err {err}");
        let err = gradcheck(&b, &|t, bv| {
            let xv = t.constant(x.clone());
            let wv = t.constant(w.clone());
            let a = t.matmul(xv, wv).unwrap();
            let a = t.add_row(a, bv).unwrap();
            let a = t.softplus(a);
            t.mean(a)
        });
        assert!(err <= 1e-4, "bias rel err {err}");
    }
}

#[test]
fn composed_mlp_gradcheck() {
    let mut rng = Rng::from_seed(13);
    for (k, act) in [Activation::Tanh, Activation::Softplus, Activation::Silu].into_iter().cycle().take(100).enumerate() {
        let spec = MlpSpec { input_dim: 2, hidden_dims: vec![5, 4], output_dim: 1, activation: act, final_layer_scale: 1.0 };
        let params = spec.init(k as u64).unwrap();
        let x = random_tensor(&mut rng, &[3, 2]);
        for target in 0..params.len() {
            let err = gradcheck(&params.tensors[target], &|t, p| {
                let vars: Vec<Var> = params
                    .tensors
                    .iter()
                    .enumerate()
                    .map(|(i, v)| if i == target { p } else { t.constant(v.clone()) })
                    .collect();
                let xv = t.constant(x.clone());
                let y = spec.forward(t, &vars, xv).unwrap();
                let y = t.square(y);
                t.mean(y)
            });
            assert!(err <= 1e-4, "{act:?} param {target}: rel err {err}");
        }
    }
}

#[test]
fn gradients_are_deterministic() {
    let spec = MlpSpec { input_dim: 2, hidden_dims: vec![16], output_dim: 1, activation: Activation::Silu, final_layer_scale: 1.0 };
    let params = spec.init(4).unwrap();
    let x = Tensor::matrix(2, 2, vec![0.1, 0.2, -0.3, 0.4]);
    let run = || {
        let mut t = Tape::new();
        let vars = params.bind(&mut t, true);
        let xv = t.constant(x.clone());
        let y = spec.forward(&mut t, &vars, xv).unwrap();
        let m = t.mean(y);
        t.backward(m).unwrap().wrt_all(&vars)
    };
    let (a, b) = (run(), run());
    for (ga, gb) in a.iter().zip(&b) {
        let bits_a: Vec<u64> = ga.data().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = gb.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }
}

#[test]
fn nan_and_non_scalar_roots_are_errors() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::vector(vec![-1.0]));
    let l = t.log(x);
    let s = t.sum(l);
    assert!(t.backward(s).is_err());
    let y = t.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert!(t.backward(y).is_err());
}

#[test]
fn adam_hand_trace() {
    // f(w) = w², w0 = 1, lr = 0.1.
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
    let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
    let mut expect = vec![];
    for k in 1..=3 {
        let g = 2.0 * w;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(k));
        let vh = v / (1.0 - b2.powi(k));
        w -= lr * mh / (vh.sqrt() + eps);
        expect.push(w);
    }
    let mut params = vec![Tensor::scalar(1.0)];
    let mut opt = Optimizer::adam(lr, &params);
    for want in expect {
        let g = Tensor::scalar(2.0 * params[0].item());
        opt.step(&mut params, &[g]).unwrap();
        assert!((params[0].item() - want).abs() <= 1e-12);
    }
}

#[test]
fn zero_lr_is_identity_for_both_optimizers() {
    let init = vec![Tensor::vector(vec![-0.0, 1.5, -3.25]), Tensor::scalar(7.0)];
    let grads = vec![Tensor::vector(vec![1.0, -2.0, 3.0]), Tensor::scalar(-4.0)];
    for mut opt in [Optimizer::sgd(0.0), Optimizer::adam(0.0, &init)] {
        let mut p = init.clone();
        for _ in 0..3 {
            opt.step(&mut p, &grads).unwrap();
        }
        for (a, b) in p.iter().zip(&init) {
            let ab: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }
}

#[test]
fn adam_first_step_is_lr_sign() {
    let mut p = vec![Tensor::scalar(0.5)];
    let mut opt = Optimizer::adam(0.01, &p);
    opt.step(&mut p, &[Tensor::scalar(2.0)]).unwrap();
    assert!((p[0].item() - 0.49).abs() < 1e-8);
}
