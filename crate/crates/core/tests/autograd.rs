use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use physfuse::autograd::{Graph, Var};
use physfuse::{Result, Tensor};

const H: f64 = 1e-5;

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Builds `f` on fresh leaves, projects the output onto fixed weights, and
/// returns the max relative error of every input gradient against central
/// differences.
fn fd_error(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> f64 {
    let weights = |g: &mut Graph<f64>, out: Var| -> Var {
        let shape = g.shape(out).to_vec();
        let n: usize = shape.iter().product();
        let w: Vec<f64> = (0..n).map(|i| 0.3 + ((i * 7) % 11) as f64 / 10.0).collect();
        g.constant(Tensor::new(shape, w).unwrap())
    };
    let scalar = |inputs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars).unwrap();
        let w = weights(&mut g, out);
        let y = g.mul(out, w).unwrap();
        let s = g.sum(y, None).unwrap();
        g.value(s).data()[0]
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars).unwrap();
    let w = weights(&mut g, out);
    let y = g.mul(out, w).unwrap();
    let s = g.sum(y, None).unwrap();
    g.backward(s).unwrap();

    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            let numeric = (scalar(&plus) - scalar(&minus)) / (2.0 * H);
            let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[4, 5], -1.0, 1.0, &mut rng);
    let b = random(&[5, 3], -1.0, 1.0, &mut rng);
    let err = fd_error(&[a, b], &|g, v| g.matmul(v[0], v[1]));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn mul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = random(&[3, 3], -1.0, 1.0, &mut rng);
    let b = random(&[3, 3], -1.0, 1.0, &mut rng);
    let err = fd_error(&[a, b], &|g, v| g.mul(v[0], v[1]));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn mean_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&[2, 5], -1.0, 1.0, &mut rng);
    for axis in [None, Some(0), Some(1)] {
        let err = fd_error(std::slice::from_ref(&a), &|g, v| g.mean(v[0], axis));
        assert!(err < 1e-6, "{axis:?}: {err}");
    }
}

#[test]
fn backward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut g = Graph::new();
        let a = g.variable(random(&[6, 4], -1.0, 1.0, &mut rng));
        let b = g.variable(random(&[4, 6], -1.0, 1.0, &mut rng));
        let c = g.matmul(a, b).unwrap();
        let s = g.softmax_rows(c).unwrap();
        let l = g.sigmoid(s);
        let loss = g.sum(l, None).unwrap();
        g.backward(loss).unwrap();
        let bits = |v| g.grad(v).unwrap().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        (bits(a), bits(b))
    };
    assert_eq!(run(), run());
}

#[test]
fn shared_input_accumulates() {
    let mut g = Graph::new();
    let x = g.variable(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
    let y = g.add(x, x).unwrap();
    let s = g.sum(y, None).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Relu,
    Sigmoid,
    Exp,
    Log,
    Scale,
    AddScalar,
    Sum0,
    Sum1,
    Mean,
    Max1,
    Transpose,
    Softmax,
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Matmul,
    Concat0,
}

fn unary(g: &mut Graph<f64>, op: Unary, x: Var) -> Result<Var> {
    match op {
        Unary::Relu => Ok(g.relu(x)),
        Unary::Sigmoid => Ok(g.sigmoid(x)),
        Unary::Exp => Ok(g.exp(x)),
        Unary::Log => g.log(x),
        Unary::Scale => Ok(g.scale(x, -1.7)),
        Unary::AddScalar => Ok(g.add_scalar(x, 0.3)),
        Unary::Sum0 => g.sum(x, Some(0)),
        Unary::Sum1 => g.sum(x, Some(1)),
        Unary::Mean => g.mean(x, None),
        Unary::Max1 => g.max(x, Some(1)),
        Unary::Transpose => g.transpose(x),
        Unary::Softmax => g.softmax_rows(x),
    }
}

fn unary_op() -> impl Strategy<Value = Unary> {
    prop_oneof![
        Just(Unary::Relu),
        Just(Unary::Sigmoid),
        Just(Unary::Exp),
        Just(Unary::Log),
        Just(Unary::Scale),
        Just(Unary::AddScalar),
        Just(Unary::Sum0),
        Just(Unary::Sum1),
        Just(Unary::Mean),
        Just(Unary::Max1),
        Just(Unary::Transpose),
        Just(Unary::Softmax),
    ]
}

fn binary_op() -> impl Strategy<Value = Binary> {
    prop_oneof![
        Just(Binary::Add),
        Just(Binary::Sub),
        Just(Binary::Mul),
        Just(Binary::Matmul),
        Just(Binary::Concat0),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn unary_ops_match_finite_differences(op in unary_op(), rows in 1usize..4, cols in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // keep away from the relu kink and from log's pole
        let mut x = random(&[rows, cols], 0.1, 2.0, &mut rng);
        if !matches!(op, Unary::Log) {
            for v in x.data_mut() {
                if rng.random_bool(0.5) {
                    *v = -*v;
                }
            }
        }
        let err = fd_error(&[x], &|g, v| unary(g, op, v[0]));
        prop_assert!(err < 1e-4, "{:?}: {}", op, err);
    }

    #[test]
    fn binary_ops_match_finite_differences(op in binary_op(), m in 1usize..4, k in 1usize..4, n in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[m, k], -1.0, 1.0, &mut rng);
        let b = match op {
            Binary::Matmul => random(&[k, n], -1.0, 1.0, &mut rng),
            Binary::Concat0 => random(&[n, k], -1.0, 1.0, &mut rng),
            _ => random(&[m, k], -1.0, 1.0, &mut rng),
        };
        let err = fd_error(&[a, b], &|g, v| match op {
            Binary::Add => g.add(v[0], v[1]),
            Binary::Sub => g.sub(v[0], v[1]),
            Binary::Mul => g.mul(v[0], v[1]),
            Binary::Matmul => g.matmul(v[0], v[1]),
            Binary::Concat0 => g.concat(&[v[0], v[1]], 0),
        });
        prop_assert!(err < 1e-4, "{:?}: {}", op, err);
    }

    #[test]
    fn structured_ops_match_finite_differences(t in 4usize..9, c_in in 1usize..3, c_out in 1usize..3, k in prop_oneof![Just(1usize), Just(3), Just(5)], stride in 1usize..3, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[c_in, t], -1.0, 1.0, &mut rng);
        let w = random(&[c_out, c_in, k], -1.0, 1.0, &mut rng);
        let b = random(&[c_out], -1.0, 1.0, &mut rng);
        let err = fd_error(&[x, w, b], &|g, v| g.conv1d(v[0], v[1], v[2], stride, (k - 1) / 2));
        prop_assert!(err < 1e-4, "conv1d: {}", err);

        let x = random(&[c_out + 1, t], -1.0, 1.0, &mut rng);
        let gamma = random(&[t], 0.5, 1.5, &mut rng);
        let beta = random(&[t], -0.5, 0.5, &mut rng);
        let err = fd_error(&[x.clone(), gamma, beta], &|g, v| g.layer_norm_rows(v[0], v[1], v[2]));
        prop_assert!(err < 1e-4, "layer_norm: {}", err);

        let row = random(&[t], -1.0, 1.0, &mut rng);
        let err = fd_error(&[x.clone(), row], &|g, v| g.add_row(v[0], v[1]));
        prop_assert!(err < 1e-4, "add_row: {}", err);

        let err = fd_error(std::slice::from_ref(&x), &|g, v| {
            let s = g.slice(v[0], 1, 1, t - 1)?;
            g.reshape(s, &[(c_out + 1) * (t - 2)])
        });
        prop_assert!(err < 1e-4, "slice/reshape: {}", err);

        let logits = random(&[t], -3.0, 3.0, &mut rng);
        let labels: Vec<f64> = (0..t).map(|i| (i % 2) as f64).collect();
        let err = fd_error(&[logits], &|g, v| g.bce_with_logits(v[0], &labels));
        prop_assert!(err < 1e-4, "bce: {}", err);
    }
}
