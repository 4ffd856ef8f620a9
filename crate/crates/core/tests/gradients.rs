//! Every tape primitive against central finite differences in 64-bit mode,
//! on inputs drawn uniformly from [-1, 1].

use bistream_core::gradcheck::grad_check;
use bistream_core::{rng, Graph, Result, Tensor, Var};
use proptest::prelude::*;
use rand::Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::seeded(seed);
    Tensor::from_fn(shape, |_| r.random_range(-1.0..1.0))
}

/// `sum(out ⊙ w)` with fixed random `w`, so every output coordinate gets a
/// distinct upstream gradient.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let w = g.constant(uniform(&g.shape(out).to_vec(), seed ^ 0x5eed));
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn check<F>(name: &str, shape: &[usize], seed: u64, mut f: F)
where
    F: FnMut(&mut Graph<f64>, Var, u64) -> Result<Var>,
{
    let x = uniform(shape, seed);
    let r = grad_check(
        |g, v| {
            let out = f(g, v, seed)?;
            project(g, out, seed)
        },
        &x,
        H,
        TOL,
    )
    .unwrap();
    assert!(r.passed(), "{name}: {:?}", r.worst());
}

/// A second operand as a constant.
fn other(g: &mut Graph<f64>, shape: &[usize], seed: u64) -> Var {
    g.constant(uniform(shape, seed.wrapping_add(1)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn matrix_primitives(seed in any::<u64>()) {
        check("matmul lhs", &[3, 4], seed, |g, x, s| { let b = other(g, &[4, 2], s); g.matmul(x, b) });
        check("matmul rhs", &[4, 2], seed, |g, x, s| { let a = other(g, &[3, 4], s); g.matmul(a, x) });
        check("matmul_bt lhs", &[3, 4], seed, |g, x, s| { let b = other(g, &[5, 4], s); g.matmul_bt(x, b) });
        check("matmul_bt rhs", &[5, 4], seed, |g, x, s| { let a = other(g, &[3, 4], s); g.matmul_bt(a, x) });
        check("linear input", &[2, 3], seed, |g, x, s| {
            let w = other(g, &[4, 3], s);
            let b = other(g, &[4], s + 7);
            g.linear(x, w, Some(b))
        });
        check("linear weight", &[4, 3], seed, |g, w, s| { let x = other(g, &[2, 3], s); g.linear(x, w, None) });
        check("linear bias", &[4], seed, |g, b, s| {
            let x = other(g, &[2, 3], s);
            let w = other(g, &[4, 3], s + 3);
            g.linear(x, w, Some(b))
        });
    }

    #[test]
    fn convolution(seed in any::<u64>()) {
        check("conv2d input", &[2, 2, 5, 5], seed, |g, x, s| {
            let w = other(g, &[3, 2, 3, 3], s);
            let b = other(g, &[3], s + 1);
            g.conv2d(x, w, Some(b), 2, 1)
        });
        check("conv2d weight", &[3, 2, 3, 3], seed, |g, w, s| {
            let x = other(g, &[2, 2, 5, 5], s);
            g.conv2d(x, w, None, 1, 1)
        });
        check("conv2d bias", &[3], seed, |g, b, s| {
            let x = other(g, &[1, 2, 4, 4], s);
            let w = other(g, &[3, 2, 3, 3], s + 2);
            g.conv2d(x, w, Some(b), 2, 0)
        });
    }

    #[test]
    fn elementwise(seed in any::<u64>()) {
        let sh = [2, 3];
        check("add", &sh, seed, |g, x, s| { let y = other(g, &sh, s); g.add(x, y) });
        check("sub", &sh, seed, |g, x, s| { let y = other(g, &sh, s); g.sub(y, x) });
        check("mul", &sh, seed, |g, x, s| { let y = other(g, &sh, s); g.mul(x, y) });
        check("mul self", &sh, seed, |g, x, _| g.mul(x, x));
        check("add_row", &sh, seed, |g, x, s| { let r = other(g, &[3], s); g.add_row(x, r) });
        check("add_row row", &[3], seed, |g, r, s| { let x = other(g, &sh, s); g.add_row(x, r) });
        check("mul_row", &sh, seed, |g, x, s| { let r = other(g, &[3], s); g.mul_row(x, r) });
        check("mul_row row", &[3], seed, |g, r, s| { let x = other(g, &sh, s); g.mul_row(x, r) });
        check("scale", &sh, seed, |g, x, _| g.scale(x, -1.7));
        check("neg", &sh, seed, |g, x, _| g.neg(x));
        check("add_scalar", &sh, seed, |g, x, _| g.add_scalar(x, 0.3));
        check("tanh", &sh, seed, |g, x, _| g.tanh(x));
        check("sigmoid", &sh, seed, |g, x, _| g.sigmoid(x));
        check("relu", &sh, seed, |g, x, _| g.relu(x));
        check("softplus", &sh, seed, |g, x, _| g.softplus(x));
        check("exp", &sh, seed, |g, x, _| g.exp(x));
        check("square", &sh, seed, |g, x, _| g.square(x));
        // log and sqrt need positive arguments
        check("log", &sh, seed, |g, x, _| { let q = g.square(x)?; let p = g.add_scalar(q, 0.5)?; g.log(p) });
        check("sqrt", &sh, seed, |g, x, _| { let q = g.square(x)?; let p = g.add_scalar(q, 0.5)?; g.sqrt(p) });
    }

    #[test]
    fn normalisers_and_reductions(seed in any::<u64>()) {
        check("softmax", &[3, 4], seed, |g, x, _| g.softmax(x));
        check("log_softmax", &[3, 4], seed, |g, x, _| g.log_softmax(x));
        check("sum", &[2, 3], seed, |g, x, _| { let s = g.sum(x)?; g.square(s) });
        check("mean", &[2, 3], seed, |g, x, _| { let m = g.mean(x)?; g.square(m) });
        check("sum_last", &[2, 3, 4], seed, |g, x, _| g.sum_last(x));
        check("global_avg_pool", &[2, 3, 3, 2], seed, |g, x, _| g.global_avg_pool(x));
        check("pick", &[2, 5], seed, |g, x, _| g.pick(x, &[0, 3, 7, 3]));
    }

    #[test]
    fn shape_primitives(seed in any::<u64>()) {
        check("reshape", &[2, 6], seed, |g, x, _| g.reshape(x, &[3, 4]));
        check("permute", &[2, 3, 4], seed, |g, x, _| g.permute(x, &[2, 0, 1]));
        check("transpose", &[3, 5], seed, |g, x, _| g.transpose(x));
        check("concat", &[2, 3], seed, |g, x, s| { let y = other(g, &[2, 2], s); g.concat(&[x, y, x], 1) });
        check("slice", &[4, 3], seed, |g, x, _| g.slice(x, 0, 1, 3));
    }
}

#[test]
fn backward_is_linear_in_the_loss() {
    let x = uniform(&[3, 4], 11);
    let parts = |g: &mut Graph<f64>, v: Var| -> (Var, Var) {
        let a = g.tanh(v).unwrap();
        let a = g.sum(a).unwrap();
        let b = g.softmax(v).unwrap();
        let b = g.square(b).unwrap();
        let b = g.sum(b).unwrap();
        (a, b)
    };
    let grad_of = |which: u8| -> Tensor<f64> {
        let mut g = Graph::new();
        let v = g.input(x.clone(), true);
        let (a, b) = parts(&mut g, v);
        let loss = match which {
            0 => a,
            1 => b,
            _ => g.add(a, b).unwrap(),
        };
        g.backward(loss).unwrap().leaf(v).unwrap().clone()
    };
    let (ga, gb, gs) = (grad_of(0), grad_of(1), grad_of(2));
    for i in 0..x.len() {
        assert!((ga.data()[i] + gb.data()[i] - gs.data()[i]).abs() < 1e-14);
    }
}

#[test]
fn forward_is_bit_identical_across_runs() {
    let run = || {
        let mut g = Graph::<f64>::new();
        let x = g.input(uniform(&[1, 2, 6, 6], 4), true);
        let w = g.constant(uniform(&[3, 2, 3, 3], 5));
        let y = g.conv2d(x, w, None, 2, 1).unwrap();
        let y = g.tanh(y).unwrap();
        let y = g.global_avg_pool(y).unwrap();
        let y = g.softmax(y).unwrap();
        g.value(y).clone()
    };
    assert_eq!(run(), run());
}
