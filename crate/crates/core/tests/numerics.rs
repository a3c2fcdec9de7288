use hsplat_core::numerics::{
    gradcheck, mse, NumericsError, Objective, Real, Tape, Tensor, Var,
};
use hsplat_core::verify;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

#[test]
fn every_primitive_passes_randomized_gradcheck() {
    let checks = verify::primitives(7, 10).unwrap();
    assert_eq!(checks.len(), verify::PRIMITIVES.len());
    for c in checks {
        assert!(c.passed, "{}: max rel error {:.3e}", c.name, c.max_rel_error);
    }
}

struct ReluMatVec {
    v: Tensor<f32>,
}

impl Objective for ReluMatVec {
    fn eval<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        w: Var<'t, T>,
    ) -> Result<Var<'t, T>, NumericsError> {
        let v = tape.constant(self.v.cast());
        w.matmul(v)?.relu()?.sum()
    }
}

#[test]
fn relu_of_matvec_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = random_tensor(&mut rng, &[4, 4], -1.0, 1.0);
    let v = random_tensor(&mut rng, &[4, 1], -1.0, 1.0);
    let report = gradcheck(&ReluMatVec { v }, &w, 1e-3, 1e-4).unwrap();
    assert!(report.passed, "max rel error {:.3e}", report.max_rel_error);
}

struct Sum;
impl Objective for Sum {
    fn eval<'t, T: Real>(&self, _: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        x.sum()
    }
}

struct MeanSquares;
impl Objective for MeanSquares {
    fn eval<'t, T: Real>(&self, _: &'t Tape<T>, x: Var<'t, T>) -> Result<Var<'t, T>, NumericsError> {
        x.square()?.mean()
    }
}

#[test]
fn gradcheck_of_sum_is_exact() {
    let x = Tensor::new(&[5], vec![0.3, -1.0, 2.5, 7.0, 0.0]).unwrap();
    let report = gradcheck(&Sum, &x, 1e-3, 1e-4).unwrap();
    assert!(report.analytic.iter().all(|&g| g == 1.0));
    assert!(report.max_rel_error < 1e-9, "{}", report.max_rel_error);
}

#[test]
fn gradcheck_of_mean_of_squares_matches_hand_values() {
    let x = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
    let report = gradcheck(&MeanSquares, &x, 1e-3, 1e-4).unwrap();
    let expect = [2.0 / 3.0, 4.0 / 3.0, 2.0];
    for (a, e) in report.analytic.iter().zip(expect) {
        assert!((a - e).abs() < 1e-6);
    }
    assert!(report.passed);
}

#[test]
fn scalar_examples() {
    let tape = Tape::<f32>::new();
    let zero = tape.constant(Tensor::scalar(0.0));
    assert_eq!(zero.sigmoid().unwrap().value().item(), 0.5);
    let neg = tape.constant(Tensor::scalar(-3.0));
    assert_eq!(neg.relu().unwrap().value().item(), 0.0);

    let eye = tape.constant(
        Tensor::new(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap(),
    );
    let v = Tensor::new(&[3, 1], vec![0.5, -2.0, 9.0]).unwrap();
    let out = eye.matmul(tape.constant(v.clone())).unwrap().value();
    assert_eq!(*out, v);
}

#[test]
fn backward_of_square_and_sigmoid() {
    let tape = Tape::<f32>::new();
    let x = tape.param(Tensor::scalar(3.0));
    let y = x.square().unwrap();
    assert_eq!(tape.backward(y).unwrap().get(x).unwrap().item(), 6.0);

    let tape = Tape::<f32>::new();
    let x = tape.param(Tensor::scalar(0.0));
    let y = x.sigmoid().unwrap();
    assert_eq!(tape.backward(y).unwrap().get(x).unwrap().item(), 0.25);
}

#[test]
fn backward_requires_scalar_root() {
    let tape = Tape::<f32>::new();
    let x = tape.param(Tensor::zeros(&[2, 2]));
    let y = x.exp().unwrap();
    assert!(matches!(tape.backward(y), Err(NumericsError::NonScalarRoot(_))));
}

#[test]
fn shape_mismatch_names_both_shapes() {
    let tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4]));
    let err = a.add(b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
}

#[test]
fn non_finite_results_name_the_op() {
    let tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::scalar(1.0));
    let z = tape.constant(Tensor::scalar(0.0));
    assert_eq!(a.div(z).unwrap_err(), NumericsError::NonFinite { op: "div" });
    let big = tape.constant(Tensor::scalar(200.0));
    assert_eq!(big.exp().unwrap_err(), NumericsError::NonFinite { op: "exp" });
}

#[test]
fn unused_leaves_get_zero_gradients_of_their_shape() {
    let tape = Tape::<f32>::new();
    let used = tape.param(Tensor::ones(&[2, 2]));
    let unused = tape.param(Tensor::ones(&[3, 1, 2]));
    let y = used.sum().unwrap();
    let grads = tape.backward(y).unwrap();
    let g = grads.get(unused).unwrap();
    assert_eq!(g.shape(), &[3, 1, 2]);
    assert!(g.data().iter().all(|&v| v == 0.0));
}

#[test]
fn mse_of_identical_tensors_is_zero_with_zero_gradient() {
    let tape = Tape::<f32>::new();
    let t = Tensor::new(&[2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let p = tape.param(t.clone());
    let q = tape.constant(t);
    let l = mse(p, q).unwrap();
    assert_eq!(l.value().item(), 0.0);
    let g = tape.backward(l).unwrap();
    assert!(g.get(p).unwrap().data().iter().all(|&v| v == 0.0));
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    fn grad_of(x: &[f32], a: f32, b: f32) -> Vec<f32> {
        let tape = Tape::<f32>::new();
        let xv = tape.param(Tensor::new(&[x.len()], x.to_vec()).unwrap());
        let f = xv.sigmoid().unwrap().sum().unwrap();
        let g = xv.square().unwrap().mean().unwrap();
        let combo = f
            .mul_scalar(a)
            .unwrap()
            .add(g.mul_scalar(b).unwrap())
            .unwrap();
        tape.backward(combo).unwrap().get(xv).unwrap().data().to_vec()
    }

    fn single(x: &[f32], which: usize) -> Vec<f32> {
        let tape = Tape::<f32>::new();
        let xv = tape.param(Tensor::new(&[x.len()], x.to_vec()).unwrap());
        let y = if which == 0 {
            xv.sigmoid().unwrap().sum().unwrap()
        } else {
            xv.square().unwrap().mean().unwrap()
        };
        tape.backward(y).unwrap().get(xv).unwrap().data().to_vec()
    }

    proptest! {
        #[test]
        fn backward_is_linear(
            x in proptest::collection::vec(-3.0f32..3.0, 1..8),
            a in -2.0f32..2.0,
            b in -2.0f32..2.0,
        ) {
            let combined = grad_of(&x, a, b);
            let gf = single(&x, 0);
            let gg = single(&x, 1);
            for i in 0..x.len() {
                let expect = a * gf[i] + b * gg[i];
                prop_assert!((combined[i] - expect).abs() <= 1e-6 * (1.0 + expect.abs()));
            }
        }

        #[test]
        fn gradient_shape_matches_leaf_shape(
            shape in proptest::collection::vec(1usize..4, 1..4),
        ) {
            let n: usize = shape.iter().product();
            let tape = Tape::<f32>::new();
            let x = tape.param(Tensor::new(&shape, (0..n).map(|i| i as f32 * 0.1).collect()).unwrap());
            let y = x.sigmoid().unwrap().l2norm_last().unwrap().sum().unwrap();
            let g = tape.backward(y).unwrap();
            prop_assert_eq!(g.get(x).unwrap().shape(), &shape[..]);
        }
    }
}
