use active_grasp::domain::Bounds;
use active_grasp::optim::{solve_bounded, SolverOpts, Termination};
use proptest::prelude::*;

fn neg_rosenbrock(q: &[f64], g: &mut [f64]) -> f64 {
    let (x, y) = (q[0], q[1]);
    g[0] = -(-2.0 * (1.0 - x) - 400.0 * x * (y - x * x));
    g[1] = -(200.0 * (y - x * x));
    -((1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2))
}

#[test]
fn rosenbrock_reaches_the_valley_floor() {
    let b = Bounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
    let opts = SolverOpts {
        max_iter: 500,
        tol: 1e-8,
        ..SolverOpts::default()
    };
    let mut f = neg_rosenbrock;
    let (q, _, r) = solve_bounded(&mut f, &[-1.2, 1.0], &b, &opts).unwrap();
    assert!((q[0] - 1.0).abs() < 1e-4 && (q[1] - 1.0).abs() < 1e-4, "{q:?} after {r:?}");
}

#[test]
fn max_iter_is_reported() {
    let b = Bounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
    let opts = SolverOpts {
        max_iter: 3,
        ..SolverOpts::default()
    };
    let mut f = neg_rosenbrock;
    let (_, _, r) = solve_bounded(&mut f, &[-1.2, 1.0], &b, &opts).unwrap();
    assert_eq!(r.termination, Termination::MaxIter);
    assert_eq!(r.iterations, 3);
}

#[test]
fn dimension_mismatch_is_an_error() {
    let b = Bounds::new(vec![-1.0; 3], vec![1.0; 3]).unwrap();
    let mut f = neg_rosenbrock;
    assert!(solve_bounded(&mut f, &[0.0, 0.0], &b, &SolverOpts::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iterates_stay_feasible_and_improve(
        centers in proptest::collection::vec(-3.0f64..3.0, 4),
        scales in proptest::collection::vec(0.1f64..20.0, 4),
        start in proptest::collection::vec(-5.0f64..5.0, 4),
    ) {
        let b = Bounds::new(vec![-1.0, -1.0, 0.0, 0.0], vec![1.0, 1.0, 1.5, 1.5]).unwrap();
        let f = |q: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..4 {
                let d = q[i] - centers[i];
                // quartic coupling keeps the problem non-quadratic
                v -= scales[i] * d * d + 0.1 * d.powi(4);
                g[i] = -(2.0 * scales[i] * d + 0.4 * d.powi(3));
            }
            v + 0.3 * q[0] * q[1]
        };
        let mut f = |q: &[f64], g: &mut [f64]| {
            let v = f(q, g);
            g[0] += 0.3 * q[1];
            g[1] += 0.3 * q[0];
            v
        };
        let opts = SolverOpts { record_iterates: true, ..SolverOpts::default() };
        let (q, v, r) = solve_bounded(&mut f, &start, &b, &opts).unwrap();
        for it in &r.iterates {
            prop_assert!(b.contains(it).unwrap());
        }
        prop_assert!(b.contains(&q).unwrap());
        prop_assert!(v >= r.start_value - 1e-12);
        let mut prev = f64::NEG_INFINITY;
        let mut g = [0.0; 4];
        for it in &r.iterates {
            let val = f(it, &mut g);
            prop_assert!(val >= prev - 1e-12);
            prev = val;
        }
        prop_assert_eq!(r.termination, Termination::Converged);
    }
}
