mod common;

use balance_lab::{
    action, action_gradient, eval_k, estimate_kernel, CountTable, Denominator, KernelEstimate, KernelPolicy,
    PotentialTable, ViolationKernel, ViolationKernelSpec,
};
use common::{db_counts, max_count, names};
use proptest::prelude::*;

fn kernels() -> [ViolationKernelSpec; 2] {
    [ViolationKernelSpec::exp_half(), ViolationKernelSpec::softplus()]
}

/// Random sparse kernel over `n` states plus matching random potentials.
fn arb_instance(max_states: usize) -> impl Strategy<Value = (KernelEstimate, Vec<f64>)> {
    (2..=max_states).prop_flat_map(|n| {
        (
            prop::collection::vec((0..n, 0..n, 1u64..40), n..4 * n),
            prop::collection::vec(-3.0f64..3.0, n),
            prop::bool::ANY,
        )
            .prop_map(move |(edges, v, rows)| {
                let states = names(n);
                let mut c = CountTable::new();
                for (f, g, k) in edges {
                    if f != g {
                        c.add_count(&states[f], &states[g], k);
                    }
                }
                // make sure there is at least one term
                c.add_count(&states[0], &states[1], 3);
                let policy = if rows { KernelPolicy::RowNormalized { min_row_count: 2 } } else { KernelPolicy::FixedBudget { budget: 200 } };
                (estimate_kernel(&c, policy).unwrap(), v)
            })
    })
}

fn table(kernel: &KernelEstimate, v: &[f64]) -> PotentialTable {
    PotentialTable::from_values(kernel.states().iter().cloned().zip(v.iter().copied()))
}

fn value(kernel: &KernelEstimate, v: &[f64], k: &ViolationKernelSpec) -> f64 {
    action(kernel, &table(kernel, v), k, Denominator::RowsWithKernel).unwrap().value
}

proptest! {
    #[test]
    fn dyadic_shifts_leave_the_action_bit_identical(
        (kernel, v) in arb_instance(8),
        c in -64i32..64,
    ) {
        // quarter-integer potentials and shifts keep V + c exact
        let v: Vec<f64> = v.iter().map(|x| (x * 4.0).round() / 4.0).collect();
        let shift = c as f64 / 4.0;
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        for k in kernels() {
            prop_assert_eq!(value(&kernel, &v, &k).to_bits(), value(&kernel, &shifted, &k).to_bits());
        }
    }

    #[test]
    fn arbitrary_shifts_agree_to_rounding((kernel, v) in arb_instance(8), c in -10.0f64..10.0) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        for k in kernels() {
            let (a, b) = (value(&kernel, &v, &k), value(&kernel, &shifted, &k));
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn action_is_convex(
        (kernel, v1) in arb_instance(8),
        seed in prop::collection::vec(-3.0f64..3.0, 8),
        lambda in 0.0f64..=1.0,
    ) {
        let v2: Vec<f64> = seed.iter().take(v1.len()).copied().collect();
        let mix: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        for k in kernels() {
            let lhs = value(&kernel, &mix, &k);
            let rhs = lambda * value(&kernel, &v1, &k) + (1.0 - lambda) * value(&kernel, &v2, &k);
            prop_assert!(lhs <= rhs + 1e-12, "{} > {}", lhs, rhs);
        }
    }

    #[test]
    fn gradient_matches_central_differences((kernel, v) in arb_instance(50)) {
        for k in kernels() {
            let grad = action_gradient(&kernel, &table(&kernel, &v), &k, Denominator::RowsWithKernel).unwrap();
            let scale = grad.iter().map(|(_, g)| g.abs()).fold(1e-3, f64::max);
            for (state, g) in grad {
                let i = kernel.index_of(&state).unwrap();
                let h = 1e-5;
                let mut up = v.clone();
                up[i] += h;
                let mut down = v.clone();
                down[i] -= h;
                let fd = (value(&kernel, &up, &k) - value(&kernel, &down, &k)) / (2.0 * h);
                prop_assert!((fd - g).abs() <= 1e-6 * scale, "{}: fd {} vs {}", state, fd, g);
            }
        }
    }

    #[test]
    fn builtin_kernels_are_positive_and_convex(x in -40.0f64..40.0, y in -40.0f64..40.0) {
        for k in kernels() {
            prop_assert!(eval_k(&k, x) > 0.0);
            let mid = eval_k(&k, 0.5 * (x + y));
            prop_assert!(mid <= 0.5 * (eval_k(&k, x) + eval_k(&k, y)) * (1.0 + 1e-14));
        }
    }

    #[test]
    fn detailed_balance_kernels_are_stationary(weights in prop::collection::vec(1u64..30, 3..7)) {
        let n = weights.len();
        let m: Vec<Vec<u64>> = (0..n).map(|i| (0..n).map(|j| ((i * 7 + j * 3) % 5) as u64).collect()).collect();
        let (counts, _, v) = db_counts(&weights, &m);
        let kernel = estimate_kernel(&counts, KernelPolicy::FixedBudget { budget: max_count(&counts) }).unwrap();
        prop_assume!(!kernel.is_empty());
        let k = ViolationKernelSpec::exp_half();
        let v: Vec<f64> = kernel.states().iter().map(|s| v[s.as_str()[1..].parse::<usize>().unwrap()]).collect();
        let grad = action_gradient(&kernel, &table(&kernel, &v), &k, Denominator::RowsWithKernel).unwrap();
        for (_, g) in grad {
            prop_assert!(g.abs() < 1e-10);
        }
    }
}

#[test]
fn equal_potentials_on_row_normalized_kernel_give_k0() {
    let states = names(5);
    let mut c = CountTable::new();
    for (i, f) in states.iter().enumerate() {
        for (j, g) in states.iter().enumerate() {
            c.add_count(f, g, (i * 3 + j * 5 + 1) as u64);
        }
    }
    let kernel = estimate_kernel(&c, KernelPolicy::default()).unwrap();
    let v = vec![0.7; states.len()];
    let s = action(&kernel, &table(&kernel, &v), &ViolationKernelSpec::exp_half(), Denominator::RowsWithKernel).unwrap();
    assert_eq!(s.value, 1.0);
    let all = action(&kernel, &table(&kernel, &v), &ViolationKernelSpec::exp_half(), Denominator::AllStates).unwrap();
    assert_eq!(all.divisor, 5);
}

#[test]
fn spec_kernel_values() {
    let e = ViolationKernelSpec::exp_half();
    let sp = ViolationKernelSpec::softplus();
    assert_eq!(eval_k(&e, 0.0), 1.0);
    assert!((eval_k(&e, 2.0) - (-1f64).exp()).abs() < 1e-16);
    assert!((eval_k(&sp, 0.0) - 2f64.ln()).abs() < 1e-16);
    assert!((e.derivative(0.0) + 0.5).abs() < 1e-16);
}

#[test]
fn missing_potential_is_an_error() {
    let states = names(2);
    let mut c = CountTable::new();
    c.add_count(&states[0], &states[1], 2);
    let kernel = estimate_kernel(&c, KernelPolicy::FixedBudget { budget: 10 }).unwrap();
    let partial = PotentialTable::from_values([(states[0].clone(), 0.0)]);
    let err = action(&kernel, &partial, &ViolationKernelSpec::exp_half(), Denominator::RowsWithKernel).unwrap_err();
    assert_eq!(err.code(), "MISSING_POTENTIAL");
}
