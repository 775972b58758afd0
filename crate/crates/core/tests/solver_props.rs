mod common;

use balance_lab::data::{claude_counts, gemini_counts, CLAUDE_POLICY, GEMINI_POLICY};
use balance_lab::{
    estimate_kernel, fit_potential, solve_extreme_analytic, solve_extreme_or_fit, CountTable, Denominator, FitOptions, GaugeChoice,
    KernelEstimate, KernelPolicy, SolverError, ViolationKernelSpec,
};
use common::{db_counts, s};
use proptest::prelude::*;

/// Weights plus a connected symmetric multiplicity matrix (a ring plus extras).
fn arb_db() -> impl Strategy<Value = (Vec<u64>, Vec<Vec<u64>>)> {
    (3usize..7).prop_flat_map(|n| {
        (prop::collection::vec(1u64..20, n), prop::collection::vec(0u64..4, n * n)).prop_map(move |(w, extra)| {
            let mut m = vec![vec![0; n]; n];
            for i in 0..n {
                for j in i + 1..n {
                    m[i][j] = extra[i * n + j];
                }
                let j = (i + 1) % n;
                m[i.min(j)][i.max(j)] = m[i.min(j)][i.max(j)].max(1);
            }
            (w, m)
        })
    })
}

fn db_kernel(w: &[u64], m: &[Vec<u64>]) -> (KernelEstimate, Vec<f64>) {
    let (counts, _, v) = db_counts(w, m);
    let budget = counts.states().iter().map(|f| counts.attempts(f)).max().unwrap();
    (estimate_kernel(&counts, KernelPolicy::FixedBudget { budget }).unwrap(), v)
}

/// ‖H⁻¹‖∞ of the exp-half action Hessian at `v` with `pinned` removed.
///
/// With K(x) = e^{-x/2}, K'' = K/4, so each measured transition adds
/// T·K(x)/4 · (e_f − e_g)(e_f − e_g)ᵀ / D. A fit stopped at gradient norm
/// `tol` is then within ‖H⁻¹‖∞·tol of the minimizer to first order.
fn inverse_hessian_norm(kernel: &KernelEstimate, v: &[f64], pinned: usize) -> f64 {
    let n = v.len();
    let d = Denominator::RowsWithKernel.divisor(kernel) as f64;
    let mut h = vec![vec![0.0; n]; n];
    for row in kernel.rows() {
        let f = row.from;
        for e in &row.entries {
            let c = e.weight / row.norm * (-(v[f] - v[e.to]) / 2.0).exp() / 4.0 / d;
            let g = e.to;
            h[f][f] += c;
            h[g][g] += c;
            h[f][g] -= c;
            h[g][f] -= c;
        }
    }
    let idx: Vec<usize> = (0..n).filter(|&i| i != pinned).collect();
    let m = idx.len();
    // Gauss-Jordan on [H | I]
    let mut a: Vec<Vec<f64>> = idx
        .iter()
        .enumerate()
        .map(|(r, &i)| idx.iter().map(|&j| h[i][j]).chain((0..m).map(|c| if c == r { 1.0 } else { 0.0 })).collect())
        .collect();
    for col in 0..m {
        let p = (col..m).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, p);
        let piv = a[col][col];
        a[col].iter_mut().for_each(|x| *x /= piv);
        for r in 0..m {
            if r != col {
                let k = a[r][col];
                for c in 0..2 * m {
                    a[r][c] -= k * a[col][c];
                }
            }
        }
    }
    (0..m).map(|r| a[r][m..].iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn opts() -> FitOptions {
    FitOptions { tolerance: 1e-10, max_iterations: 100_000, cap: Some(50.0), ..FitOptions::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn detailed_balance_potentials_are_recovered((w, m) in arb_db()) {
        let (kernel, v) = db_kernel(&w, &m);
        let o = opts();
        let fit = fit_potential(&kernel, &ViolationKernelSpec::exp_half(), &o).unwrap();
        let states = kernel.states();
        let anchor = states.iter().position(|st| fit.value(st) == Some(0.0)).unwrap();
        // pair differences carry the error of both endpoints
        let bound = 10.0 * o.tolerance * (2.0 * inverse_hessian_norm(&kernel, &v, anchor)).max(1.0);
        for i in 0..states.len() {
            for j in 0..states.len() {
                if m[i.min(j)][i.max(j)] == 0 || i == j {
                    continue;
                }
                let got = fit.value(&states[i]).unwrap() - fit.value(&states[j]).unwrap();
                let want = v[i] - v[j];
                prop_assert!((got - want).abs() <= bound, "{} vs {} (bound {})", got, want, bound);
            }
        }
    }

    #[test]
    fn anchors_agree_up_to_a_shift((w, m) in arb_db(), a in 0usize..7, b in 0usize..7) {
        let (kernel, v) = db_kernel(&w, &m);
        let states = kernel.states();
        let (a, b) = (&states[a % states.len()], &states[b % states.len()]);
        let k = ViolationKernelSpec::exp_half();
        let fa = fit_potential(&kernel, &k, &FitOptions { gauge: GaugeChoice::Anchor(a.clone()), ..opts() }).unwrap();
        let fb = fit_potential(&kernel, &k, &FitOptions { gauge: GaugeChoice::Anchor(b.clone()), ..opts() }).unwrap();
        prop_assert_eq!(fa.value(a), Some(0.0));
        prop_assert_eq!(fb.value(b), Some(0.0));
        let shift = fa.value(b).unwrap();
        let ia = states.iter().position(|st| st == a).unwrap();
        let ib = states.iter().position(|st| st == b).unwrap();
        let scale = inverse_hessian_norm(&kernel, &v, ia) + inverse_hessian_norm(&kernel, &v, ib);
        let bound = 10.0 * opts().tolerance * (2.0 * scale).max(1.0);
        for st in states {
            let diff = fa.value(st).unwrap() - shift - fb.value(st).unwrap();
            prop_assert!(diff.abs() <= bound, "{}: {} (bound {})", st, diff, bound);
        }
    }

    #[test]
    fn exp_half_and_softplus_agree((w, m) in arb_db()) {
        let (kernel, _) = db_kernel(&w, &m);
        let a = fit_potential(&kernel, &ViolationKernelSpec::exp_half(), &opts()).unwrap();
        let b = fit_potential(&kernel, &ViolationKernelSpec::softplus(), &opts()).unwrap();
        let states = kernel.states();
        for f in states {
            for g in states {
                let d = (a.value(f).unwrap() - a.value(g).unwrap()) - (b.value(f).unwrap() - b.value(g).unwrap());
                prop_assert!(d.abs() < 0.05);
            }
        }
    }

    #[test]
    fn descent_never_increases_the_action(edges in prop::collection::vec((0usize..5, 0usize..5, 1u64..60), 3..20)) {
        let mut c = CountTable::new();
        for (f, g, n) in edges {
            if f != g {
                c.add_count(&s(&format!("Q{f}")), &s(&format!("Q{g}")), n);
            }
        }
        prop_assume!(c.total_transitions() > 0);
        let kernel = estimate_kernel(&c, KernelPolicy::FixedBudget { budget: 100 }).unwrap();
        prop_assume!(!kernel.is_empty());
        let o = FitOptions { record_trace: true, ..FitOptions::default() };
        let fit = match fit_potential(&kernel, &ViolationKernelSpec::exp_half(), &o) {
            Ok(f) => f,
            Err(SolverError::NoConvergence { partial }) => *partial,
            Err(e) => panic!("{e}"),
        };
        prop_assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]), "{:?}", fit.trace);
        for st in kernel.states() {
            if let Some(v) = fit.value(st) {
                prop_assert!(v.abs() <= fit.cap * 2.0 + 1e-9);
            }
        }
    }
}

fn claude_kernel() -> KernelEstimate {
    estimate_kernel(&claude_counts(), CLAUDE_POLICY).unwrap()
}

#[test]
fn claude_fit_reproduces_published_potentials() {
    let kernel = claude_kernel();
    let o = FitOptions { gauge: GaugeChoice::Anchor(s("ATTITUDE")), ..FitOptions::default() };
    let fit = fit_potential(&kernel, &ViolationKernelSpec::exp_half(), &o).unwrap();
    assert_eq!(fit.value(&s("ATTITUDE")), Some(0.0));
    let per = fit.value(&s("PERSONAL")).unwrap();
    let pro = fit.value(&s("PROBLEM")).unwrap();
    // independent closed form: ln(T(f←ATTITUDE)) − ln(T(ATTITUDE←f)) with T = N/4000
    assert!((per - (3879f64 / 66.0).ln()).abs() < 1e-6, "{per}");
    assert!((pro - (3558f64 / 20.0).ln()).abs() < 1e-6, "{pro}");
    assert!((per - 4.07).abs() < 0.05 && (pro - 5.18).abs() < 0.05);
    assert!(fit.is_divergent(&s("BUZZY")) && fit.is_divergent(&s("TURKEY")));
}

#[test]
fn claude_analytic_matches_the_fit() {
    let kernel = claude_kernel();
    let gauge = GaugeChoice::Anchor(s("ATTITUDE"));
    let fit = fit_potential(&kernel, &ViolationKernelSpec::exp_half(), &FitOptions { gauge: gauge.clone(), ..FitOptions::default() })
        .unwrap();
    let exact = solve_extreme_analytic(&kernel, &gauge).unwrap();
    assert_eq!(exact.table.divergent_high, fit.table.divergent_high);
    for st in kernel.states() {
        match (fit.value(st), exact.value(st)) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-6, "{st}: {a} vs {b}"),
            (None, None) => {}
            other => panic!("{st}: {other:?}"),
        }
    }
}

#[test]
fn gemini_analytic_potentials() {
    let kernel = estimate_kernel(&gemini_counts(), GEMINI_POLICY).unwrap();
    let fit = solve_extreme_analytic(&kernel, &GaugeChoice::Anchor(s("ATTITUDE"))).unwrap();
    let want = [("ATTITUDE", 0.0), ("DISCIPLINE", 0.5), ("EXCELLENT", 4.8), ("BLISSFUL", 5.2)];
    for (name, v) in want {
        let got = fit.value(&s(name)).unwrap();
        assert!((got - v).abs() < 0.1, "{name}: {got}");
    }
    let finite: Vec<_> = kernel.states().iter().filter(|st| fit.value(st).is_some()).collect();
    assert_eq!(finite.len(), 4);
    for st in kernel.states() {
        if !want.iter().any(|(n, _)| st.as_str() == *n) {
            assert!(fit.is_divergent(st), "{st}");
        }
    }
}

#[test]
fn three_cycle_needs_the_numerical_fit() {
    let mut c = CountTable::new();
    c.add_count(&s("A"), &s("B"), 5);
    c.add_count(&s("B"), &s("C"), 5);
    c.add_count(&s("C"), &s("A"), 5);
    let kernel = estimate_kernel(&c, KernelPolicy::FixedBudget { budget: 10 }).unwrap();
    let err = solve_extreme_analytic(&kernel, &GaugeChoice::MostMeasured).unwrap_err();
    assert_eq!(err.code(), "NOT_TREE_REDUCIBLE");
    // the combined entry point falls back and finds the flat solution
    let fit = solve_extreme_or_fit(&kernel, &ViolationKernelSpec::exp_half(), &FitOptions::default()).unwrap();
    for st in ["A", "B", "C"] {
        assert!(fit.value(&s(st)).unwrap().abs() < 1e-8);
    }
}

#[test]
fn claude_fit_is_fast() {
    let kernel = claude_kernel();
    let t = std::time::Instant::now();
    fit_potential(&kernel, &ViolationKernelSpec::exp_half(), &FitOptions::default()).unwrap();
    assert!(t.elapsed().as_secs_f64() < 1.0);
}
