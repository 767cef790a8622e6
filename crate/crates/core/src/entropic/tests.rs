use super::*;
use crate::catalog::{mk_transfer, pushforward_transfer};
use crate::measure::{kl_raw, CostMatrix, PointMap};
use crate::rng;
use crate::scalar::golden_max;
use crate::solvers::transport::solve_transport_lp;
use rand::Rng;

fn space(n: usize) -> Arc<FiniteSpace> {
    Arc::new(FiniteSpace::indexed("X", n).unwrap())
}

fn measure(r: &mut impl Rng, s: &Arc<FiniteSpace>) -> ProbMeasure {
    ProbMeasure::from_unnormalized(s.clone(), rng::simplex_point(r, s.len())).unwrap()
}

fn pm(s: &Arc<FiniteSpace>, w: &[f64]) -> ProbMeasure {
    ProbMeasure::new(s.clone(), w.to_vec()).unwrap()
}

fn cost(r: &mut impl Rng, s: &Arc<FiniteSpace>) -> CostMatrix {
    let rows = (0..s.len()).map(|_| rng::uniform_vec(r, s.len(), 0.0, 2.0)).collect();
    CostMatrix::from_rows(s.clone(), s.clone(), rows).unwrap()
}

/// Oracle: inf over σ on the 2- or 3-point simplex by nested golden section
/// (the objective is convex).
fn sigma_oracle(n: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    match n {
        2 => -golden_max(|p| -f(&[p, 1.0 - p]), 0.0, 1.0, 1e-13).1,
        3 => {
            let inner = |a: f64| -golden_max(|b| -f(&[a, b * (1.0 - a), (1.0 - b) * (1.0 - a)]), 0.0, 1.0, 1e-13).1;
            -golden_max(|a| -inner(a), 0.0, 1.0, 1e-13).1
        }
        _ => unreachable!(),
    }
}

#[test]
fn generalized_entropy_values() {
    let s = space(3);
    let (mu, nu) = (pm(&s, &[0.2, 0.3, 0.5]), pm(&s, &[0.5, 0.1, 0.4]));
    let chi = generalized_entropy(s.clone(), ScalarFn::Chi2).unwrap();
    let direct: f64 = [(0.2, 0.5), (0.3, 0.1), (0.5, 0.4)].iter().map(|(m, n)| m * (n / m - 1.0f64).powi(2)).sum();
    assert!((chi.eval(&mu, &nu).unwrap() - direct).abs() < 1e-15);
    assert!((chi.eval(&mu, &mu).unwrap() - ScalarFn::Chi2.eval(1.0)).abs() < 1e-15);

    let s2 = space(2);
    let kl = generalized_entropy(s2.clone(), ScalarFn::Xlogx).unwrap();
    let v = kl.eval(&pm(&s2, &[0.5, 0.5]), &pm(&s2, &[0.8, 0.2])).unwrap();
    assert!((v - (0.8 * 1.6f64.ln() + 0.2 * 0.4f64.ln())).abs() < 1e-15);
    assert_eq!(kl.eval(&pm(&s2, &[1.0, 0.0]), &pm(&s2, &[0.5, 0.5])).unwrap(), f64::INFINITY);

    assert!(generalized_entropy(s.clone(), ScalarFn::Identity).unwrap_err().is_input());
    assert!(generalized_entropy(s.clone(), ScalarFn::Log).unwrap_err().is_input());
    assert!(generalized_entropy(s, ScalarFn::NegLog).unwrap_err().is_input());
}

#[test]
fn xlogx_conjugate_is_log_partition() {
    let mut r = rng::stream(11, 0);
    let s = space(4);
    let ge = generalized_entropy(s.clone(), ScalarFn::Xlogx).unwrap();
    let le = log_entropy(s.clone());
    for _ in 0..20 {
        let mu = measure(&mut r, &s);
        let f = rng::uniform_vec(&mut r, 4, -3.0, 3.0);
        let closed = mu.weights().iter().zip(&f).map(|(m, v)| m * v.exp()).sum::<f64>().ln();
        let (a, ga) = ge.conj_mu(&mu, &f).unwrap();
        let (b, gb) = le.conj_mu(&mu, &f).unwrap();
        assert!((a - closed).abs() < 1e-12 && (b - closed).abs() < 1e-12);
        assert!(ga.iter().zip(&gb).all(|(x, y)| (x - y).abs() < 1e-10));
    }
}

#[test]
fn alpha_entropy_duality() {
    let mut r = rng::stream(12, 0);
    let s = space(3);
    let alphas = [ScalarFn::Xlogx, ScalarFn::Chi2, ScalarFn::power(2.0)];
    for alpha in alphas {
        let ge = generalized_entropy(s.clone(), alpha.clone()).unwrap();
        for _ in 0..5 {
            let (mu, nu) = (measure(&mut r, &s), measure(&mut r, &s));
            let primal: f64 = mu.weights().iter().zip(nu.weights()).map(|(m, n)| m * alpha.eval(n / m)).sum();
            let dual = convex_dual(ge.as_ref(), &mu, &nu, &AscentConfig::default()).unwrap();
            assert!((dual.value - primal).abs() < 1e-5, "{alpha:?}: {} vs {primal}", dual.value);
            // each member alone is a translate and already gives the value
            let m = ge.member_dual(0.5, &mu, &nu, &AscentConfig::default()).unwrap();
            assert!((m - primal).abs() < 1e-5);
        }
    }
}

#[test]
fn dual_potentials_beyond_the_default_box() {
    // dν/dμ ≈ 100 puts the optimal χ² potential near 200
    let s = space(2);
    let (mu, nu) = (pm(&s, &[0.005, 0.995]), pm(&s, &[0.5, 0.5]));
    let ge = generalized_entropy(s, ScalarFn::Chi2).unwrap();
    let primal = 0.005 * 99.0f64.powi(2) + 0.995 * (0.5f64 / 0.995 - 1.0).powi(2);
    let dual = convex_dual(ge.as_ref(), &mu, &nu, &AscentConfig::default()).unwrap();
    assert!((dual.value - primal).abs() < 1e-6, "{} vs {primal}", dual.value);
}

#[test]
fn log_entropy_witness_and_ascent() {
    let mut r = rng::stream(13, 0);
    let s = space(2);
    let h = log_entropy(s.clone());
    let u = pm(&s, &[0.5, 0.5]);
    assert!((h.eval(&u, &pm(&s, &[1.0, 0.0])).unwrap() - 2f64.ln()).abs() < 1e-15);
    assert_eq!(h.eval(&u, &u).unwrap(), 0.0);
    assert_eq!(h.witness(&u, &u).unwrap(), vec![0.0, 0.0]);
    assert_eq!(h.eval(&pm(&s, &[1.0, 0.0]), &u).unwrap(), f64::INFINITY);

    let s = space(4);
    let h = log_entropy(s.clone());
    for _ in 0..20 {
        let (mu, nu) = (measure(&mut r, &s), measure(&mut r, &s));
        let kl = kl_raw(nu.weights(), mu.weights());
        let w = h.witness(&mu, &nu).unwrap();
        assert!((h.dual_objective(&mu, &nu, &w) - kl).abs() < 1e-12);
        let d = convex_dual(h.as_ref(), &mu, &nu, &AscentConfig::default()).unwrap();
        assert!((d.value - kl).abs() < 1e-8, "{} vs {kl}", d.value);
    }
    // a witness with −∞ off the support of ν
    let (mu, nu) = (pm(&s, &[0.1, 0.2, 0.3, 0.4]), pm(&s, &[0.0, 0.5, 0.5, 0.0]));
    let w = h.witness(&mu, &nu).unwrap();
    assert!((h.dual_objective(&mu, &nu, &w) - kl_raw(nu.weights(), mu.weights())).abs() < 1e-12);
}

#[test]
fn log_entropy_family() {
    let mut r = rng::stream(14, 0);
    let s = space(3);
    let h = log_entropy(s.clone());
    let (mu, nu) = (measure(&mut r, &s), measure(&mut r, &s));
    let kl = kl_raw(nu.weights(), mu.weights());
    // the member s eᶠ − 1 − log s has dual KL for every s
    for sv in [0.1, 1.0, 7.0] {
        let v = h.member_dual(sv, &mu, &nu, &AscentConfig::default()).unwrap();
        assert!((v - kl).abs() < 1e-6, "s = {sv}: {v} vs {kl}");
    }
    let op = h.member(2.0, &[0.0, 1.0, -1.0]).unwrap();
    assert!((op.values[1] - (2.0 * 1f64.exp() - 1.0 - 2f64.ln())).abs() < 1e-14);
}

fn two_state(a: f64, b: f64) -> GeneratorModel {
    GeneratorModel { rates: vec![vec![-a, a], vec![b, -b]], mu: vec![b / (a + b), a / (a + b)] }
}

#[test]
fn dv_two_state() {
    let s = space(2);
    let (a, b) = (1.3, 0.4);
    let dv = donsker_varadhan(s.clone(), two_state(a, b)).unwrap();
    let mu = dv.stationary();
    assert!(dv.eval(&mu, &mu).unwrap().abs() < 1e-15);
    // ν = δ₁: √h = (0, 1/√μ₁), so 𝓔 = ½[μ₀ a/μ₁ + b] = b
    let delta = pm(&s, &[0.0, 1.0]);
    assert!((dv.eval(&mu, &delta).unwrap() - b).abs() < 1e-14);
    // the sup is approached as f₀ → −∞; the box must be wide
    let mut cfg = AscentConfig::default();
    cfg.box_radius = 1e8;
    let d = convex_dual(dv.as_ref(), &mu, &delta, &cfg).unwrap();
    assert!((d.value - b).abs() < 1e-6, "{}", d.value);
    // interior ν against the 2×2 form by hand
    let nu = pm(&s, &[0.3, 0.7]);
    let r = [(0.3 / mu.weights()[0]).sqrt(), (0.7 / mu.weights()[1]).sqrt()];
    let hand = mu.weights()[0] * a * (r[1] - r[0]).powi(2);
    assert!((dv.eval(&mu, &nu).unwrap() - hand).abs() < 1e-14);
    let d = convex_dual(dv.as_ref(), &mu, &nu, &AscentConfig::default()).unwrap();
    assert!((d.value - hand).abs() < 1e-6);
    assert!(dv.eval(&pm(&s, &[0.5, 0.5]), &nu).unwrap_err().is_input());
}

fn random_chain(r: &mut impl Rng, n: usize) -> GeneratorModel {
    let mut w = vec![vec![0.0; n]; n];
    for x in 0..n {
        for y in 0..x {
            let v = r.gen_range(0.2..2.0);
            w[x][y] = v;
            w[y][x] = v;
        }
    }
    GeneratorModel::from_conductances(&w, rng::simplex_point(r, n)).unwrap()
}

#[test]
fn dv_duality_and_properties() {
    let mut r = rng::stream(15, 0);
    // near-Dirac ν push the optimal potential far out
    let mut cfg = AscentConfig::default();
    cfg.box_radius = 1e4;
    for n in 2..=4 {
        let s = space(n);
        let model = random_chain(&mut r, n);
        let dv = donsker_varadhan(s.clone(), model.clone()).unwrap();
        let mu = dv.stationary();
        for _ in 0..3 {
            let nu = measure(&mut r, &s);
            let v = dv.eval(&mu, &nu).unwrap();
            assert!(v > 0.0);
            let d = convex_dual(dv.as_ref(), &mu, &nu, &cfg).unwrap();
            assert!((d.value - v).abs() < 1e-6, "n = {n}: {} vs {v}", d.value);
            let doubled = donsker_varadhan(s.clone(), model.scaled(2.0)).unwrap();
            assert!((doubled.eval(&mu, &nu).unwrap() - 2.0 * v).abs() < 1e-12 * (1.0 + v));
            // λ_max against the matrix exponential
            let f = rng::uniform_vec(&mut r, n, -2.0, 2.0);
            assert!((model.lambda_max(&f).0 - model.log_semigroup_norm(&f)).abs() < 1e-10);
        }
    }
    let bad = GeneratorModel { rates: vec![vec![-1.0, 1.0], vec![1.0, -1.0]], mu: vec![0.3, 0.7] };
    assert!(donsker_varadhan(space(2), bad).unwrap_err().is_input());
}

#[test]
fn power_transfers() {
    let mut r = rng::stream(16, 0);
    let s = space(3);
    let c = cost(&mut r, &s);
    let mk = mk_transfer(c.clone());
    let (mu, nu) = (measure(&mut r, &s), measure(&mut r, &s));
    let lp = solve_transport_lp(&c, &mu, &nu).unwrap().value;
    let cfg = AscentConfig::default();

    let sq = power_transfer(ScalarFn::power(2.0), mk.clone()).unwrap();
    assert!((sq.eval(&mu, &nu).unwrap() - lp * lp).abs() < 1e-12);
    let fd = family_dual(sq.as_ref(), &mu, &nu, &cfg).unwrap();
    assert!(((fd.value - lp * lp) / (lp * lp)).abs() < 1e-4, "{} vs {}", fd.value, lp * lp);
    assert_eq!(fd.grid.len(), 64);
    assert!(fd.member_values.iter().all(|v| *v <= lp * lp + 1e-9));
    let cd = convex_dual(sq.as_ref(), &mu, &nu, &cfg).unwrap();
    assert!((cd.value - lp * lp).abs() < 1e-5, "{} vs {}", cd.value, lp * lp);

    let id = power_transfer(ScalarFn::Identity, mk.clone()).unwrap();
    let fd = family_dual(id.as_ref(), &mu, &nu, &cfg).unwrap();
    assert!((fd.value - lp).abs() < 1e-8);

    let zero = CostMatrix::from_fn(s.clone(), s.clone(), |_, _| 0.0).unwrap();
    let z = power_transfer(ScalarFn::Exp, mk_transfer(zero)).unwrap();
    assert_eq!(z.eval(&mu, &nu).unwrap(), 1.0);

    assert!(power_transfer(ScalarFn::Chi2, mk.clone()).unwrap_err().is_input());
    assert!(power_transfer(ScalarFn::Log, mk).unwrap_err().is_input());
}

#[test]
fn entropic_convolution() {
    let mut r = rng::stream(17, 0);
    for n in [2, 3] {
        let s = space(n);
        let h = log_entropy(s.clone());
        let ident = entropic_convolve(h.clone(), pushforward_transfer(PointMap::identity(s.clone()))).unwrap();
        let (mu, nu) = (measure(&mut r, &s), measure(&mut r, &s));
        assert!((ident.eval(&mu, &nu).unwrap() - h.eval(&mu, &nu).unwrap()).abs() < 1e-15);

        let c = cost(&mut r, &s);
        let conv = entropic_convolve(h.clone(), mk_transfer(c.clone())).unwrap();
        let oracle = sigma_oracle(n, |p| {
            let sigma = ProbMeasure::from_unnormalized(s.clone(), p.iter().map(|v| v.max(0.0)).collect()).unwrap();
            kl_raw(sigma.weights(), mu.weights()) + solve_transport_lp(&c, &sigma, &nu).unwrap().value
        });
        let p = conv.primal(&mu, &nu).unwrap();
        assert!((p.value - oracle).abs() < 1e-5, "n = {n}: {} vs {oracle}", p.value);
        let d = convex_dual(conv.as_ref(), &mu, &nu, &AscentConfig::default()).unwrap();
        assert!((d.value - p.value).abs() < 1e-5, "{} vs {}", d.value, p.value);

        // inf property against random σ
        for _ in 0..10 {
            let sigma = measure(&mut r, &s);
            let upper = h.eval(&mu, &sigma).unwrap() + solve_transport_lp(&c, &sigma, &nu).unwrap().value;
            assert!(p.value <= upper + 1e-9);
        }
        let g = rng::uniform_vec(&mut r, n, -2.0, 2.0);
        let (a, ga) = conv.conj_mu(&mu, &g).unwrap();
        let (b, gb) = conv.conj_via_operator(&mu, &g).unwrap();
        assert!((a - b).abs() < 1e-12 && ga.iter().zip(&gb).all(|(x, y)| (x - y).abs() < 1e-12));
    }
}

#[test]
fn convex_convolution() {
    let mut r = rng::stream(18, 0);
    let s = space(2);
    let ge: ConvexHandle = generalized_entropy(s.clone(), ScalarFn::Chi2).unwrap();
    let ident = convex_convolve(ge.clone(), pushforward_transfer(PointMap::identity(s.clone()))).unwrap();
    let c = cost(&mut r, &s);
    let mk = mk_transfer(c.clone());
    let conv = convex_convolve(ge.clone(), mk.clone()).unwrap();
    for _ in 0..5 {
        let (mu, nu) = (measure(&mut r, &s), measure(&mut r, &s));
        assert_eq!(ident.eval(&mu, &nu).unwrap(), ge.eval(&mu, &nu).unwrap());

        let g = rng::uniform_vec(&mut r, 2, -2.0, 2.0);
        let direct = ge.member(0.5, &mk.backward(&g).unwrap().values).unwrap();
        assert_eq!(conv.member(0.5, &g).unwrap().values, direct.values);

        let oracle = sigma_oracle(2, |p| {
            let sigma = ProbMeasure::from_unnormalized(s.clone(), p.iter().map(|v| v.max(0.0)).collect()).unwrap();
            ge.eval(&mu, &sigma).unwrap() + solve_transport_lp(&c, &sigma, &nu).unwrap().value
        });
        let primal = conv.eval(&mu, &nu).unwrap();
        assert!((primal - oracle).abs() < 1e-6, "{primal} vs {oracle}");
        let fd = family_dual(conv.as_ref(), &mu, &nu, &AscentConfig::default()).unwrap();
        assert!((fd.value - primal).abs() < 1e-4, "{} vs {primal}", fd.value);
    }
}
