use super::*;
use crate::catalog::{
    check_backward_axioms, kr_transfer, marton_transfer, mk_transfer, pushforward_transfer, schrodinger_transfer,
    trivial_transfer, tv_transfer, MarkovKernelModel, MartonParams,
};
use crate::measure::{CostMatrix, PointMap, Potential};
use crate::scalar::ScalarFn;
use crate::solvers::transport::solve_transport_lp;
use rand::Rng;

fn space(id: &str, n: usize) -> Arc<FiniteSpace> {
    Arc::new(FiniteSpace::indexed(id, n).unwrap())
}

fn cost(r: &mut impl Rng, a: &Arc<FiniteSpace>, b: &Arc<FiniteSpace>) -> CostMatrix {
    let rows = (0..a.len()).map(|_| rng::uniform_vec(r, b.len(), 0.0, 3.0)).collect();
    CostMatrix::from_rows(a.clone(), b.clone(), rows).unwrap()
}

fn measure(r: &mut impl Rng, s: &Arc<FiniteSpace>) -> ProbMeasure {
    ProbMeasure::from_unnormalized(s.clone(), rng::simplex_point(r, s.len())).unwrap()
}

fn zero_trivial(a: &Arc<FiniteSpace>, b: &Arc<FiniteSpace>) -> TransferHandle {
    trivial_transfer(Potential::zeros(a.clone()), Potential::zeros(b.clone()))
}

#[test]
fn scale_identity_and_rejects() {
    let s = space("X", 3);
    let t = mk_transfer(cost(&mut rng::stream(1, 0), &s, &s));
    assert!(Arc::ptr_eq(&scale(1.0, t.clone()).unwrap(), &t));
    assert!(scale(0.0, t.clone()).unwrap_err().is_input());
    assert!(scale(-2.0, t).unwrap_err().is_input());
}

#[test]
fn scaled_mk_is_mk_of_scaled_cost() {
    let mut r = rng::stream(2, 0);
    let s = space("X", 4);
    for _ in 0..10 {
        let c = cost(&mut r, &s, &s);
        let a = r.gen_range(0.2..5.0);
        let t = scale(a, mk_transfer(c.clone())).unwrap();
        let (mu, nu) = (measure(&mut r, &s), measure(&mut r, &s));
        let lp = solve_transport_lp(&c.map(|v| a * v), &mu, &nu).unwrap().value;
        assert!((t.eval(&mu, &nu).unwrap() - lp).abs() < 1e-9);
        let dual = backward_dual(t.as_ref(), &mu, &nu, &AscentConfig::default()).unwrap();
        assert!((dual.value - lp).abs() < 1e-5);
        // operator is the c-transform of a·c
        let g = rng::uniform_vec(&mut r, 4, -2.0, 2.0);
        let direct = mk_transfer(c.map(|v| a * v)).backward(&g).unwrap().values;
        for (u, v) in t.backward(&g).unwrap().values.iter().zip(&direct) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn add_zero_trivial_is_absorbing() {
    let mut r = rng::stream(3, 0);
    let s = space("X", 3);
    let t1 = mk_transfer(cost(&mut r, &s, &s));
    let sum = add(t1.clone(), zero_trivial(&s, &s)).unwrap();
    for _ in 0..5 {
        let f = rng::uniform_vec(&mut r, 3, -2.0, 2.0);
        let a = sum.backward(&f).unwrap().values;
        let b = t1.backward(&f).unwrap().values;
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-8, "{u} vs {v}");
        }
    }
}

#[test]
fn add_values_and_duality() {
    let mut r = rng::stream(4, 0);
    let s = space("X", 3);
    let mut widest: f64 = 0.0;
    for _ in 0..4 {
        let (c1, c2) = (cost(&mut r, &s, &s), cost(&mut r, &s, &s));
        let sum = add_sum(mk_transfer(c1.clone()), mk_transfer(c2.clone())).unwrap();
        let (mu, nu) = (measure(&mut r, &s), measure(&mut r, &s));
        let direct = solve_transport_lp(&c1, &mu, &nu).unwrap().value + solve_transport_lp(&c2, &mu, &nu).unwrap().value;
        let primal = sum.eval(&mu, &nu).unwrap();
        assert!((primal - direct).abs() < 1e-12);
        let dual = sum.dual(&mu, &nu, &AscentConfig::default()).unwrap();
        assert!((dual - primal).abs() < 1e-5, "{dual} vs {primal}");

        // the pointwise operator dualizes MK with the summed cost instead
        let joint = CostMatrix::from_fn(s.clone(), s.clone(), |x, y| c1.get(x, y) + c2.get(x, y)).unwrap();
        let lp = solve_transport_lp(&joint, &mu, &nu).unwrap().value;
        let pointwise = backward_dual(sum.as_ref(), &mu, &nu, &AscentConfig::default()).unwrap().value;
        assert!((pointwise - lp).abs() < 1e-5, "{pointwise} vs {lp}");
        assert!(pointwise >= primal - 1e-9);
        widest = widest.max(pointwise - primal);
    }
    assert!(widest > 1e-3);
}

#[test]
fn add_trivial_twice() {
    let s = space("X", 3);
    let t = trivial_transfer(
        Potential::new(s.clone(), vec![0.5, -1.0, 2.0]).unwrap(),
        Potential::new(s.clone(), vec![1.0, 0.0, -0.5]).unwrap(),
    );
    let sum = add(t.clone(), t.clone()).unwrap();
    let f = [0.3, -1.2, 2.2];
    let half: Vec<f64> = f.iter().map(|v| v / 2.0).collect();
    let expect: Vec<f64> = t.backward(&half).unwrap().values.iter().map(|v| 2.0 * v).collect();
    for (u, v) in sum.backward(&f).unwrap().values.iter().zip(&expect) {
        assert!((u - v).abs() < 1e-8);
    }
}

#[test]
fn convolve_mk_matches_minplus() {
    let mut r = rng::stream(5, 0);
    let (a, b, c) = (space("A", 3), space("B", 4), space("C", 3));
    for _ in 0..5 {
        let (c1, c2) = (cost(&mut r, &a, &b), cost(&mut r, &b, &c));
        let conv = convolve(mk_transfer(c1), mk_transfer(c2)).unwrap();
        let (mu, nu) = (measure(&mut r, &a), measure(&mut r, &c));
        let exact = conv.exact_mk(&mu, &nu).unwrap().unwrap();
        let p = conv.primal(&mu, &nu).unwrap();
        assert!((p.value - exact).abs() < 1e-8, "{} vs {exact}", p.value);
        // the intermediate marginal attains the infimum
        let parts = conv.parts();
        let split = parts[0].eval(&mu, &p.intermediates[0]).unwrap() + parts[1].eval(&p.intermediates[0], &nu).unwrap();
        assert!((split - exact).abs() < 1e-8);
        let dual = conv.dual(&mu, &nu).unwrap();
        assert!((dual - exact).abs() < 1e-5);
    }
}

#[test]
fn identity_pushforward_is_neutral() {
    let mut r = rng::stream(6, 0);
    let s = space("X", 3);
    let t1 = marton_transfer(MartonParams { gamma: ScalarFn::power(2.0), d: cost(&mut r, &s, &s) }).unwrap();
    let id = pushforward_transfer(PointMap::identity(s.clone()));
    let conv = convolve(t1.clone(), id.clone()).unwrap();
    let pre = convolve(id, t1.clone()).unwrap();
    for _ in 0..3 {
        let (mu, nu) = (measure(&mut r, &s), measure(&mut r, &s));
        let v = t1.eval(&mu, &nu).unwrap();
        assert!((conv.eval(&mu, &nu).unwrap() - v).abs() < 1e-12);
        assert!((pre.eval(&mu, &nu).unwrap() - v).abs() < 1e-12);
    }
}

#[test]
fn convolution_duality_beyond_mk() {
    let mut r = rng::stream(7, 0);
    let s = space("X", 3);
    for _ in 0..3 {
        let t1 = mk_transfer(cost(&mut r, &s, &s));
        let t2 = marton_transfer(MartonParams { gamma: ScalarFn::power(2.0), d: cost(&mut r, &s, &s) }).unwrap();
        let conv = convolve(t1, t2).unwrap();
        let (mu, nu) = (measure(&mut r, &s), measure(&mut r, &s));
        let p = conv.primal(&mu, &nu).unwrap();
        let d = conv.dual(&mu, &nu).unwrap();
        assert!((p.value - d).abs() < 1e-5, "{} vs {d}", p.value);
    }
}

#[test]
fn associativity_and_chains() {
    let mut r = rng::stream(8, 0);
    let s = space("X", 3);
    let ts: Vec<TransferHandle> = (0..3).map(|_| mk_transfer(cost(&mut r, &s, &s))).collect();
    let left = convolve(convolve(ts[0].clone(), ts[1].clone()).unwrap(), ts[2].clone()).unwrap();
    let right = convolve(ts[0].clone(), convolve(ts[1].clone(), ts[2].clone()).unwrap()).unwrap();
    let flat = convolve_chain(ts.clone()).unwrap();
    for _ in 0..3 {
        let (mu, nu) = (measure(&mut r, &s), measure(&mut r, &s));
        let exact = flat.exact_mk(&mu, &nu).unwrap().unwrap();
        let p = flat.primal(&mu, &nu).unwrap();
        assert!((p.value - exact).abs() < 1e-8);
        let chain = ts[0].eval(&mu, &p.intermediates[0]).unwrap()
            + ts[1].eval(&p.intermediates[0], &p.intermediates[1]).unwrap()
            + ts[2].eval(&p.intermediates[1], &nu).unwrap();
        assert!((chain - exact).abs() < 1e-8);
        // the nested forms go through the generic primal
        let (a, b) = (left.primal(&mu, &nu).unwrap().value, right.primal(&mu, &nu).unwrap().value);
        assert!((a - exact).abs() < 1e-6 && (b - exact).abs() < 1e-6, "{a} {b} {exact}");
    }
    let g = [0.4, -1.0, 2.0];
    let (a, b) = (left.backward(&g).unwrap().values, right.backward(&g).unwrap().values);
    assert_eq!(a, b);
}

#[test]
fn direction_mismatch() {
    let s = space("X", 2);
    let push = pushforward_transfer(PointMap::identity(s.clone()));
    let c = CostMatrix::square(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let conv = convolve(push, mk_transfer(c)).unwrap();
    assert_eq!(conv.direction(), Direction::Backward);
    assert!(conv.forward(&[0.0, 1.0]).is_err());
}

#[test]
fn tensor_cases() {
    let mut r = rng::stream(9, 0);
    let (a, b) = (space("A", 2), space("B", 3));
    let zero = tensor(zero_trivial(&a, &a), zero_trivial(&b, &b)).unwrap();
    let ps = zero.source().clone();
    let (mu, nu) = (measure(&mut r, &ps), measure(&mut r, &ps));
    assert!(zero.eval(&mu, &nu).unwrap().abs() < 1e-12);

    let (c1, c2) = (cost(&mut r, &a, &a), cost(&mut r, &b, &b));
    let (t1, t2) = (mk_transfer(c1), mk_transfer(c2));
    let t = tensor(t1.clone(), t2.clone()).unwrap();
    for _ in 0..5 {
        let (m1, m2, n1, n2) = (measure(&mut r, &a), measure(&mut r, &b), measure(&mut r, &a), measure(&mut r, &b));
        let mu = product_measure(t.source(), &m1, &m2).unwrap();
        let nu = product_measure(t.target(), &n1, &n2).unwrap();
        let bound = t1.eval(&m1, &n1).unwrap() + t2.eval(&m2, &n2).unwrap();
        assert!(t.eval(&mu, &nu).unwrap() <= bound + 1e-9);
    }

    // identity in the first factor leaves the second factor's value
    let id = pushforward_transfer(PointMap::identity(a.clone()));
    let t = tensor(id, t2.clone()).unwrap();
    for _ in 0..3 {
        let (m1, m2, n2) = (measure(&mut r, &a), measure(&mut r, &b), measure(&mut r, &b));
        let mu = product_measure(t.source(), &m1, &m2).unwrap();
        let nu = product_measure(t.target(), &m1, &n2).unwrap();
        assert!((t.eval(&mu, &nu).unwrap() - t2.eval(&m2, &n2).unwrap()).abs() < 1e-8);
    }

    let big = space("Z", 9);
    assert!(tensor(zero_trivial(&big, &big), zero_trivial(&big, &big)).unwrap_err().is_input());
}

#[test]
fn order_relations_on_catalog() {
    let mut r = rng::stream(10, 0);
    let s = space("X", 4);
    let coords: Vec<f64> = vec![0.0, 0.5, 1.7, 2.0];
    let d = CostMatrix::from_fn(s.clone(), s.clone(), |x, y| (coords[x] - coords[y]).abs()).unwrap();
    let triv = trivial_transfer(
        Potential::new(s.clone(), vec![0.1, 0.2, -0.3, 1.0]).unwrap(),
        Potential::new(s.clone(), vec![1.0, 0.0, 2.0, -1.0]).unwrap(),
    );
    for t in [mk_transfer(cost(&mut r, &s, &s)), tv_transfer(s.clone()).unwrap(), kr_transfer(d).unwrap(), triv] {
        let rep = check_order_relations(t.as_ref(), 100, 11, 1e-10).unwrap();
        assert!(rep.passed(), "{}: {rep:?}", t.name());
    }
}

#[test]
fn schrodinger_order_relations_are_measured() {
    let s = space("X", 3);
    let w = vec![vec![1.0, 0.5, 0.0], vec![0.5, 2.0, 0.3], vec![0.0, 0.3, 0.7]];
    let t = schrodinger_transfer(MarkovKernelModel::from_symmetric_weights(s, w).unwrap()).unwrap();
    let rep = check_order_relations(t.as_ref(), 50, 12, 1e-10).unwrap();
    // log-sum-exp operators are strict convex smoothings: the triple
    // identities fail, and the report says by how much
    assert_eq!(rep.samples, 50);
    assert!(rep.triple_backward > 0 && rep.worst > 1e-6);
}

#[test]
fn projections() {
    let mut r = rng::stream(13, 0);
    let s = space("X", 4);
    let t = mk_transfer(cost(&mut r, &s, &s));
    for _ in 0..10 {
        let h = rng::uniform_vec(&mut r, 4, -2.0, 2.0);
        let f = t.backward(&h).unwrap().values;
        let p = t_concave_projection(t.as_ref(), &f).unwrap();
        for (a, b) in p.iter().zip(&f) {
            assert!((a - b).abs() < 1e-12);
        }
        let g = rng::uniform_vec(&mut r, 4, -2.0, 2.0);
        let once = t_convex_projection(t.as_ref(), &g).unwrap();
        let twice = t_convex_projection(t.as_ref(), &once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-12);
        }
        let once = t_concave_projection(t.as_ref(), &g).unwrap();
        let twice = t_concave_projection(t.as_ref(), &once).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    // translation covariance
    let f = rng::uniform_vec(&mut r, 4, -2.0, 2.0);
    let shifted: Vec<f64> = f.iter().map(|v| v + 1.5).collect();
    let (a, b) = (t_concave_projection(t.as_ref(), &f).unwrap(), t_concave_projection(t.as_ref(), &shifted).unwrap());
    for (u, v) in a.iter().zip(&b) {
        assert!((v - u - 1.5).abs() < 1e-12);
    }
}

#[test]
fn composed_operator_axioms() {
    let mut r = rng::stream(14, 0);
    let s = space("X", 3);
    let conv = convolve(mk_transfer(cost(&mut r, &s, &s)), mk_transfer(cost(&mut r, &s, &s))).unwrap();
    assert!(check_backward_axioms(conv.as_ref(), 100, 15, 1e-10).unwrap().passed());
}
