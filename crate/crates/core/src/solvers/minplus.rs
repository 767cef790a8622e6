//! Min-plus matrix algebra on cost matrices.

use crate::error::{Error, Result};
use crate::measure::{check_space, is_forbidden, CostMatrix, INF_COST};

/// (a ⊗ b)(x, z) = min_y a(x, y) + b(y, z).
pub fn minplus_compose(a: &CostMatrix, b: &CostMatrix) -> Result<CostMatrix> {
    check_space(a.target(), b.source())?;
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![INF_COST; n * m];
    for x in 0..n {
        for y in 0..k {
            let axy = a.get(x, y);
            if is_forbidden(axy) {
                continue;
            }
            for z in 0..m {
                let byz = b.get(y, z);
                if is_forbidden(byz) {
                    continue;
                }
                let v = axy + byz;
                if v < out[x * m + z] {
                    out[x * m + z] = v;
                }
            }
        }
    }
    CostMatrix::new(a.source().clone(), b.target().clone(), out)
}

/// Min-plus identity: 0 on the diagonal, forbidden elsewhere.
pub fn minplus_identity(c: &CostMatrix) -> Result<CostMatrix> {
    CostMatrix::from_fn(c.source().clone(), c.target().clone(), |x, y| if x == y { 0.0 } else { INF_COST })
}

/// cⁿ: cheapest n-step paths. `n = 0` gives the min-plus identity.
pub fn minplus_power(c: &CostMatrix, n: usize) -> Result<CostMatrix> {
    if !c.is_square() {
        return Err(Error::input("min-plus powers need a square cost"));
    }
    if n == 0 {
        return minplus_identity(c);
    }
    let mut p = c.clone();
    for _ in 1..n {
        p = minplus_compose(c, &p)?;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn examples() {
        let c = CostMatrix::square(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(minplus_power(&c, 1).unwrap(), c);
        assert_eq!(minplus_power(&c, 2).unwrap().to_rows(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
        let z = CostMatrix::square(vec![vec![0.0; 3]; 3]).unwrap();
        assert_eq!(minplus_power(&z, 7).unwrap(), z);
        let id = minplus_power(&c, 0).unwrap();
        assert_eq!(id.get(0, 0), 0.0);
        assert!(is_forbidden(id.get(0, 1)));
    }

    #[test]
    fn semigroup_law_integer_costs() {
        let mut r = rng::stream(5, 0);
        for _ in 0..50 {
            let n = r.gen_range(1..=6);
            let rows = (0..n).map(|_| (0..n).map(|_| r.gen_range(0..20) as f64).collect()).collect();
            let c = CostMatrix::square(rows).unwrap();
            let (a, b) = (r.gen_range(1..6), r.gen_range(1..6));
            let lhs = minplus_power(&c, a + b).unwrap();
            let rhs = minplus_compose(&minplus_power(&c, a).unwrap(), &minplus_power(&c, b).unwrap()).unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn semigroup_law_float_costs() {
        let mut r = rng::stream(6, 0);
        for _ in 0..50 {
            let n = r.gen_range(1..=6);
            let rows = (0..n).map(|_| rng::uniform_vec(&mut r, n, -1.0, 3.0)).collect();
            let c = CostMatrix::square(rows).unwrap();
            let lhs = minplus_power(&c, 7).unwrap();
            let rhs = minplus_compose(&minplus_power(&c, 3).unwrap(), &minplus_power(&c, 4).unwrap()).unwrap();
            for (a, b) in lhs.entries().iter().zip(rhs.entries()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
