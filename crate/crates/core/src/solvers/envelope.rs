//! Upper concave envelope of a finite point set in the plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeResult {
    /// Hull vertices, strictly increasing in t, slopes strictly decreasing.
    pub knots: Vec<(f64, f64)>,
    /// Index of the input point behind each knot.
    #[serde(default)]
    pub sources: Vec<usize>,
}

impl EnvelopeResult {
    /// Piecewise-linear hull value; −∞ outside the hull's t-range.
    pub fn eval(&self, t: f64) -> f64 {
        let k = &self.knots;
        let (t0, tn) = (k[0].0, k[k.len() - 1].0);
        if t < t0 || t > tn || t.is_nan() {
            return f64::NEG_INFINITY;
        }
        if k.len() == 1 {
            return k[0].1;
        }
        let i = k.partition_point(|p| p.0 <= t).clamp(1, k.len() - 1);
        let (a, b) = (k[i - 1], k[i]);
        if t == b.0 {
            return b.1;
        }
        a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
    }

    /// Knots `(i, j)` around `t` and the weight `w` on knot `i`, so that
    /// `t = w·t_i + (1 − w)·t_j`. `None` outside the range.
    pub fn bracket(&self, t: f64) -> Option<(usize, usize, f64)> {
        let k = &self.knots;
        if t < k[0].0 || t > k[k.len() - 1].0 || t.is_nan() {
            return None;
        }
        if k.len() == 1 {
            return Some((0, 0, 1.0));
        }
        let i = k.partition_point(|p| p.0 <= t).clamp(1, k.len() - 1);
        let (a, b) = (k[i - 1].0, k[i].0);
        Some((i - 1, i, ((b - t) / (b - a)).clamp(0.0, 1.0)))
    }

    pub fn t_min(&self) -> f64 {
        self.knots[0].0
    }

    pub fn t_max(&self) -> f64 {
        self.knots[self.knots.len() - 1].0
    }

    /// Segment slopes, non-increasing.
    pub fn slopes(&self) -> Vec<f64> {
        self.knots.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect()
    }
}

pub fn concave_envelope_1d(points: &[(f64, f64)]) -> Result<EnvelopeResult> {
    if points.is_empty() {
        return Err(Error::input("envelope of an empty point set"));
    }
    if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
        return Err(Error::input("envelope points must be finite"));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (points[i], points[j]);
        a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)).then(i.cmp(&j))
    });
    order.dedup_by(|j, i| points[*i].0 == points[*j].0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(order.len());
    let mut sources: Vec<usize> = Vec::with_capacity(order.len());
    for idx in order {
        let p = points[idx];
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b unless it lies strictly above the chord a–p
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
                sources.pop();
            } else {
                break;
            }
        }
        hull.push(p);
        sources.push(idx);
    }
    Ok(EnvelopeResult { knots: hull, sources })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn collinear() {
        let e = concave_envelope_1d(&[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0), (3.0, 4.0)]).unwrap();
        assert_eq!(e.knots, vec![(0.0, 1.0), (3.0, 4.0)]);
        assert_eq!(e.eval(1.5), 2.5);
    }

    #[test]
    fn tent() {
        let e = concave_envelope_1d(&[(0.0, 0.0), (1.0, 1.0), (2.0, 0.0)]).unwrap();
        assert_eq!(e.knots.len(), 3);
        assert_eq!(e.sources, vec![0, 1, 2]);
        assert_eq!(e.eval(1.0), 1.0);
        assert_eq!(e.eval(0.5), 0.5);
    }

    #[test]
    fn dip_is_bridged() {
        let e = concave_envelope_1d(&[(0.0, 0.0), (1.0, -1.0), (2.0, 0.0)]).unwrap();
        assert_eq!(e.knots, vec![(0.0, 0.0), (2.0, 0.0)]);
        assert_eq!(e.eval(1.0), 0.0);
        assert_eq!(e.eval(-0.1), f64::NEG_INFINITY);
        assert_eq!(e.eval(2.1), f64::NEG_INFINITY);
    }

    #[test]
    fn empty_is_error() {
        assert!(concave_envelope_1d(&[]).is_err());
    }

    #[test]
    fn random_hulls_are_concave_dominating_minimal() {
        let mut r = rng::stream(9, 0);
        for _ in 0..200 {
            let k = r.gen_range(1..12);
            let pts: Vec<(f64, f64)> = (0..k).map(|_| (r.gen_range(0..20) as f64 * 0.5, r.gen_range(-3.0..3.0))).collect();
            let e = concave_envelope_1d(&pts).unwrap();
            for w in e.slopes().windows(2) {
                assert!(w[0] > w[1]);
            }
            for &(t, v) in &pts {
                assert!(e.eval(t) >= v - 1e-12);
            }
            // removing an interior knot must uncover that knot (it is an input point)
            for i in 1..e.knots.len().saturating_sub(1) {
                let mut reduced = e.knots.clone();
                let removed = reduced.remove(i);
                let r2 = EnvelopeResult { knots: reduced, sources: vec![] };
                assert!(r2.eval(removed.0) < removed.1);
            }
        }
    }
}
