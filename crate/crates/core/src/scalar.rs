//! One-dimensional convex (or concave) functions with their increasing and
//! decreasing Legendre conjugates
//!
//!   α⊕(t) = sup_{s ≥ 0} [ts − α(s)],    β⊖(t) = sup_{s > 0} [−ts − β(s)] = β⊕(−t).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarFn {
    /// s
    Identity,
    /// scale · sᵖ on s ≥ 0 (p ≥ 1)
    Power {
        p: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// eˢ
    Exp,
    /// log s (concave)
    Log,
    /// −log s
    NegLog,
    /// s log s − s + 1
    Xlogx,
    /// (s − 1)²
    Chi2,
    /// Piecewise linear through the knots, +∞ outside their range.
    Sampled { knots: Vec<(f64, f64)> },
    /// The increasing conjugate of another function.
    IncConj { of: Box<ScalarFn> },
}

fn one() -> f64 {
    1.0
}

impl ScalarFn {
    pub fn power(p: f64) -> Self {
        ScalarFn::Power { p, scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScalarFn::Power { p, scale } if !(*p >= 1.0) || !(*scale > 0.0) => {
                Err(Error::input("power needs p >= 1 and scale > 0"))
            }
            ScalarFn::Sampled { knots } => {
                if knots.len() < 2 {
                    return Err(Error::input("sampled function needs at least two knots"));
                }
                if knots.windows(2).any(|w| w[0].0 >= w[1].0) {
                    return Err(Error::input("sampled knots must be strictly increasing in s"));
                }
                if knots.iter().any(|(s, v)| !s.is_finite() || !v.is_finite()) {
                    return Err(Error::input("sampled knots must be finite"));
                }
                Ok(())
            }
            ScalarFn::IncConj { of } => of.validate(),
            _ => Ok(()),
        }
    }

    pub fn is_concave(&self) -> bool {
        matches!(self, ScalarFn::Log)
    }

    pub fn eval(&self, s: f64) -> f64 {
        match self {
            ScalarFn::Identity => s,
            ScalarFn::Power { p, scale } => {
                if s < 0.0 {
                    f64::INFINITY
                } else {
                    scale * s.powf(*p)
                }
            }
            ScalarFn::Exp => s.exp(),
            ScalarFn::Log => {
                if s > 0.0 {
                    s.ln()
                } else if s == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    f64::NAN
                }
            }
            ScalarFn::NegLog => {
                if s > 0.0 {
                    -s.ln()
                } else {
                    f64::INFINITY
                }
            }
            ScalarFn::Xlogx => {
                if s > 0.0 {
                    s * s.ln() - s + 1.0
                } else if s == 0.0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            }
            ScalarFn::Chi2 => (s - 1.0) * (s - 1.0),
            ScalarFn::Sampled { knots } => {
                let (lo, hi) = (knots[0].0, knots[knots.len() - 1].0);
                if s < lo || s > hi {
                    return f64::INFINITY;
                }
                let i = knots.partition_point(|k| k.0 <= s).clamp(1, knots.len() - 1);
                let (a, b) = (knots[i - 1], knots[i]);
                a.1 + (b.1 - a.1) * (s - a.0) / (b.0 - a.0)
            }
            ScalarFn::IncConj { of } => of.conj_inc(s),
        }
    }

    /// Derivative (right derivative at kinks).
    pub fn deriv(&self, s: f64) -> f64 {
        match self {
            ScalarFn::Identity => 1.0,
            ScalarFn::Power { p, scale } => {
                if s <= 0.0 {
                    if *p == 1.0 {
                        *scale
                    } else {
                        0.0
                    }
                } else {
                    scale * p * s.powf(p - 1.0)
                }
            }
            ScalarFn::Exp => s.exp(),
            ScalarFn::Log => 1.0 / s,
            ScalarFn::NegLog => -1.0 / s,
            ScalarFn::Xlogx => {
                if s > 0.0 {
                    s.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            ScalarFn::Chi2 => 2.0 * (s - 1.0),
            ScalarFn::Sampled { knots } => {
                let i = knots.partition_point(|k| k.0 <= s).clamp(1, knots.len() - 1);
                let (a, b) = (knots[i - 1], knots[i]);
                (b.1 - a.1) / (b.0 - a.0)
            }
            ScalarFn::IncConj { of } => of.conj_inc_argmax(s),
        }
    }

    /// α⊕(t) = sup_{s ≥ 0} [ts − α(s)]; `+∞` when unbounded.
    pub fn conj_inc(&self, t: f64) -> f64 {
        let inf = f64::INFINITY;
        match self {
            ScalarFn::Identity => {
                if t <= 1.0 {
                    0.0
                } else {
                    inf
                }
            }
            ScalarFn::Power { p, scale } => {
                if *p == 1.0 {
                    return if t <= *scale { 0.0 } else { inf };
                }
                if t <= 0.0 {
                    return 0.0;
                }
                let s = (t / (scale * p)).powf(1.0 / (p - 1.0));
                scale * (p - 1.0) * s.powf(*p)
            }
            ScalarFn::Exp => {
                if t <= 1.0 {
                    -1.0
                } else {
                    t * t.ln() - t
                }
            }
            ScalarFn::Log => inf,
            ScalarFn::NegLog => {
                if t < 0.0 {
                    -1.0 - (-t).ln()
                } else {
                    inf
                }
            }
            ScalarFn::Xlogx => t.exp() - 1.0,
            ScalarFn::Chi2 => {
                if t >= -2.0 {
                    t + t * t / 4.0
                } else {
                    -1.0
                }
            }
            ScalarFn::Sampled { knots } => {
                let mut best = f64::NEG_INFINITY;
                let mut any = false;
                for &(s, v) in knots {
                    if s >= 0.0 {
                        any = true;
                        best = best.max(t * s - v);
                    }
                }
                // a knot range straddling 0 also allows s = 0 exactly
                if knots[0].0 < 0.0 && knots[knots.len() - 1].0 >= 0.0 {
                    best = best.max(-self.eval(0.0));
                    any = true;
                }
                if any {
                    best
                } else {
                    f64::NEG_INFINITY
                }
            }
            ScalarFn::IncConj { .. } => numeric_conj_inc(self, t).0,
        }
    }

    /// The maximizing s in α⊕(t) (its derivative in t).
    pub fn conj_inc_argmax(&self, t: f64) -> f64 {
        match self {
            ScalarFn::Identity => 0.0,
            ScalarFn::Power { p, scale } => {
                if *p == 1.0 || t <= 0.0 {
                    0.0
                } else {
                    (t / (scale * p)).powf(1.0 / (p - 1.0))
                }
            }
            ScalarFn::Exp => {
                if t <= 1.0 {
                    0.0
                } else {
                    t.ln()
                }
            }
            ScalarFn::Log => f64::INFINITY,
            ScalarFn::NegLog => {
                if t < 0.0 {
                    -1.0 / t
                } else {
                    f64::INFINITY
                }
            }
            ScalarFn::Xlogx => t.exp(),
            ScalarFn::Chi2 => (1.0 + t / 2.0).max(0.0),
            ScalarFn::Sampled { knots } => {
                let mut best = (f64::NEG_INFINITY, 0.0);
                for &(s, v) in knots {
                    if s >= 0.0 && t * s - v > best.0 {
                        best = (t * s - v, s);
                    }
                }
                best.1
            }
            ScalarFn::IncConj { .. } => numeric_conj_inc(self, t).1,
        }
    }

    /// β⊖(t) = sup_{s > 0} [−ts − β(s)].
    pub fn conj_dec(&self, t: f64) -> f64 {
        self.conj_inc(-t)
    }

    /// α⊕ as a function in its own right.
    pub fn conjugate_increasing(&self) -> ScalarFn {
        ScalarFn::IncConj { of: Box::new(self.clone()) }
    }

    /// β⊖ as a function: t ↦ β⊕(−t).
    pub fn conjugate_decreasing(&self) -> DecConj {
        DecConj { of: self.clone() }
    }

    /// Midpoint convexity (or concavity) on a uniform grid over `[lo, hi]`.
    pub fn check_shape(&self, lo: f64, hi: f64, n: usize, tol: f64) -> bool {
        let sign = if self.is_concave() { -1.0 } else { 1.0 };
        let h = (hi - lo) / n as f64;
        (1..n).all(|i| {
            let s = lo + i as f64 * h;
            let (a, b, c) = (self.eval(s - h), self.eval(s), self.eval(s + h));
            if !(a.is_finite() && b.is_finite() && c.is_finite()) {
                return true;
            }
            sign * (0.5 * (a + c) - b) >= -tol * (1.0 + b.abs())
        })
    }
}

/// `t ↦ β⊕(−t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecConj {
    pub of: ScalarFn,
}

impl DecConj {
    pub fn eval(&self, t: f64) -> f64 {
        self.of.conj_dec(t)
    }
}

/// sup_{s ≥ 0} [ts − f(s)] by bracketing and golden-section search; returns
/// (value, argmax). Only used for functions without a closed form.
pub fn numeric_conj_inc(f: &ScalarFn, t: f64) -> (f64, f64) {
    let obj = |s: f64| t * s - f.eval(s);
    let mut hi = 1.0;
    // grow until the objective stops increasing
    while hi < 1e12 && obj(2.0 * hi) > obj(hi) {
        hi *= 2.0;
    }
    if hi >= 1e12 {
        return (f64::INFINITY, f64::INFINITY);
    }
    let (s, v) = golden_max(obj, 0.0, 2.0 * hi, 1e-13);
    let v0 = obj(0.0);
    if v0 >= v {
        (v0, 0.0)
    } else {
        (v, s)
    }
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut it = 0;
    while (b - a) > tol * (1.0 + a.abs() + b.abs()) && it < 300 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
        it += 1;
    }
    let mut best = (c, fc);
    for s in [a, b, d] {
        let v = f(s);
        if v > best.1 {
            best = (s, v);
        }
    }
    (best.0, best.1)
}
