//! JSON descriptors, run configuration and reports.
//!
//! Spaces, measures, costs and couplings use the serde forms of the
//! measure types. A transfer descriptor is `{"kind": ..., params}`, with the
//! algebra (`scaled`, `sum`, `convolution`, `tensor`, `calibrated`) nesting
//! other descriptors. Malformed input is reported with its JSON path.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::algebra::{add, convolve_chain, scale, tensor};
use crate::catalog::{
    barycentric_transfer, brenier_transfer, kr_transfer, martingale_transfer, marton_transfer, mk_transfer, pushforward_transfer,
    schrodinger_transfer, trivial_transfer, tv_transfer, MarkovKernelModel, MartonParams, TransferHandle,
};
use crate::entropic::{donsker_varadhan, generalized_entropy, log_entropy, power_transfer, ConvexHandle, GeneratorModel};
use crate::error::{Error, Result};
use crate::inequality::{Form, InequalitySpec, Lhs, Rhs, SearchSettings};
use crate::kam::calibrate;
use crate::measure::{CostMatrix, FiniteSpace, PointMap, Potential, ProbMeasure};
use crate::scalar::ScalarFn;

mod run;
mod suite;

pub use run::{error_exit_code, run, Command, Outcome, TransferArg};
pub use suite::{verify_suite, CheckResult, SuiteLevel, SuiteReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Parses `text`, reporting the JSON path of the first offending value.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema_error(&path, e.into_inner().to_string())
    })
}

pub fn parse_value<T: DeserializeOwned>(v: serde_json::Value) -> Result<T> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        schema_error(&path, e.into_inner().to_string())
    })
}

// Tagged descriptors parse through a buffered Value, which loses the
// outer path; they pass the inner path up inside the message instead.
const MARK: char = '\u{1}';

fn join_path(outer: &str, inner: &str) -> String {
    match (outer, inner) {
        (".", i) | ("", i) => i.into(),
        (o, "") | (o, ".") => o.into(),
        (o, i) if i.starts_with('[') => format!("{o}{i}"),
        (o, i) => format!("{o}.{i}"),
    }
}

fn split_marked(msg: &str) -> (Option<&str>, &str) {
    match msg.strip_prefix(MARK).and_then(|rest| rest.split_once(MARK)) {
        Some((path, msg)) => (Some(path), msg),
        None => (None, msg),
    }
}

fn schema_error(path: &str, msg: String) -> Error {
    let (inner, message) = split_marked(&msg);
    let path = join_path(path, inner.unwrap_or(""));
    Error::Schema { path: if path.is_empty() { ".".into() } else { path }, message: message.to_string() }
}

/// Path of `p` with its first segment (the variant key) dropped.
fn tail_path(p: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in p.iter().skip(1) {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("[{index}]")),
            Segment::Map { key } => {
                if !out.is_empty() {
                    out.push('.');
                }
                out.push_str(key);
            }
            Segment::Enum { variant } => {
                if !out.is_empty() {
                    out.push('.');
                }
                out.push_str(variant);
            }
            Segment::Unknown => out.push_str(".?"),
        }
    }
    out
}

/// `{"kind": k, ..}` to `{k: {..}}`, then the externally tagged parser.
fn de_tagged<'de, D, T>(
    d: D,
    ext: fn(serde_path_to_error::Deserializer<'_, '_, serde_json::Value>) -> std::result::Result<T, serde_json::Error>,
) -> std::result::Result<T, D::Error>
where
    D: serde::Deserializer<'de>,
{
    use serde::de::Error as _;
    let fail = |path: &str, msg: &str| D::Error::custom(format!("{MARK}{path}{MARK}{msg}"));
    let mut map = match serde_json::Value::deserialize(d)? {
        serde_json::Value::Object(m) => m,
        other => return Err(fail("", &format!("expected an object with a `kind`, got {other}"))),
    };
    let kind = match map.remove("kind") {
        Some(serde_json::Value::String(k)) => k,
        Some(_) => return Err(fail("kind", "expected a string")),
        None => return Err(fail("", "missing field `kind`")),
    };
    let value = serde_json::Value::Object([(kind.clone(), serde_json::Value::Object(map))].into_iter().collect());
    let mut track = serde_path_to_error::Track::new();
    let r = ext(serde_path_to_error::Deserializer::new(value, &mut track));
    r.map_err(|e| {
        let path = track.path();
        let msg = e.to_string();
        let here = if path.iter().count() == 0 { "kind".to_string() } else { tail_path(&path) };
        let (inner, msg) = split_marked(&msg);
        fail(&join_path(&here, inner.unwrap_or("")), msg)
    })
}

fn ser_tagged<S: serde::Serializer>(
    ext: std::result::Result<serde_json::Value, serde_json::Error>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::Error as _;
    let value = ext.map_err(S::Error::custom)?;
    let tagged = match value {
        serde_json::Value::Object(m) if m.len() == 1 => {
            let (kind, body) = m.into_iter().next().expect("one entry");
            let mut out = serde_json::Map::new();
            out.insert("kind".into(), serde_json::Value::String(kind));
            if let serde_json::Value::Object(fields) = body {
                out.extend(fields);
            }
            serde_json::Value::Object(out)
        }
        other => other,
    };
    tagged.serialize(s)
}

macro_rules! kind_tagged {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                ser_tagged(<$t>::serialize(self, serde_json::value::Serializer), s)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                de_tagged(d, |de| <$t>::deserialize(de))
            }
        }
    };
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(&read_text(path)?).map_err(|e| match e {
        Error::Schema { path: p, message } => Error::Schema { path: format!("{}:{p}", path.display()), message },
        e => e,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(remote = "Self", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransferDesc {
    Mk {
        cost: CostMatrix,
    },
    Tv {
        space: FiniteSpace,
    },
    Kr {
        #[serde(alias = "distance")]
        cost: CostMatrix,
    },
    Brenier {
        #[serde(alias = "grid")]
        space: FiniteSpace,
    },
    Martingale {
        cost: CostMatrix,
    },
    Marton {
        gamma: ScalarFn,
        d: CostMatrix,
    },
    Barycentric {
        #[serde(alias = "grid")]
        space: FiniteSpace,
    },
    /// A reversible kernel, either as rows of K with reversing weights m or
    /// as symmetric conductances.
    Schrodinger {
        space: FiniteSpace,
        #[serde(default)]
        kernel: Option<Vec<Vec<f64>>>,
        #[serde(default)]
        m: Option<Vec<f64>>,
        #[serde(default)]
        conductances: Option<Vec<Vec<f64>>>,
    },
    /// `image[i]` is the label of the image of the i-th source point.
    Pushforward {
        source: FiniteSpace,
        target: FiniteSpace,
        image: Vec<String>,
    },
    Trivial {
        c1: Potential,
        c2: Potential,
    },
    Scaled {
        factor: f64,
        of: Box<TransferDesc>,
    },
    Sum {
        left: Box<TransferDesc>,
        right: Box<TransferDesc>,
    },
    Convolution {
        parts: Vec<TransferDesc>,
    },
    Tensor {
        left: Box<TransferDesc>,
        right: Box<TransferDesc>,
    },
    Calibrated {
        ell: f64,
        of: Box<TransferDesc>,
    },
}

kind_tagged!(TransferDesc);

impl TransferDesc {
    pub fn kind(&self) -> &'static str {
        match self {
            TransferDesc::Mk { .. } => "mk",
            TransferDesc::Tv { .. } => "tv",
            TransferDesc::Kr { .. } => "kr",
            TransferDesc::Brenier { .. } => "brenier",
            TransferDesc::Martingale { .. } => "martingale",
            TransferDesc::Marton { .. } => "marton",
            TransferDesc::Barycentric { .. } => "barycentric",
            TransferDesc::Schrodinger { .. } => "schrodinger",
            TransferDesc::Pushforward { .. } => "pushforward",
            TransferDesc::Trivial { .. } => "trivial",
            TransferDesc::Scaled { .. } => "scaled",
            TransferDesc::Sum { .. } => "sum",
            TransferDesc::Convolution { .. } => "convolution",
            TransferDesc::Tensor { .. } => "tensor",
            TransferDesc::Calibrated { .. } => "calibrated",
        }
    }

    pub fn build(&self) -> Result<TransferHandle> {
        Ok(match self {
            TransferDesc::Mk { cost } => mk_transfer(cost.clone()),
            TransferDesc::Tv { space } => tv_transfer(Arc::new(space.clone()))?,
            TransferDesc::Kr { cost } => kr_transfer(cost.clone())?,
            TransferDesc::Brenier { space } => brenier_transfer(Arc::new(space.clone()))?,
            TransferDesc::Martingale { cost } => martingale_transfer(cost.clone())?,
            TransferDesc::Marton { gamma, d } => marton_transfer(MartonParams { gamma: gamma.clone(), d: d.clone() })?,
            TransferDesc::Barycentric { space } => barycentric_transfer(Arc::new(space.clone()))?,
            TransferDesc::Schrodinger { space, kernel, m, conductances } => {
                let space = Arc::new(space.clone());
                let model = match (kernel, m, conductances) {
                    (Some(k), Some(m), None) => MarkovKernelModel::new(space, k.clone(), m.clone())?,
                    (None, None, Some(w)) => MarkovKernelModel::from_symmetric_weights(space, w.clone())?,
                    _ => return Err(Error::input("schrodinger needs either kernel and m, or conductances")),
                };
                schrodinger_transfer(model)?
            }
            TransferDesc::Pushforward { source, target, image } => {
                let (s, t) = (Arc::new(source.clone()), Arc::new(target.clone()));
                let idx = image.iter().map(|l| t.index_of(l)).collect::<Result<Vec<_>>>()?;
                pushforward_transfer(PointMap::new(s, t, idx)?)
            }
            TransferDesc::Trivial { c1, c2 } => trivial_transfer(c1.clone(), c2.clone()),
            TransferDesc::Scaled { factor, of } => scale(*factor, of.build()?)?,
            TransferDesc::Sum { left, right } => add(left.build()?, right.build()?)?,
            TransferDesc::Convolution { parts } => {
                let built = parts.iter().map(|p| p.build()).collect::<Result<Vec<_>>>()?;
                convolve_chain(built)?
            }
            TransferDesc::Tensor { left, right } => tensor(left.build()?, right.build()?)?,
            TransferDesc::Calibrated { ell, of } => calibrate(of.build()?, *ell)?,
        })
    }
}

/// Convex (non-linear) transfers: entropies and powers of linear ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(remote = "Self", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvexDesc {
    /// Relative entropy H(ν | μ).
    LogEntropy { space: FiniteSpace },
    /// ∫ α(dν/dμ) dμ.
    GeneralizedEntropy { space: FiniteSpace, alpha: ScalarFn },
    /// Donsker–Varadhan information of a reversible generator.
    DonskerVaradhan { space: FiniteSpace, rates: Vec<Vec<f64>>, mu: Vec<f64> },
    /// α(𝓣) for increasing convex α.
    Power { alpha: ScalarFn, of: TransferDesc },
}

kind_tagged!(ConvexDesc);

impl ConvexDesc {
    pub fn build(&self) -> Result<ConvexHandle> {
        Ok(match self {
            ConvexDesc::LogEntropy { space } => log_entropy(Arc::new(space.clone())),
            ConvexDesc::GeneralizedEntropy { space, alpha } => generalized_entropy(Arc::new(space.clone()), alpha.clone())?,
            ConvexDesc::DonskerVaradhan { space, rates, mu } => {
                donsker_varadhan(Arc::new(space.clone()), GeneratorModel { rates: rates.clone(), mu: mu.clone() })?
            }
            ConvexDesc::Power { alpha, of } => power_transfer(alpha.clone(), of.build()?)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LhsDesc {
    Linear(TransferDesc),
    Convex(ConvexDesc),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(remote = "Self", rename_all = "snake_case", deny_unknown_fields)]
pub enum RhsDesc {
    Entropic {
        entropy: ConvexDesc,
        #[serde(default)]
        link: Option<TransferDesc>,
        lambda: f64,
    },
    Maurey {
        t1: TransferDesc,
        t2: TransferDesc,
        lambda1: f64,
        lambda2: f64,
    },
}

kind_tagged!(RhsDesc);

/// The file form of an inequality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InequalityFile {
    pub form: Form,
    pub lhs: LhsDesc,
    pub rhs: RhsDesc,
    pub mu: ProbMeasure,
    pub nu: ProbMeasure,
    #[serde(default)]
    pub settings: Option<SearchSettings>,
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Schema { path: path.into(), message: format!("must be positive and finite, got {v}") })
    }
}

impl InequalityFile {
    pub fn validate(&self) -> Result<()> {
        match &self.rhs {
            RhsDesc::Entropic { lambda, .. } => positive("rhs.lambda", *lambda)?,
            RhsDesc::Maurey { lambda1, lambda2, .. } => {
                positive("rhs.lambda1", *lambda1)?;
                positive("rhs.lambda2", *lambda2)?;
            }
        }
        match (&self.form, &self.rhs) {
            (Form::Maurey, RhsDesc::Maurey { .. })
            | (Form::BackwardBackward | Form::ForwardBackward, RhsDesc::Entropic { .. }) => Ok(()),
            _ => Err(Error::Schema { path: "rhs.kind".into(), message: "does not match the form".into() }),
        }
    }

    pub fn build(&self, seed: u64, tol: Option<f64>) -> Result<InequalitySpec> {
        self.validate()?;
        let lhs = match &self.lhs {
            LhsDesc::Linear(t) => Lhs::Linear(t.build()?),
            LhsDesc::Convex(c) => Lhs::Convex(c.build()?),
        };
        let rhs = match &self.rhs {
            RhsDesc::Entropic { entropy, link, lambda } => {
                Rhs::Entropic { entropy: entropy.build()?, link: link.as_ref().map(|l| l.build()).transpose()?, lambda: *lambda }
            }
            RhsDesc::Maurey { t1, t2, lambda1, lambda2 } => {
                Rhs::Maurey { t1: t1.build()?, t2: t2.build()?, lambda1: *lambda1, lambda2: *lambda2 }
            }
        };
        let mut settings = self.settings.clone().unwrap_or_default();
        settings.seed = seed;
        if let Some(t) = tol {
            settings.tol = t;
        }
        Ok(InequalitySpec { form: self.form, lhs, rhs, mu: self.mu.clone(), nu: self.nu.clone(), settings })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

pub const TOL_ENV: &str = "TRANSFER_TOL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Default tolerance; per-solver entries in `tolerances` override it.
    pub tol: f64,
    pub tolerances: BTreeMap<String, f64>,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { seed: 0, tol: 1e-8, tolerances: BTreeMap::new(), format: Format::Json }
    }
}

impl RunConfig {
    /// Defaults with the tolerance taken from `TRANSFER_TOL` when set.
    pub fn from_env() -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Ok(v) = std::env::var(TOL_ENV) {
            cfg.tol = v.trim().parse().map_err(|_| Error::input(format!("{TOL_ENV}={v} is not a number")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.tolerances.values().any(|t| !(*t > 0.0)) {
            return Err(Error::input("tolerances must be positive"));
        }
        Ok(())
    }

    pub fn tol_for(&self, solver: &str) -> f64 {
        self.tolerances.get(solver).copied().unwrap_or(self.tol)
    }
}

/// How a reported number was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Exact linear program (transport or stationary).
    ExactLp,
    /// Exact min-plus algebra (Karp, matrix powers).
    MinPlus,
    /// Closed formula.
    ClosedForm,
    /// Dense grid plus local refinement.
    Grid,
    /// Ascent or descent with a stopping tolerance.
    Ascent,
    /// Operator iteration with a stopping tolerance.
    Iteration,
    /// Seeded search giving a bound only.
    LowerBound,
}

/// Non-finite floats as the strings "inf", "-inf" and "nan", since JSON
/// numbers cannot hold them.
pub mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(de::Error::custom(format!("expected a number, \"inf\", \"-inf\" or \"nan\", got {t:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub name: String,
    #[serde(with = "extended_f64")]
    pub value: f64,
    pub tol: f64,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub verb: String,
    pub version: String,
    /// SHA-256 over the inputs, in argument order.
    pub inputs_digest: String,
    pub seed: u64,
    pub claims: Vec<Claim>,
    pub values: serde_json::Value,
    pub witnesses: serde_json::Value,
    pub provenance: serde_json::Value,
}

pub fn digest(inputs: &[(&str, &[u8])]) -> String {
    let mut h = Sha256::new();
    for (name, bytes) in inputs {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    format!("{:x}", h.finalize())
}

fn positive_zeros(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.as_f64() == Some(0.0) && n.is_f64() => *v = serde_json::json!(0.0),
        serde_json::Value::Array(a) => a.iter_mut().for_each(positive_zeros),
        serde_json::Value::Object(o) => o.values_mut().for_each(positive_zeros),
        _ => {}
    }
}

impl Report {
    pub fn new(verb: &str, inputs_digest: String, seed: u64) -> Self {
        Report {
            verb: verb.into(),
            version: VERSION.into(),
            inputs_digest,
            seed,
            claims: Vec::new(),
            values: serde_json::Value::Null,
            witnesses: serde_json::Value::Null,
            provenance: serde_json::Value::Null,
        }
    }

    pub fn claim(&mut self, name: &str, value: f64, tol: f64, method: Method) {
        self.claims.push(Claim { name: name.into(), value, tol, method });
    }

    pub fn to_json(&self) -> String {
        let mut r = self.clone();
        for v in [&mut r.values, &mut r.witnesses, &mut r.provenance] {
            positive_zeros(v);
        }
        for c in &mut r.claims {
            c.value += 0.0;
        }
        let mut s = serde_json::to_string_pretty(&r).expect("reports serialize");
        s.push('\n');
        s
    }

    /// Re-reads an emitted report and checks its invariants.
    pub fn validate_json(text: &str) -> Result<Report> {
        let r: Report = parse_json(text)?;
        if r.inputs_digest.len() != 64 || !r.inputs_digest.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::Schema { path: "inputs_digest".into(), message: "not a SHA-256 hex digest".into() });
        }
        for (i, c) in r.claims.iter().enumerate() {
            if !(c.tol >= 0.0) {
                return Err(Error::Schema { path: format!("claims[{i}].tol"), message: "missing or negative tolerance".into() });
            }
        }
        Ok(r)
    }
}

pub fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("plain data serializes")
}

#[cfg(test)]
mod tests;
