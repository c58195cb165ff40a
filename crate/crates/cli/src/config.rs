//! Experiment configuration: a flat, sectioned `key = value` text format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use cocycle_core::base::{HyperbolicToralMap, Rate, RateData};
use cocycle_core::{TrigPolynomial, TrigTerm};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("[{section}] {key}: {msg}")]
    Value {
        section: String,
        key: String,
        msg: String,
    },
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CocycleKind {
    Constant,
    ClosedForm,
    Grid,
    Triangular,
    SmoothPair,
    PerturbedConstant,
    Divergent,
}

impl CocycleKind {
    pub const ALL: [CocycleKind; 7] = [
        CocycleKind::Constant,
        CocycleKind::ClosedForm,
        CocycleKind::Grid,
        CocycleKind::Triangular,
        CocycleKind::SmoothPair,
        CocycleKind::PerturbedConstant,
        CocycleKind::Divergent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CocycleKind::Constant => "constant",
            CocycleKind::ClosedForm => "closed_form",
            CocycleKind::Grid => "grid",
            CocycleKind::Triangular => "triangular",
            CocycleKind::SmoothPair => "smooth_pair",
            CocycleKind::PerturbedConstant => "perturbed_constant",
            CocycleKind::Divergent => "divergent",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn name(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "json" => Some(Format::Json),
            "csv" => Some(Format::Csv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseSpec {
    pub matrix: [[i64; 2]; 2],
    pub gamma_exponent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CocycleSpec {
    pub kind: CocycleKind,
    /// Kind-specific keys, kept verbatim.
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub tol: f64,
    pub n_max: usize,
    pub grid: usize,
    pub samples: usize,
    pub seed: u64,
    pub max_leg: f64,
    pub n_check: usize,
    pub beta: f64,
    pub t_max: f64,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            n_max: 200,
            grid: 32,
            samples: 100,
            seed: 0,
            max_leg: 2.0,
            n_check: 3,
            beta: 1.0,
            t_max: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub dir: String,
    pub format: Format,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            format: Format::Json,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub base: BaseSpec,
    pub cocycle: CocycleSpec,
    pub rates: BTreeMap<String, f64>,
    pub run: RunSpec,
    pub output: OutputSpec,
}

const RATE_KEYS: [&str; 6] = ["nu", "nu_hat", "gamma", "gamma_hat", "mu", "mu_hat"];

fn value_err(section: &str, key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Value {
        section: section.into(),
        key: key.into(),
        msg: msg.into(),
    }
}

fn num<T: std::str::FromStr>(section: &str, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| value_err(section, key, format!("cannot parse {v:?}")))
}

fn parse_sections(text: &str) -> Result<BTreeMap<String, BTreeMap<String, String>>> {
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_string();
            if out.contains_key(&name) {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    msg: format!("duplicate section [{name}]"),
                });
            }
            out.insert(name.clone(), BTreeMap::new());
            current = Some(name);
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            });
        };
        let Some(section) = &current else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                msg: "key outside of a section".into(),
            });
        };
        let entries = out.get_mut(section).expect("section exists");
        if entries.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(ConfigError::Syntax {
                line: i + 1,
                msg: format!("duplicate key {}", k.trim()),
            });
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut sections = parse_sections(text)?;
        for name in sections.keys() {
            if !["base", "cocycle", "rates", "run", "output"].contains(&name.as_str()) {
                return Err(ConfigError::Invalid(format!("unknown section [{name}]")));
            }
        }

        let base_sec = sections.remove("base").unwrap_or_default();
        let mut base = BaseSpec {
            matrix: [[2, 1], [1, 1]],
            gamma_exponent: 0.4,
        };
        for (k, v) in &base_sec {
            match k.as_str() {
                "matrix" => {
                    let e: Vec<i64> = v
                        .split_whitespace()
                        .map(|s| num("base", k, s))
                        .collect::<Result<_>>()?;
                    if e.len() != 4 {
                        return Err(value_err("base", k, "expected four integers"));
                    }
                    base.matrix = [[e[0], e[1]], [e[2], e[3]]];
                }
                "gamma_exponent" => base.gamma_exponent = num("base", k, v)?,
                _ => return Err(value_err("base", k, "unknown key")),
            }
        }

        let mut co = sections
            .remove("cocycle")
            .ok_or_else(|| ConfigError::Invalid("missing [cocycle] section".into()))?;
        let kind_s = co
            .remove("kind")
            .ok_or_else(|| value_err("cocycle", "kind", "missing"))?;
        let kind = CocycleKind::parse(&kind_s)
            .ok_or_else(|| value_err("cocycle", "kind", format!("unknown kind {kind_s:?}")))?;

        let mut rates = BTreeMap::new();
        for (k, v) in sections.remove("rates").unwrap_or_default() {
            if !RATE_KEYS.contains(&k.as_str()) {
                return Err(value_err("rates", &k, "unknown rate"));
            }
            let r: f64 = num("rates", &k, &v)?;
            if !(r > 0.0 && r.is_finite()) {
                return Err(value_err("rates", &k, "must be positive"));
            }
            rates.insert(k, r);
        }

        let mut run = RunSpec::default();
        for (k, v) in sections.remove("run").unwrap_or_default() {
            match k.as_str() {
                "tol" => run.tol = num("run", &k, &v)?,
                "n_max" => run.n_max = num("run", &k, &v)?,
                "grid" => run.grid = num("run", &k, &v)?,
                "samples" => run.samples = num("run", &k, &v)?,
                "seed" => run.seed = num("run", &k, &v)?,
                "max_leg" => run.max_leg = num("run", &k, &v)?,
                "n_check" => run.n_check = num("run", &k, &v)?,
                "beta" => run.beta = num("run", &k, &v)?,
                "t_max" => run.t_max = num("run", &k, &v)?,
                _ => return Err(value_err("run", &k, "unknown key")),
            }
        }

        let mut output = OutputSpec::default();
        for (k, v) in sections.remove("output").unwrap_or_default() {
            match k.as_str() {
                "dir" => output.dir = v,
                "format" => {
                    output.format = Format::parse(&v).ok_or_else(|| value_err("output", &k, "expected json or csv"))?
                }
                _ => return Err(value_err("output", &k, "unknown key")),
            }
        }

        let cfg = Self {
            base,
            cocycle: CocycleSpec { kind, params: co },
            rates,
            run,
            output,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every value that can be checked without running a computation.
    pub fn validate(&self) -> Result<()> {
        self.map()?;
        let r = &self.run;
        if !(r.tol > 0.0) {
            return Err(value_err("run", "tol", "must be positive"));
        }
        if r.n_max == 0 || r.grid < 2 || r.samples == 0 {
            return Err(ConfigError::Invalid("run: n_max, samples must be >= 1 and grid >= 2".into()));
        }
        if !(r.beta > 0.0 && r.beta <= 1.0) {
            return Err(value_err("run", "beta", "must lie in (0, 1]"));
        }
        if !(r.max_leg > 0.0 && r.t_max > 0.0) {
            return Err(ConfigError::Invalid("run: max_leg and t_max must be positive".into()));
        }
        let lambda = self.map()?.lambda();
        let p = &self.cocycle.params;
        let allowed: &[&str] = match self.cocycle.kind {
            CocycleKind::Constant | CocycleKind::ClosedForm => &[],
            CocycleKind::Grid => &["file"],
            CocycleKind::Triangular => &["r", "phi", "n_trunc"],
            CocycleKind::SmoothPair => &["mu_exponent", "angle"],
            CocycleKind::PerturbedConstant => &["a0", "eps"],
            CocycleKind::Divergent => &[],
        };
        let entries = matches!(self.cocycle.kind, CocycleKind::Constant | CocycleKind::ClosedForm);
        for (k, v) in p {
            if entries && k != "dim" && parse_entry_key(k).is_none() {
                return Err(value_err("cocycle", k, "unknown key"));
            }
            if !entries && !allowed.contains(&k.as_str()) {
                return Err(value_err("cocycle", k, "unknown key"));
            }
            if k == "phi" || k == "angle" || parse_entry_key(k).is_some() {
                parse_expression(v, lambda).map_err(|m| value_err("cocycle", k, m))?;
            }
        }
        if entries {
            let dim = self.dim()?;
            for i in 0..dim {
                for j in 0..dim {
                    let key = format!("entry_{i}_{j}");
                    if !p.contains_key(&key) {
                        return Err(value_err("cocycle", &key, "missing"));
                    }
                }
            }
            for k in p.keys().filter(|k| *k != "dim") {
                let (i, j) = parse_entry_key(k).expect("checked above");
                if i >= dim || j >= dim {
                    return Err(value_err("cocycle", k, format!("outside a {dim}x{dim} matrix")));
                }
            }
            if self.cocycle.kind == CocycleKind::Constant {
                for (k, v) in p.iter().filter(|(k, _)| *k != "dim") {
                    if !parse_expression(v, lambda).map_err(|m| value_err("cocycle", k, m))?.is_constant() {
                        return Err(value_err("cocycle", k, "constant cocycles need constant entries"));
                    }
                }
            }
        }
        if self.cocycle.kind == CocycleKind::Grid && !p.contains_key("file") {
            return Err(value_err("cocycle", "file", "missing"));
        }
        for key in ["r", "n_trunc", "mu_exponent", "eps"] {
            if let Some(v) = p.get(key) {
                num::<f64>("cocycle", key, v)?;
            }
        }
        if let Some(v) = p.get("a0") {
            let e: Vec<f64> = v
                .split_whitespace()
                .map(|s| num("cocycle", "a0", s))
                .collect::<Result<_>>()?;
            if e.len() != 4 {
                return Err(value_err("cocycle", "a0", "expected four numbers"));
            }
        }
        Ok(())
    }

    pub fn map(&self) -> Result<HyperbolicToralMap> {
        HyperbolicToralMap::new(self.base.matrix).map_err(|e| value_err("base", "matrix", e.to_string()))
    }

    pub fn dim(&self) -> Result<usize> {
        match self.cocycle.params.get("dim") {
            Some(v) => {
                let d: usize = num("cocycle", "dim", v)?;
                if d == 0 {
                    return Err(value_err("cocycle", "dim", "must be at least 1"));
                }
                Ok(d)
            }
            None => Ok(2),
        }
    }

    pub fn param_f64(&self, key: &str, default: f64) -> f64 {
        self.cocycle
            .params
            .get(key)
            .and_then(|v| v.parse().ok())
            .unwrap_or(default)
    }

    /// Trigonometric expression parameter, `lambda` bound to the base eigenvalue.
    pub fn param_expr(&self, key: &str) -> Option<TrigPolynomial> {
        let lambda = self.map().ok()?.lambda();
        self.cocycle
            .params
            .get(key)
            .and_then(|v| parse_expression(v, lambda).ok())
    }

    pub fn rates(&self) -> Result<RateData> {
        let mut r = RateData::toral(&self.map()?, self.base.gamma_exponent);
        for (k, v) in &self.rates {
            let rate = Rate::Constant(*v);
            match k.as_str() {
                "nu" => r.nu = rate,
                "nu_hat" => r.nu_hat = rate,
                "gamma" => r.gamma = rate,
                "gamma_hat" => r.gamma_hat = rate,
                "mu" => r.mu = rate,
                "mu_hat" => r.mu_hat = rate,
                _ => unreachable!("rate keys are validated"),
            }
        }
        Ok(r)
    }

    /// Canonical text form; `parse(serialize(c)) == c`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let m = self.base.matrix;
        let _ = writeln!(s, "[base]");
        let _ = writeln!(s, "matrix = {} {} {} {}", m[0][0], m[0][1], m[1][0], m[1][1]);
        let _ = writeln!(s, "gamma_exponent = {}", self.base.gamma_exponent);
        let _ = writeln!(s, "\n[cocycle]");
        let _ = writeln!(s, "kind = {}", self.cocycle.kind.name());
        for (k, v) in &self.cocycle.params {
            let _ = writeln!(s, "{k} = {v}");
        }
        let _ = writeln!(s, "\n[rates]");
        for (k, v) in &self.rates {
            let _ = writeln!(s, "{k} = {v}");
        }
        let r = &self.run;
        let _ = writeln!(s, "\n[run]");
        let _ = writeln!(s, "tol = {}", r.tol);
        let _ = writeln!(s, "n_max = {}", r.n_max);
        let _ = writeln!(s, "grid = {}", r.grid);
        let _ = writeln!(s, "samples = {}", r.samples);
        let _ = writeln!(s, "seed = {}", r.seed);
        let _ = writeln!(s, "max_leg = {}", r.max_leg);
        let _ = writeln!(s, "n_check = {}", r.n_check);
        let _ = writeln!(s, "beta = {}", r.beta);
        let _ = writeln!(s, "t_max = {}", r.t_max);
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.output.dir);
        let _ = writeln!(s, "format = {}", self.output.format.name());
        s
    }

    /// Hex SHA-256 of the canonical serialization with `[output]` reset to its
    /// defaults, so that the digest only depends on what determines the results.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSpec::default();
        hex::encode(Sha256::digest(c.serialize().as_bytes()))
    }
}

fn parse_entry_key(k: &str) -> Option<(usize, usize)> {
    let rest = k.strip_prefix("entry_")?;
    let (i, j) = rest.split_once('_')?;
    Some((i.parse().ok()?, j.parse().ok()?))
}

/// Parses `term (± term)*` where a term is a `*`-product of numbers,
/// `lambda` or `lambda^p`, and at most one `cos(k1,k2)` or `sin(k1,k2)`.
pub fn parse_expression(src: &str, lambda: f64) -> std::result::Result<TrigPolynomial, String> {
    let s: String = src.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        return Err("empty expression".into());
    }
    let mut terms: Vec<TrigTerm> = Vec::new();
    let mut depth = 0;
    let mut start = 0;
    let bytes = s.as_bytes();
    let mut pieces: Vec<(f64, &str)> = Vec::new();
    let mut sign = 1.0;
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'(' => depth += 1,
            b')' => depth -= 1,
            b'+' | b'-' if depth == 0 && i > start && !matches!(bytes[i - 1], b'e' | b'E' | b'^' | b'*') => {
                pieces.push((sign, &s[start..i]));
                sign = if b == b'-' { -1.0 } else { 1.0 };
                start = i + 1;
            }
            b'+' | b'-' if depth == 0 && i == start => {
                if b == b'-' {
                    sign = -sign;
                }
                start = i + 1;
            }
            _ => {}
        }
    }
    pieces.push((sign, &s[start..]));
    for (sign, piece) in pieces {
        if piece.is_empty() {
            return Err(format!("dangling operator in {src:?}"));
        }
        let mut coef = sign;
        let mut trig: Option<(bool, [i64; 2])> = None;
        for factor in piece.split('*') {
            if let Some(args) = factor
                .strip_prefix("cos(")
                .or_else(|| factor.strip_prefix("sin("))
                .and_then(|r| r.strip_suffix(')'))
            {
                if trig.is_some() {
                    return Err(format!("more than one trigonometric factor in {piece:?}"));
                }
                let k: Vec<i64> = args
                    .split(',')
                    .map(|a| a.parse().map_err(|_| format!("bad frequency {a:?}")))
                    .collect::<std::result::Result<_, _>>()?;
                if k.len() != 2 {
                    return Err(format!("expected two frequencies in {factor:?}"));
                }
                trig = Some((factor.starts_with("cos"), [k[0], k[1]]));
            } else if factor == "lambda" {
                coef *= lambda;
            } else if let Some(p) = factor.strip_prefix("lambda^") {
                let p: f64 = p.parse().map_err(|_| format!("bad exponent {p:?}"))?;
                coef *= lambda.powf(p);
            } else {
                let v: f64 = factor.parse().map_err(|_| format!("cannot parse {factor:?}"))?;
                coef *= v;
            }
        }
        terms.push(match trig {
            None => TrigTerm { k: [0, 0], a: coef, b: 0.0 },
            Some((true, k)) => TrigTerm { k, a: coef, b: 0.0 },
            Some((false, k)) => TrigTerm { k, a: 0.0, b: coef },
        });
    }
    if terms.iter().any(|t| !(t.a.is_finite() && t.b.is_finite())) {
        return Err(format!("non-finite coefficient in {src:?}"));
    }
    Ok(TrigPolynomial::new(terms))
}
