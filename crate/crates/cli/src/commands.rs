use std::fmt;
use std::path::{Path, PathBuf};

use mhyper::charfn::{
    degree_trend, partial_isometry_check, phi_variant, purely_contractive_check,
    random_kernel_samples, row_contraction_check, theta_gram_check, CharFnError, ThetaFunction,
};
use mhyper::dilation::default_degree;
use mhyper::linalg::Tolerances;
use mhyper::optuple::{OperatorTuple, TupleError};
use mhyper::realization::{
    extract, ki4_range_residual, ki_check, km_inner_check, multiplier_gram_check, sample_grid,
    InnerVerdict, PolyOperatorFunction, RealizationError,
};
use mhyper::serial::{parse_tuple_file, vector_pairs, FormatError};
use mhyper::wandering_inner::{wandering_match, wt_build, WanderingError};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub struct RunConfig {
    pub command: &'static str,
    pub input: PathBuf,
    pub m: u32,
    pub degree: Option<u32>,
    pub tol: Tolerances,
    pub samples: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

pub struct Outcome {
    pub report: Value,
    /// Extra artifacts, written next to `--out` as `<stem>.<suffix>`.
    pub artifacts: Vec<(&'static str, String)>,
    pub code: u8,
}

#[derive(Debug)]
pub enum CliError {
    Parse(String),
    NonCommuting(String),
    NotPure(String),
    Inconclusive(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Parse(_) | CliError::Io(_) => 1,
            CliError::NonCommuting(_) => 2,
            CliError::NotPure(_) => 3,
            CliError::Inconclusive(_) => 4,
            CliError::Numerical(_) => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(m) => write!(f, "invalid input: {m}"),
            CliError::NonCommuting(m) => write!(f, "{m}"),
            CliError::NotPure(m) => write!(f, "refused: {m}"),
            CliError::Inconclusive(m) => write!(f, "inconclusive: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "{m}"),
        }
    }
}

impl From<TupleError> for CliError {
    fn from(e: TupleError) -> Self {
        match e {
            TupleError::NonCommuting { .. } => CliError::NonCommuting(e.to_string()),
            TupleError::NotHypercontraction { .. } | TupleError::NotPure { .. } => {
                CliError::NotPure(e.to_string())
            }
            TupleError::Argument(_) => CliError::Parse(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Tuple(t) => t.into(),
            other => CliError::Parse(other.to_string()),
        }
    }
}

impl From<RealizationError> for CliError {
    fn from(e: RealizationError) -> Self {
        match e {
            RealizationError::Inconclusive(_) => CliError::Inconclusive(e.to_string()),
            RealizationError::Argument(_) => CliError::Parse(e.to_string()),
            RealizationError::Tuple(t) => t.into(),
            RealizationError::Wandering(w) => (*w).into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<WanderingError> for CliError {
    fn from(e: WanderingError) -> Self {
        match e {
            WanderingError::NotPure { .. } => CliError::NotPure(e.to_string()),
            WanderingError::Tuple(t) => t.into(),
            WanderingError::Realization(r) => (*r).into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<CharFnError> for CliError {
    fn from(e: CharFnError) -> Self {
        match e {
            CharFnError::NotPure { .. } => CliError::NotPure(e.to_string()),
            CharFnError::Argument(_) => CliError::Parse(e.to_string()),
            CharFnError::Tuple(t) => t.into(),
            CharFnError::Realization(r) => (*r).into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn load_tuple(config: &RunConfig) -> Result<OperatorTuple, CliError> {
    let text = read(&config.input)?;
    let file = parse_tuple_file(&text)
        .map_err(|e| CliError::Parse(format!("{}: {e}", config.input.display())))?;
    Ok(file.to_tuple(&config.tol)?)
}

fn header(config: &RunConfig) -> serde_json::Map<String, Value> {
    let mut map = serde_json::Map::new();
    map.insert("command".into(), json!(config.command));
    map.insert("input".into(), json!(config.input.display().to_string()));
    map.insert("m".into(), json!(config.m));
    map
}

fn parse_json(text: &str) -> Value {
    serde_json::from_str(text).expect("own serialization parses")
}

pub fn cmd_classify(config: &RunConfig) -> Result<Outcome, CliError> {
    let t = load_tuple(config)?;
    let report = t.classify(config.m, &config.tol)?;
    let code = if report.is_pure_hypercontraction() {
        0
    } else {
        3
    };
    let mut map = header(config);
    map.insert("report".into(), to_value(&report));
    Ok(Outcome {
        report: Value::Object(map),
        artifacts: Vec::new(),
        code,
    })
}

pub fn cmd_inner(config: &RunConfig) -> Result<Outcome, CliError> {
    let t = load_tuple(config)?;
    let m = config.m;
    let tol = &config.tol;
    let degree = config.degree.unwrap_or_else(|| default_degree(&t, m));
    let w = wt_build(&t, m, degree, tol)?;
    let inner = km_inner_check(&w.taylor, m, tol.residual)?;
    let ki = ki_check(&w.realization, tol);
    let ki4 = ki4_range_residual(&w.realization, degree)?;
    let wandering = wandering_match(&t, m, degree, tol)?;
    let grid = sample_grid(t.n(), 10, 0.9);
    let gram = multiplier_gram_check(&grid, m, 1e-8, |z| w.realization.evaluate(z))?;
    let realization = w.realization.to_json();
    let taylor = w.taylor.to_json();

    let mut map = header(config);
    map.insert("degree".into(), json!(degree));
    map.insert(
        "dimensions".into(),
        json!({
            "state": t.dim(),
            "output": w.data.p(),
            "input": w.tilde.dtilde_dim(),
        }),
    );
    map.insert(
        "residuals".into(),
        json!({
            "contraction": w.tilde.contraction_residual,
            "unitary": w.tilde.unitary_residual,
            "feedthrough_range": w.feedthrough_range_residual,
            "ki4_range": ki4,
        }),
    );
    map.insert("km_inner".into(), to_value(&inner));
    map.insert("ki".into(), to_value(&ki));
    map.insert("wandering".into(), to_value(&wandering));
    map.insert("multiplier_gram".into(), to_value(&gram));
    map.insert("realization".into(), parse_json(&realization));
    map.insert("taylor".into(), parse_json(&taylor));
    Ok(Outcome {
        report: Value::Object(map),
        artifacts: vec![("realization.json", realization), ("taylor.json", taylor)],
        code: 0,
    })
}

pub fn cmd_realize(config: &RunConfig) -> Result<Outcome, CliError> {
    let text = read(&config.input)?;
    let w = PolyOperatorFunction::from_json(&text)
        .map_err(|e| CliError::Parse(format!("{}: {e}", config.input.display())))?;
    let tol = &config.tol;
    let inner = km_inner_check(&w, w.m, tol.residual)?;
    let mut map = header(config);
    map.insert("m".into(), json!(w.m));
    map.insert("km_inner".into(), to_value(&inner));
    let code = match inner.verdict {
        InnerVerdict::Inner => 0,
        InnerVerdict::NotInner => 3,
        InnerVerdict::Inconclusive => 4,
    };
    if code != 0 {
        map.insert("extraction".into(), Value::Null);
        return Ok(Outcome {
            report: Value::Object(map),
            artifacts: Vec::new(),
            code,
        });
    }
    let (r, report) = extract(&w, tol)?;
    let ki = ki_check(&r, tol);
    let table: Vec<Value> = sample_grid(w.n, 20, 0.9)
        .iter()
        .map(|z| {
            let a = r.evaluate(z)?;
            let b = w.evaluate(z)?;
            Ok(json!({
                "z": z.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>(),
                "error": mhyper::linalg::fro(&(a - b)),
            }))
        })
        .collect::<Result<_, RealizationError>>()?;
    let realization = r.to_json();
    map.insert("extraction".into(), to_value(&report));
    map.insert("ki".into(), to_value(&ki));
    map.insert("match".into(), Value::Array(table));
    map.insert("realization".into(), parse_json(&realization));
    Ok(Outcome {
        report: Value::Object(map),
        artifacts: vec![("realization.json", realization)],
        code: 0,
    })
}

/// Degrees for the truncation trend; `H₀` ignores the degree, so `m = 1`
/// gets a single point.
fn trend_degrees(m: u32, degree: u32) -> Vec<u32> {
    if m == 1 {
        return vec![degree];
    }
    let mut out: Vec<u32> = (0..4)
        .rev()
        .map(|k| degree.saturating_sub(2 * k))
        .filter(|&d| d >= 1)
        .collect();
    out.dedup();
    out
}

pub fn cmd_charfn(config: &RunConfig) -> Result<Outcome, CliError> {
    let t = load_tuple(config)?;
    let m = config.m;
    let tol = &config.tol;
    let degree = config.degree.unwrap_or_else(|| default_degree(&t, m));
    let theta = ThetaFunction::build(&t, m, degree, tol)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let samples = random_kernel_samples(&mut rng, t.n(), theta.output_dim(), config.samples, 0.9);
    let kernel = partial_isometry_check(&theta, &samples)?;
    let contractive = purely_contractive_check(&theta, tol)?;
    let grid = sample_grid(t.n(), 10, 0.9);
    let (_, phi) = phi_variant(&theta, &grid, tol)?;
    let gram = theta_gram_check(&theta, &grid, 1e-8)?;
    let trend = degree_trend(&t, m, &trend_degrees(m, degree), &samples, tol)?;
    let row = if m == 1 {
        let inner = wt_build(&t, 1, degree, tol)?;
        to_value(&row_contraction_check(&theta, &inner, &grid, degree, tol)?)
    } else {
        Value::Null
    };
    let sample_points: Vec<Value> = samples
        .iter()
        .map(|s| {
            json!({
                "z": s.z.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>(),
                "w": s.w.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>(),
                "x": vector_pairs(&s.x),
                "y": vector_pairs(&s.y),
            })
        })
        .collect();

    let mut map = header(config);
    map.insert("degree".into(), json!(degree));
    map.insert("seed".into(), json!(config.seed));
    map.insert("structure".into(), to_value(&theta.data.report));
    map.insert("theta_zero".into(), to_value(&contractive));
    map.insert("kernel_identity".into(), to_value(&kernel));
    map.insert("samples".into(), Value::Array(sample_points));
    map.insert("degree_trend".into(), to_value(&trend));
    map.insert("phi".into(), to_value(&phi));
    map.insert("multiplier_gram".into(), to_value(&gram));
    map.insert("row_contraction".into(), row);
    Ok(Outcome {
        report: Value::Object(map),
        artifacts: Vec::new(),
        code: 0,
    })
}

fn render(value: &Value, prefix: &str, out: &mut String) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                render(v, &key, out);
            }
        }
        Value::Array(items) => {
            let scalars = items.iter().all(|v| !v.is_object() && !v.is_array());
            if scalars && items.len() <= 6 {
                let parts: Vec<String> = items.iter().map(|v| v.to_string()).collect();
                out.push_str(&format!("{prefix:<48} [{}]\n", parts.join(", ")));
            } else {
                out.push_str(&format!("{prefix:<48} ({} entries)\n", items.len()));
            }
        }
        other => out.push_str(&format!("{prefix:<48} {other}\n")),
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// JSON to `--out` (plus artifacts) with a table on stdout, or JSON on stdout.
pub fn emit(outcome: &Outcome, config: &RunConfig) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(&outcome.report).expect("reports serialize") + "\n";
    match &config.out {
        Some(path) => {
            write(path, &text)?;
            for (suffix, body) in &outcome.artifacts {
                write(&sibling(path, suffix), body)?;
            }
            let mut table = String::new();
            render(&outcome.report, "", &mut table);
            print!("{table}");
        }
        None => print!("{text}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trend_degrees_are_increasing() {
        assert_eq!(trend_degrees(2, 10), vec![4, 6, 8, 10]);
        assert_eq!(trend_degrees(2, 3), vec![1, 3]);
        assert_eq!(trend_degrees(1, 7), vec![7]);
    }

    #[test]
    fn sibling_paths() {
        let p = sibling(Path::new("/tmp/run/report.json"), "taylor.json");
        assert_eq!(p, Path::new("/tmp/run/report.taylor.json"));
    }

    #[test]
    fn render_flattens_objects() {
        let mut s = String::new();
        render(&json!({"a": {"b": 1, "c": [1, 2]}, "d": "x"}), "", &mut s);
        assert!(s.contains("a.b"));
        assert!(s.contains("[1, 2]"));
        assert!(s.contains("\"x\""));
    }
}
