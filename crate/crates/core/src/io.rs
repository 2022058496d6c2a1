//! File formats: text model files, trace CSV, cutoff reports and curve CSV.
//!
//! All numbers are written with 17 significant digits in scientific notation,
//! which round-trips every finite `f64` exactly. Formats are documented in
//! `docs/FORMATS.md`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::cutoff::{CutoffEvidence, CutoffReport};
use crate::error::{Error, Result};
use crate::net::{Activation, FcLayer, Network};
use crate::prune::{PruneStep, PruneTrace};

pub const MODEL_MAGIC: &str = "neuromerge-model";
pub const MODEL_VERSION: u32 = 1;
pub const TRACE_HEADER: &str = "step,kept,removed,saliency,test_error";

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn model_to_string(net: &Network) -> String {
    let mut out = String::new();
    out.push_str(&format!("{MODEL_MAGIC} {MODEL_VERSION}\n"));
    out.push_str(&format!("layers {}\n", net.layers().len()));
    for (k, layer) in net.layers().iter().enumerate() {
        out.push_str(&format!(
            "layer {k} {} {} {}\n",
            layer.activation().tag(),
            layer.n_in(),
            layer.n_out()
        ));
        for r in 0..layer.n_out() {
            out.push('w');
            for v in layer.row(r) {
                out.push(' ');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        out.push('b');
        for v in layer.bias() {
            out.push(' ');
            out.push_str(&fmt_f64(*v));
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_string(net)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text, path)
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Peekable<Box<dyn Iterator<Item = (usize, &'a str)> + 'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, path: &'a Path) -> Self {
        let it: Box<dyn Iterator<Item = (usize, &'a str)>> = Box::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| (i + 1, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#')),
        );
        Self {
            path,
            inner: it.peekable(),
            last: 0,
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    /// Next line split into a keyword and the remaining tokens.
    fn expect(&mut self, keyword: &str) -> Result<(usize, Vec<&'a str>)> {
        let Some((n, line)) = self.inner.next() else {
            return Err(self.err(
                self.last + 1,
                format!("unexpected end of file, expected `{keyword}`"),
            ));
        };
        self.last = n;
        let mut tokens = line.split_whitespace();
        let head = tokens.next().unwrap_or_default();
        if head != keyword {
            return Err(self.err(n, format!("expected `{keyword}`, found `{head}`")));
        }
        Ok((n, tokens.collect()))
    }
}

fn parse_usize(lines: &Lines, line: usize, field: &str, tok: Option<&&str>) -> Result<usize> {
    let tok = tok.ok_or_else(|| lines.err(line, format!("missing {field}")))?;
    tok.parse()
        .map_err(|_| lines.err(line, format!("{field}: expected an integer, found `{tok}`")))
}

fn parse_floats(
    lines: &Lines,
    line: usize,
    field: &str,
    toks: &[&str],
    want: usize,
) -> Result<Vec<f64>> {
    if toks.len() != want {
        return Err(lines.err(
            line,
            format!("{field}: expected {want} values, found {}", toks.len()),
        ));
    }
    toks.iter()
        .enumerate()
        .map(|(c, t)| match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(lines.err(line, format!("{field}[{c}]: bad number `{t}`"))),
        })
        .collect()
}

/// Parses the text model format. `path` is only used for error context.
pub fn parse_model(text: &str, path: &Path) -> Result<Network> {
    let mut lines = Lines::new(text, path);
    let (n, toks) = lines.expect(MODEL_MAGIC)?;
    let version: u32 = toks
        .first()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| lines.err(n, "missing or malformed format version"))?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            supported: MODEL_VERSION,
        });
    }
    let (n, toks) = lines.expect("layers")?;
    let n_layers = parse_usize(&lines, n, "layer count", toks.first())?;

    let mut layers = Vec::with_capacity(n_layers);
    for k in 0..n_layers {
        let (n, toks) = lines.expect("layer")?;
        let idx = parse_usize(&lines, n, "layer index", toks.first())?;
        if idx != k {
            return Err(lines.err(n, format!("expected layer {k}, found layer {idx}")));
        }
        let tag = toks
            .get(1)
            .ok_or_else(|| lines.err(n, "missing activation"))?;
        let act = Activation::from_tag(tag)
            .ok_or_else(|| lines.err(n, format!("unknown activation `{tag}`")))?;
        let n_in = parse_usize(&lines, n, "n_in", toks.get(2))?;
        let n_out = parse_usize(&lines, n, "n_out", toks.get(3))?;
        if toks.len() != 4 {
            return Err(lines.err(n, "layer header takes exactly: index activation n_in n_out"));
        }
        let mut weights = Vec::with_capacity(n_in * n_out);
        for r in 0..n_out {
            let (n, toks) = lines.expect("w")?;
            weights.extend(parse_floats(
                &lines,
                n,
                &format!("layer {k} row {r}"),
                &toks,
                n_in,
            )?);
        }
        let (n, toks) = lines.expect("b")?;
        let bias = parse_floats(&lines, n, &format!("layer {k} bias"), &toks, n_out)?;
        layers.push(
            FcLayer::new(n_in, n_out, weights, bias, act)
                .map_err(|e| lines.err(n, e.to_string()))?,
        );
    }
    let (n, _) = lines.expect("end")?;
    if let Some((extra, _)) = lines.inner.next() {
        return Err(lines.err(extra, "trailing content after `end`"));
    }
    Network::new(layers).map_err(|e| lines.err(n, e.to_string()))
}

pub fn trace_to_csv(trace: &PruneTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for s in &trace.steps {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.step,
            s.kept.map(|k| k.to_string()).unwrap_or_default(),
            s.removed,
            fmt_f64(s.saliency),
            s.test_error.map(fmt_f64).unwrap_or_default()
        ));
    }
    out
}

pub fn export_trace(trace: &PruneTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, trace_to_csv(trace)).map_err(|e| Error::io(path, e))
}

pub fn import_trace(path: impl AsRef<Path>, layer_index: usize) -> Result<PruneTrace> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::io(path, source),
            kind => Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("{kind:?}"),
            },
        })?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != TRACE_HEADER {
        return Err(parse_err(
            1,
            format!("expected header `{TRACE_HEADER}`, found `{header}`"),
        ));
    }
    let mut trace = PruneTrace::new(layer_index);
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| record.get(c).unwrap_or("");
        let int = |c: usize, name: &str| {
            field(c)
                .parse::<usize>()
                .map_err(|_| parse_err(line, format!("{name}: bad integer `{}`", field(c))))
        };
        let float = |c: usize, name: &str| {
            field(c)
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("{name}: bad number `{}`", field(c))))
        };
        trace.steps.push(PruneStep {
            step: int(0, "step")?,
            kept: if field(1).is_empty() {
                None
            } else {
                Some(int(1, "kept")?)
            },
            removed: int(2, "removed")?,
            saliency: float(3, "saliency")?,
            test_error: if field(4).is_empty() {
                None
            } else {
                Some(float(4, "test_error")?)
            },
        });
    }
    Ok(trace)
}

/// `key = value` lines describing a cutoff report.
pub fn report_to_string(report: &CutoffReport) -> String {
    let join = |it: &mut dyn Iterator<Item = String>| it.collect::<Vec<_>>().join(" ");
    let mut lines = vec![
        format!("method = {}", report.method.name()),
        format!("predicted_count = {}", report.predicted_count),
        format!("cutoff_saliency = {}", fmt_f64(report.cutoff_saliency)),
        format!("fraction = {}", report.fraction),
        format!("trace_len = {}", report.trace_len),
    ];
    match &report.evidence {
        CutoffEvidence::Histogram(h) => {
            lines.push(format!("histogram.bins = {}", h.n_bins()));
            lines.push(format!("histogram.mode_bin = {}", h.mode_bin));
            lines.push(format!("histogram.degenerate = {}", h.degenerate));
            lines.push(format!(
                "histogram.edges = {}",
                join(&mut h.bin_edges.iter().map(|v| fmt_f64(*v)))
            ));
            lines.push(format!(
                "histogram.counts = {}",
                join(&mut h.counts.iter().map(|c| c.to_string()))
            ));
        }
        CutoffEvidence::ErrorSamples {
            baseline,
            threshold,
            samples,
        } => {
            lines.push(format!("errors.baseline = {}", fmt_f64(*baseline)));
            lines.push(format!("errors.threshold = {}", fmt_f64(*threshold)));
            lines.push(format!("errors.calls = {}", samples.len()));
            lines.push(format!(
                "errors.samples = {}",
                join(&mut samples.iter().map(|(s, e)| format!("{s}:{}", fmt_f64(*e))))
            ));
        }
    }
    for w in &report.warnings {
        lines.push(format!("warning = {w}"));
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

pub fn export_report(report: &CutoffReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report_to_string(report)).map_err(|e| Error::io(path, e))
}

/// Writes aligned curves as CSV: a `step` column followed by one column per
/// series. Missing values are left blank.
pub fn export_curves(
    path: impl AsRef<Path>,
    steps: &[usize],
    columns: &[(String, Vec<Option<f64>>)],
) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    let mut header = vec!["step".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.clone()));
    writeln!(out, "{}", header.join(",")).expect("write to Vec");
    for (r, step) in steps.iter().enumerate() {
        let mut row = vec![step.to_string()];
        row.extend(
            columns
                .iter()
                .map(|(_, c)| c.get(r).copied().flatten().map(fmt_f64).unwrap_or_default()),
        );
        writeln!(out, "{}", row.join(",")).expect("write to Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
