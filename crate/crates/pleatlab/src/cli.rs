//! Command-line front end: classify, trace, verify, portrait, oracle.
//!
//! Exit codes: 0 on success (verify: all checks pass), 2 when classification
//! lands on Degenerate, 1 on any error or failed check. stdout carries
//! exactly one JSON document for classify/verify; diagnostics go to stderr.

use std::collections::BTreeMap;
use std::error::Error;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::classify::{
    classify_singular_point, pleated_case, shear_to_origin, Eigenvalues, LinearPart, Margins,
    SingularClass, SmoothnessBranch,
};
use crate::curves::{self, CurveOptions};
use crate::lift::ImplicitOde;
use crate::nflab::{CubicFamily, OracleFamily, OracleId};
use crate::portrait::{self, PortraitSpec, Rect, Seeds};

#[derive(Parser, Debug)]
#[command(
    name = "pleatlab",
    version,
    about = "Implicit first-order ODEs F(x, y, p) = 0 near singular points: \
             classification, curve tracing, asymptotic checks, phase portraits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Equation text F(x, y, p); the base point is the origin.
    #[arg(short = 'e', long = "equation", global = true, value_name = "EXPR")]
    equation: Option<String>,

    /// Read the equation from a file instead.
    #[arg(long, global = true, value_name = "PATH")]
    file: Option<PathBuf>,

    /// Bind a parameter, repeatable: -P b=2.
    #[arg(short = 'P', long = "param", global = true, value_name = "NAME=VALUE")]
    param: Vec<String>,

    /// Window half-width in x (traces: box half-width; portraits extend |p|
    /// twice as far).
    #[arg(long, global = true)]
    window: Option<f64>,

    /// Relative integration tolerance override.
    #[arg(long = "tol-rel", global = true)]
    tol_rel: Option<f64>,

    /// Absolute integration tolerance override.
    #[arg(long = "tol-abs", global = true)]
    tol_abs: Option<f64>,

    /// Half-width |p| of the semicubic fit window.
    #[arg(long = "fit-window", global = true)]
    fit_window: Option<f64>,

    /// Output file (classify/verify/trace) or directory (portrait).
    #[arg(short = 'o', long = "out", global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Pretty-print the JSON report.
    #[arg(long, global = true)]
    pretty: bool,

    /// Closed-form family id, e.g. cubic:b=2 or wellfolded:alpha=-1.
    #[arg(long, global = true, value_name = "ID")]
    oracle: Option<String>,

    /// Verify a list of cubic-family cases: --sweep b=-3,-1,0.25,0.55,0.8,2.
    #[arg(long, global = true, value_name = "B_LIST")]
    sweep: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classify the singular point at the base point.
    Classify,
    /// Trace a curve and write it as CSV (t,x,p,y).
    Trace {
        #[arg(value_enum)]
        target: TraceTarget,
    },
    /// Check the asymptotic predictions against fits on the traced curves.
    Verify,
    /// Render the chart/plane SVG pair plus a manifest.
    Portrait,
    /// Describe a closed-form reference family.
    Oracle,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TraceTarget {
    /// The locus F = F_p = 0.
    Criminant,
    /// The vertical-tangent invariant curve through the base point.
    Cusp,
    /// The non-vertical invariant curve through the base point.
    Transverse,
}

/// Entry point for the binary; returns the process exit code.
pub fn run<I: IntoIterator<Item = String>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cli: &Cli) -> Result<i32, Box<dyn Error>> {
    match cli.command {
        Command::Classify => cmd_classify(cli),
        Command::Trace { target } => cmd_trace(cli, target),
        Command::Verify => cmd_verify(cli),
        Command::Portrait => cmd_portrait(cli),
        Command::Oracle => cmd_oracle(cli),
    }
}

// ---------------------------------------------------------------------------
// Input resolution.

fn parse_params(raw: &[String]) -> Result<BTreeMap<String, f64>, Box<dyn Error>> {
    let mut out = BTreeMap::new();
    for piece in raw {
        let (name, value) = piece
            .split_once('=')
            .ok_or_else(|| format!("malformed -P `{piece}`: expected NAME=VALUE"))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| format!("parameter `{name}`: `{value}` is not a number"))?;
        out.insert(name.trim().to_string(), v);
    }
    Ok(out)
}

/// The configured equation plus provenance for reports, and the closed-form
/// family when the input came from an oracle id.
struct Resolved {
    ode: ImplicitOde,
    provenance: Value,
    family: Option<OracleFamily>,
}

fn resolve_ode(cli: &Cli) -> Result<Resolved, Box<dyn Error>> {
    let given = [
        cli.equation.is_some(),
        cli.file.is_some(),
        cli.oracle.is_some(),
    ]
    .iter()
    .filter(|g| **g)
    .count();
    if given == 0 {
        return Err("no equation given: pass -e EXPR, --file PATH, or --oracle ID".into());
    }
    if given > 1 {
        return Err("pass exactly one of -e, --file, --oracle".into());
    }

    if let Some(id) = &cli.oracle {
        let family = OracleId::parse(id)?.family()?;
        let ode = match &family {
            OracleFamily::Cubic(f) => f.ode(),
            OracleFamily::WellFolded(f) => f.ode(),
            OracleFamily::NodeNonRes(_) | OracleFamily::NodeRes(_) => {
                return Err(format!(
                    "oracle `{id}` is a planar normal form, not an implicit equation; \
                     see the `oracle` command"
                )
                .into());
            }
        };
        return Ok(Resolved {
            ode,
            provenance: json!({ "oracle": id }),
            family: Some(family),
        });
    }

    let src = match (&cli.equation, &cli.file) {
        (Some(text), _) => text.clone(),
        (None, Some(path)) => fs::read_to_string(path)
            .map_err(|e| format!("reading {}: {e}", path.display()))?
            .trim()
            .to_string(),
        (None, None) => unreachable!(),
    };
    let params = parse_params(&cli.param)?;
    let ode = ImplicitOde::from_source(&src, params.clone(), [0.0; 3])?;
    Ok(Resolved {
        ode,
        provenance: json!({ "equation": src, "params": params }),
        family: None,
    })
}

fn curve_opts(cli: &Cli) -> CurveOptions {
    let mut opts = CurveOptions::default();
    if let Some(w) = cli.fit_window {
        opts.fit_window = w;
    }
    if let Some(w) = cli.window {
        opts.window = w;
    }
    if let Some(t) = cli.tol_rel {
        opts.integ.rel_tol = t;
    }
    if let Some(t) = cli.tol_abs {
        opts.integ.abs_tol = t;
    }
    opts
}

/// Print a line to stdout, surfacing write failures (e.g. a closed pipe)
/// as ordinary errors instead of a panic.
fn print_line(text: &str) -> Result<(), Box<dyn Error>> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}")?;
    Ok(())
}

fn emit_report(cli: &Cli, doc: &Value) -> Result<(), Box<dyn Error>> {
    let text = if cli.pretty {
        serde_json::to_string_pretty(doc)?
    } else {
        doc.to_string()
    };
    print_line(&text)?;
    if let Some(path) = &cli.out {
        fs::write(path, format!("{text}\n"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// classify.

fn cmd_classify(cli: &Cli) -> Result<i32, Box<dyn Error>> {
    let resolved = resolve_ode(cli)?;
    let class = classify_singular_point(&resolved.ode)?;
    let mut doc = classify_report(&resolved.ode, &class);
    doc["input"] = resolved.provenance;
    emit_report(cli, &doc)?;
    Ok(if matches!(class, SingularClass::Degenerate { .. }) {
        2
    } else {
        0
    })
}

fn eig_json(linear: &LinearPart) -> Value {
    match linear.eigenvalues {
        Eigenvalues::Real { l1, l2 } => json!([l1, l2]),
        Eigenvalues::Complex { re, im } => json!({ "re": re, "im": im }),
    }
}

fn resonance_json(res: &Option<crate::classify::NodeResonance>) -> Value {
    match res {
        Some(r) => json!({ "form": r.form.as_str(), "n": r.n }),
        None => Value::Null,
    }
}

fn branch_json(br: &SmoothnessBranch) -> Value {
    json!({
        "case": br.case,
        "epsilon": br.epsilon_assumed.as_str(),
        "k": br.k.to_string(),
        "l": br.l.to_string(),
    })
}

fn margins_json(ode: &ImplicitOde) -> Value {
    let Ok(jet) = ode.jet_at(ode.origin()) else {
        return Value::Null;
    };
    match Margins::from_sheared_jet(&shear_to_origin(&jet)) {
        Some(m) => json!({
            "scale": m.scale,
            "f_p": m.f_p,
            "f_y": m.f_y,
            "f_pp": m.f_pp,
            "f_ppp": m.f_ppp,
            "f_xp": m.f_xp,
            "improper": m.improper,
        }),
        None => Value::Null,
    }
}

fn classify_report(ode: &ImplicitOde, class: &SingularClass) -> Value {
    let margins = margins_json(ode);
    match class {
        SingularClass::NotSingular => json!({ "kind": "NotSingular", "margins": margins }),
        SingularClass::FoldedProper => json!({ "kind": "FoldedProper", "margins": margins }),
        SingularClass::PleatedProper => json!({ "kind": "PleatedProper", "margins": margins }),
        SingularClass::FoldedImproper(f) => json!({
            "kind": "FoldedImproper",
            "eigenvalues": eig_json(&f.linear),
            "stability": f.stability.as_str(),
            "well_folded": f.well_folded,
            "det": f.det,
            "resonance": resonance_json(&f.resonance),
            "margins": margins,
        }),
        SingularClass::PleatedImproper(d) => {
            let smoothness = if d.smoothness.branches.len() == 1 {
                branch_json(&d.smoothness.branches[0])
            } else {
                json!({ "branches": d.smoothness.branches.iter().map(branch_json).collect::<Vec<_>>() })
            };
            json!({
                "kind": "PleatedImproper",
                "b": d.b,
                "case": d.case.as_str(),
                "eigenvalues": eig_json(&d.linear),
                "stability": d.stability.as_str(),
                "resonance": resonance_json(&d.resonance),
                "smoothness": smoothness,
                "margins": margins,
            })
        }
        SingularClass::Degenerate { reason } => {
            json!({ "kind": "Degenerate", "reason": reason, "margins": margins })
        }
    }
}

// ---------------------------------------------------------------------------
// trace.

fn cmd_trace(cli: &Cli, target: TraceTarget) -> Result<i32, Box<dyn Error>> {
    let resolved = resolve_ode(cli)?;
    let opts = curve_opts(cli);
    let traj = match target {
        TraceTarget::Criminant => {
            let o = resolved.ode.origin();
            let half = cli.window.unwrap_or(0.3);
            curves::trace_criminant(&resolved.ode, (o[2] - half, o[2] + half), half / 300.0)?
        }
        TraceTarget::Cusp => {
            curves::invariant_curve(&resolved.ode, curves::Tangency::Vertical, &opts)?
        }
        TraceTarget::Transverse => {
            curves::invariant_curve(&resolved.ode, curves::Tangency::Transverse, &opts)?
        }
    };
    match &cli.out {
        Some(path) => {
            let mut f = fs::File::create(path)?;
            curves::write_csv(&traj, &mut f)?;
            f.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            curves::write_csv(&traj, &mut lock)?;
            lock.flush()?;
        }
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// verify.

fn rel_row(name: &str, predicted: f64, measured: f64, tol: f64) -> (Value, bool) {
    let pass = (measured - predicted).abs() <= tol * predicted.abs();
    (
        json!({
            "name": name,
            "predicted": predicted,
            "measured": measured,
            "tol": tol,
            "pass": pass,
        }),
        pass,
    )
}

fn abs_row(name: &str, predicted: f64, measured: f64, tol: f64) -> (Value, bool) {
    let pass = (measured - predicted).abs() <= tol;
    (
        json!({
            "name": name,
            "predicted": predicted,
            "measured": measured,
            "tol": tol,
            "pass": pass,
        }),
        pass,
    )
}

fn eq_row(name: &str, predicted: Value, measured: Value) -> (Value, bool) {
    let pass = predicted == measured;
    (
        json!({
            "name": name,
            "predicted": predicted,
            "measured": measured,
            "tol": 0.0,
            "pass": pass,
        }),
        pass,
    )
}

/// Residual threshold for the N2 exact-invariance fallback, 10x the default
/// integrator tolerance class.
const INVARIANCE_TOL: f64 = 1e-10;

fn verify_checks(
    ode: &ImplicitOde,
    family: Option<&OracleFamily>,
    opts: &CurveOptions,
) -> Result<(Vec<Value>, bool), Box<dyn Error>> {
    let mut rows = Vec::new();
    let mut all = true;
    let mut push = |row: (Value, bool), all: &mut bool| {
        *all &= row.1;
        rows.push(row.0);
    };

    if let Some(OracleFamily::WellFolded(f)) = family {
        let class = classify_singular_point(ode)?;
        let SingularClass::FoldedImproper(data) = class else {
            return Err(format!("expected a folded improper point, got {}", class.kind()).into());
        };
        let predicted = f
            .expected_stability()
            .map(|s| s.as_str())
            .unwrap_or("degenerate");
        push(
            eq_row("stability", json!(predicted), json!(data.stability.as_str())),
            &mut all,
        );
        push(eq_row("well_folded", json!(true), json!(data.well_folded)), &mut all);
        return Ok((rows, all));
    }

    let data = curves::pleated_data(ode)?;
    let b = data.b;
    if let Some(OracleFamily::Cubic(f)) = family {
        let predicted = pleated_case(f.b)?.as_str();
        push(
            eq_row("case", json!(predicted), json!(data.case.as_str())),
            &mut all,
        );
    }

    let qc = curves::quad_coefficient_check(ode, opts)?;
    if qc.informational {
        let residual = qc.invariance_residual.unwrap_or(f64::INFINITY);
        push(
            abs_row("v0_invariance", 0.0, residual, INVARIANCE_TOL),
            &mut all,
        );
    } else {
        push(rel_row("v0", qc.v0_predicted, qc.v0_fitted, 0.01), &mut all);
    }

    let ar = curves::arrangement(ode, opts)?;
    if let Some(OracleFamily::Cubic(f)) = family {
        push(rel_row("mK", f.m_k(), ar.m_k, 0.01), &mut all);
        push(rel_row("mC", f.m_c(), ar.m_c, 0.01), &mut all);
    }
    let same_predicted = !(0.0 < b && b < 2.0 / 3.0);
    push(
        eq_row("same_semiplane", json!(same_predicted), json!(ar.same_semiplane)),
        &mut all,
    );
    if let Some(tongue) = ar.c_in_tongue {
        let tongue_predicted = (3.0 * b - 2.0).abs() < b.powi(3).abs();
        push(
            eq_row("tongue", json!(tongue_predicted), json!(tongue)),
            &mut all,
        );
    }
    Ok((rows, all))
}

fn cmd_verify(cli: &Cli) -> Result<i32, Box<dyn Error>> {
    let opts = curve_opts(cli);

    if let Some(sweep) = &cli.sweep {
        let list = sweep.trim().trim_start_matches("b=");
        let mut cases = Vec::new();
        let mut all = true;
        for piece in list.split(',') {
            let b: f64 = piece
                .trim()
                .parse()
                .map_err(|_| format!("--sweep: `{piece}` is not a number"))?;
            let family = CubicFamily::new(b)?;
            let ode = family.ode();
            let (rows, pass) =
                verify_checks(&ode, Some(&OracleFamily::Cubic(family)), &opts)?;
            all &= pass;
            cases.push(json!({ "b": b, "checks": rows, "pass": pass }));
        }
        let doc = json!({ "sweep": cases, "pass": all });
        emit_report(cli, &doc)?;
        return Ok(if all { 0 } else { 1 });
    }

    let resolved = resolve_ode(cli)?;
    let (rows, all) = verify_checks(&resolved.ode, resolved.family.as_ref(), &opts)?;
    let doc = json!({ "input": resolved.provenance, "checks": rows, "pass": all });
    emit_report(cli, &doc)?;
    Ok(if all { 0 } else { 1 })
}

// ---------------------------------------------------------------------------
// portrait.

fn cmd_portrait(cli: &Cli) -> Result<i32, Box<dyn Error>> {
    let resolved = resolve_ode(cli)?;
    let origin = resolved.ode.origin();

    let half_x = cli.window.unwrap_or(0.25);
    let mut spec = PortraitSpec::around(origin);
    spec.window = Rect::centered(origin, half_x, 2.0 * half_x);
    if let Some(t) = cli.tol_rel {
        spec.integ.rel_tol = t;
    }
    if let Some(t) = cli.tol_abs {
        spec.integ.abs_tol = t;
    }
    let density = match std::env::var("PLEATLAB_SEED_DENSITY") {
        Ok(raw) => raw
            .parse::<u32>()
            .map_err(|_| format!("PLEATLAB_SEED_DENSITY: `{raw}` is not a positive integer"))?,
        Err(_) => 1,
    };
    spec.seeds = Seeds::Grid { density };

    let portrait = portrait::render(&resolved.ode, &spec)?;
    let case = portrait.manifest["case"]
        .as_str()
        .unwrap_or("portrait")
        .replace(':', "_");
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir)?;
    let chart_path = dir.join(format!("{case}.chart.svg"));
    let plane_path = dir.join(format!("{case}.plane.svg"));
    let manifest_path = dir.join(format!("{case}.manifest.json"));
    fs::write(&chart_path, &portrait.svg_chart)?;
    fs::write(&plane_path, &portrait.svg_plane)?;
    fs::write(
        &manifest_path,
        format!("{}\n", serde_json::to_string_pretty(&portrait.manifest)?),
    )?;

    let doc = json!({
        "case": case,
        "files": [chart_path, plane_path, manifest_path],
    });
    print_line(&doc.to_string())?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// oracle.

fn cmd_oracle(cli: &Cli) -> Result<i32, Box<dyn Error>> {
    let id = cli
        .oracle
        .as_ref()
        .ok_or("the oracle command needs --oracle ID")?;
    let family = OracleId::parse(id)?.family()?;
    let doc = match &family {
        OracleFamily::Cubic(f) => json!({
            "id": id,
            "kind": "cubic",
            "b": f.b,
            "equation": "b*x*p - p^3/3 - y",
            "case": pleated_case(f.b)?.as_str(),
            "v0": f.v0(),
            "mK": f.m_k(),
            "mC": f.m_c(),
        }),
        OracleFamily::WellFolded(f) => json!({
            "id": id,
            "kind": "wellfolded",
            "alpha": f.alpha,
            "equation": "(p + alpha*x)^2 - y",
            "det": f.det(),
            "stability": f.expected_stability().map(|s| s.as_str()),
        }),
        OracleFamily::NodeNonRes(f) => json!({
            "id": id,
            "kind": "node_nonres",
            "beta": f.beta,
            "field": "xi' = xi, eta' = beta*eta",
            "curves": "eta = c*xi^beta",
        }),
        OracleFamily::NodeRes(f) => json!({
            "id": id,
            "kind": "node_res",
            "n": f.n,
            "eps": f.eps,
            "field": "xi' = xi, eta' = n*eta + eps*xi^n",
            "curves": "eta = xi^n*(c + eps*ln|xi|)",
        }),
    };
    emit_report(cli, &doc)?;
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> i32 {
        run(std::iter::once("pleatlab".to_string())
            .chain(args.iter().map(|s| s.to_string())))
    }

    #[test]
    fn param_parsing_accepts_pairs_and_rejects_garbage() {
        let ok = parse_params(&["b=2".into(), "c=-0.5".into()]).unwrap();
        assert_eq!(ok.get("b"), Some(&2.0));
        assert_eq!(ok.get("c"), Some(&-0.5));
        assert!(parse_params(&["b".into()]).is_err());
        assert!(parse_params(&["b=two".into()]).is_err());
    }

    #[test]
    fn classify_exit_codes_follow_the_contract() {
        assert_eq!(run_args(&["classify", "-e", "b*x*p - p^3/3 - y", "-P", "b=2"]), 0);
        // b = 1 is an excluded value: Degenerate, exit 2.
        assert_eq!(run_args(&["classify", "-e", "b*x*p - p^3/3 - y", "-P", "b=1"]), 2);
        // Unbound parameter: error, exit 1.
        assert_eq!(run_args(&["classify", "-e", "b*x*p - p^3/3 - y"]), 1);
        // Exactly one input source.
        assert_eq!(
            run_args(&["classify", "-e", "p^2 - x", "--oracle", "cubic:b=2"]),
            1
        );
    }

    #[test]
    fn classify_report_shapes_match_the_contract() {
        let ode = CubicFamily::new(2.0).unwrap().ode();
        let class = classify_singular_point(&ode).unwrap();
        let doc = classify_report(&ode, &class);
        assert_eq!(doc["kind"], "PleatedImproper");
        assert_eq!(doc["case"], "S3");
        assert_eq!(doc["b"], 2.0);
        assert_eq!(doc["stability"], "saddle");
        assert_eq!(doc["eigenvalues"][0], 2.0);
        assert_eq!(doc["eigenvalues"][1], -1.0);
        assert!(doc["margins"]["f_y"].as_f64().unwrap() > 0.0);

        let folded = ImplicitOde::from_source("(p - x)^2 - y", BTreeMap::new(), [0.0; 3]).unwrap();
        let class = classify_singular_point(&folded).unwrap();
        let doc = classify_report(&folded, &class);
        assert_eq!(doc["kind"], "FoldedImproper");
        assert_eq!(doc["stability"], "saddle");
        assert_eq!(doc["well_folded"], true);

        let fold = ImplicitOde::from_source("p^2 - x", BTreeMap::new(), [0.0; 3]).unwrap();
        let class = classify_singular_point(&fold).unwrap();
        assert_eq!(classify_report(&fold, &class)["kind"], "FoldedProper");
    }

    #[test]
    fn verify_rows_pass_on_the_cubic_family() {
        let family = CubicFamily::new(2.0).unwrap();
        let (rows, all) = verify_checks(
            &family.ode(),
            Some(&OracleFamily::Cubic(family)),
            &CurveOptions::default(),
        )
        .unwrap();
        assert!(all, "rows: {rows:?}");
        let names: Vec<_> = rows.iter().map(|r| r["name"].as_str().unwrap().to_string()).collect();
        assert_eq!(names, ["case", "v0", "mK", "mC", "same_semiplane", "tongue"]);
    }

    #[test]
    fn verify_uses_the_invariance_residual_for_n2() {
        let family = CubicFamily::new(0.55).unwrap();
        let (rows, all) = verify_checks(
            &family.ode(),
            Some(&OracleFamily::Cubic(family)),
            &CurveOptions::default(),
        )
        .unwrap();
        assert!(all, "rows: {rows:?}");
        assert!(rows.iter().any(|r| r["name"] == "v0_invariance"));
        assert!(!rows.iter().any(|r| r["name"] == "tongue"));
    }
}
