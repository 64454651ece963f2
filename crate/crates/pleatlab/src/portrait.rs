//! Phase portraits: a bundle of chart orbits seeded near the window
//! boundary, overlaid with the criminant (dashed) and the distinguished
//! curves through the base point (bold), rendered as a paired SVG — the
//! chart pane in (x, p) and the plane pane in (x, y).

use std::fmt::Write as _;

use serde_json::{json, Value};

use crate::classify::{classify_singular_point, SingularClass, Stability};
use crate::curves::{
    self, CurveError, CurveKind, CurveOptions, Sample, Tangency, TrajMeta, Trajectory,
};
use crate::integrate::{integrate as dp45, IntegOptions, StopReason};
use crate::lift::{Chart, ImplicitOde};

/// Orbits stop when they come this close to the base point in the chart.
pub const DELTA_STOP: f64 = 1e-5;

/// Time-span cap per orbit; every bundle orbit hits a geometric stop first.
const T_CAP: f64 = 2000.0;

/// Point cap per rendered polyline; longer curves are strided down.
const MAX_SVG_PTS: usize = 500;

// ---------------------------------------------------------------------------
// Spec.

/// Axis-aligned chart window in absolute (x, p) coordinates.
#[derive(Clone, Copy, Debug)]
pub struct Rect {
    pub x: [f64; 2],
    pub p: [f64; 2],
}

impl Rect {
    pub fn centered(origin: [f64; 3], half_x: f64, half_p: f64) -> Self {
        Rect {
            x: [origin[0] - half_x, origin[0] + half_x],
            p: [origin[2] - half_p, origin[2] + half_p],
        }
    }

    pub fn contains(&self, x: f64, p: f64) -> bool {
        x >= self.x[0] && x <= self.x[1] && p >= self.p[0] && p <= self.p[1]
    }
}

/// Where the bundle starts.
#[derive(Clone, Debug)]
pub enum Seeds {
    /// Boundary-biased lattice from [`seed_grid`].
    Grid { density: u32 },
    /// Explicit chart points.
    List(Vec<[f64; 2]>),
}

/// Stroke widths in px and the canvas size.
#[derive(Clone, Copy, Debug)]
pub struct Style {
    pub canvas: [u32; 2],
    pub thin: f64,
    pub dashed: f64,
    pub bold: f64,
}

impl Default for Style {
    fn default() -> Self {
        Style {
            canvas: [640, 480],
            thin: 0.8,
            dashed: 1.2,
            bold: 2.4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PortraitSpec {
    /// Must contain the base point.
    pub window: Rect,
    pub seeds: Seeds,
    pub integ: IntegOptions,
    /// Arc budget per orbit, measured in the chart metric.
    pub max_arc: f64,
    pub style: Style,
}

impl PortraitSpec {
    /// Default view around the base point: |x - x0| <= 0.25, |p - p0| <= 0.5.
    pub fn around(origin: [f64; 3]) -> Self {
        PortraitSpec {
            window: Rect::centered(origin, 0.25, 0.5),
            seeds: Seeds::Grid { density: 1 },
            integ: IntegOptions::default(),
            max_arc: 4.0,
            style: Style::default(),
        }
    }
}

// ---------------------------------------------------------------------------
// Seeding.

/// Boundary-biased seed lattice: `4 * density` seeds per side, placed at the
/// midpoints of equal subdivisions, plus a `(2*density - 1)^2` interior grid
/// on the fractions i / (2*density). Seeds closer than `5 * DELTA_STOP` to
/// `origin` are dropped.
pub fn seed_grid(window: &Rect, origin: [f64; 2], density: u32) -> Vec<[f64; 2]> {
    let d = density.max(1) as usize;
    let nb = 4 * d;
    let fx = |f: f64| window.x[0] + f * (window.x[1] - window.x[0]);
    let fp = |f: f64| window.p[0] + f * (window.p[1] - window.p[0]);

    let mut out = Vec::with_capacity(4 * nb + (2 * d - 1) * (2 * d - 1));
    for j in 0..nb {
        let f = (j as f64 + 0.5) / nb as f64;
        out.push([fx(f), window.p[0]]);
    }
    for j in 0..nb {
        let f = (j as f64 + 0.5) / nb as f64;
        out.push([fx(f), window.p[1]]);
    }
    for j in 0..nb {
        let f = (j as f64 + 0.5) / nb as f64;
        out.push([window.x[0], fp(f)]);
    }
    for j in 0..nb {
        let f = (j as f64 + 0.5) / nb as f64;
        out.push([window.x[1], fp(f)]);
    }
    for i in 1..2 * d {
        for k in 1..2 * d {
            out.push([fx(i as f64 / (2 * d) as f64), fp(k as f64 / (2 * d) as f64)]);
        }
    }
    out.retain(|s| (s[0] - origin[0]).hypot(s[1] - origin[1]) > 5.0 * DELTA_STOP);
    out
}

// ---------------------------------------------------------------------------
// Bundle integration.

/// Integrate one bundle orbit of the chart field from the chart point `seed`
/// in physical time direction `dir`. The orbit stops on window exit (the
/// final sample is pulled back onto the boundary), on the arc budget, or on
/// coming within [`DELTA_STOP`] of the base point.
pub fn integrate(
    ode: &ImplicitOde,
    seed: [f64; 2],
    spec: &PortraitSpec,
    dir: f64,
) -> Result<Trajectory, CurveError> {
    let o = ode.origin();
    if !spec.window.contains(o[0], o[2]) {
        return Err(CurveError::BadRequest(
            "portrait window must contain the base point".into(),
        ));
    }
    if !spec.window.contains(seed[0], seed[1]) {
        return Err(CurveError::BadRequest(format!(
            "seed ({}, {}) lies outside the window",
            seed[0], seed[1]
        )));
    }
    if dir != 1.0 && dir != -1.0 {
        return Err(CurveError::BadRequest(format!("direction must be +-1, got {dir}")));
    }

    let mut chart = Chart::new(ode);
    let y_seed = chart.solve_y(seed[0], seed[1])?;

    let window = spec.window;
    let oxp = [o[0], o[2]];
    let max_arc = spec.max_arc;
    let run = {
        let mut rhs = |_t: f64, s: &[f64; 2]| chart.field(s[0], s[1]);
        let mut prev: Option<[f64; 2]> = None;
        let mut acc = 0.0;
        let mut stop = move |_t: f64, s: &[f64; 2]| {
            if let Some(q) = prev {
                acc += (s[0] - q[0]).hypot(s[1] - q[1]);
            }
            prev = Some(*s);
            if !window.contains(s[0], s[1]) {
                return Some("window_exit");
            }
            if acc > 0.0 && (s[0] - oxp[0]).hypot(s[1] - oxp[1]) <= DELTA_STOP {
                return Some("origin");
            }
            if acc >= max_arc {
                return Some("arc_budget");
            }
            None
        };
        dp45(&mut rhs, 0.0, seed, dir, T_CAP, &spec.integ, &mut stop)?
    };

    let stop_reason = match run.stop {
        StopReason::Predicate(tag) => tag.to_string(),
        StopReason::TimeReached => "time_cap".to_string(),
        StopReason::MaxSteps => "step_budget".to_string(),
    };
    let mut ts = run.ts;
    let mut ys = run.ys;
    if stop_reason == "window_exit" && ys.len() >= 2 {
        let n = ys.len();
        let (tc, sc) = clip_to_boundary(&mut chart, &window, ts[n - 2], ys[n - 2], ts[n - 1], ys[n - 1]);
        ts[n - 1] = tc;
        ys[n - 1] = sc;
    }

    // y along the polyline: fresh warm walk outward from the seed.
    let mut rec = Chart::with_guess(ode, y_seed);
    let mut samples = Vec::with_capacity(ys.len());
    for (t, s) in ts.iter().zip(&ys) {
        let y = rec.solve_y(s[0], s[1])?;
        samples.push(Sample { t: *t, x: s[0], p: s[1], y });
    }
    Ok(Trajectory {
        samples,
        meta: TrajMeta {
            kind: CurveKind::Orbit,
            origin: o,
            seed: [seed[0], y_seed, seed[1]],
            direction: dir,
            stop_reason,
        },
    })
}

/// Pull the first out-of-window sample back onto the boundary. The last
/// accepted step is re-parametrized as a cubic Hermite arc (slopes from the
/// field at both ends), the crossing is bisected, and the crossing point is
/// clamped onto the rectangle. Falls back to the chord when the field is
/// unavailable at the outer end.
fn clip_to_boundary(
    chart: &mut Chart,
    window: &Rect,
    t0: f64,
    s0: [f64; 2],
    t1: f64,
    s1: [f64; 2],
) -> (f64, [f64; 2]) {
    let dt = t1 - t0;
    let chord = [(s1[0] - s0[0]) / dt, (s1[1] - s0[1]) / dt];
    let f0 = chart.field(s0[0], s0[1]).unwrap_or(chord);
    let f1 = chart.field(s1[0], s1[1]).unwrap_or(chord);
    let hermite = |u: f64| -> [f64; 2] {
        let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        let h10 = u * (1.0 - u) * (1.0 - u);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        [
            h00 * s0[0] + h10 * dt * f0[0] + h01 * s1[0] + h11 * dt * f1[0],
            h00 * s0[1] + h10 * dt * f0[1] + h01 * s1[1] + h11 * dt * f1[1],
        ]
    };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let q = hermite(mid);
        if window.contains(q[0], q[1]) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let q = hermite(hi);
    let clamped = [
        q[0].clamp(window.x[0], window.x[1]),
        q[1].clamp(window.p[0], window.p[1]),
    ];
    (t0 + hi * dt, clamped)
}

// ---------------------------------------------------------------------------
// Scene assembly.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LineStyle {
    Thin,
    Dashed,
    Bold,
}

impl LineStyle {
    fn name(self) -> &'static str {
        match self {
            LineStyle::Thin => "thin",
            LineStyle::Dashed => "dashed",
            LineStyle::Bold => "bold",
        }
    }
}

#[derive(Clone, Debug)]
struct Element {
    kind: &'static str,
    style: LineStyle,
    source: String,
    pts: Vec<[f64; 2]>,
}

/// Everything `render` draws, in draw order, before serialization.
pub(crate) struct Scene {
    pub(crate) case: String,
    b: Option<f64>,
    pub(crate) experimental: bool,
    origin: [f64; 3],
    window: Rect,
    y_half: f64,
    chart: Vec<Element>,
    plane: Vec<Element>,
    skipped: Vec<String>,
}

pub(crate) fn build_scene(ode: &ImplicitOde, spec: &PortraitSpec) -> Result<Scene, CurveError> {
    let o = ode.origin();
    if !spec.window.contains(o[0], o[2]) {
        return Err(CurveError::BadRequest(
            "portrait window must contain the base point".into(),
        ));
    }
    let class = classify_singular_point(ode)?;
    let (case, b, experimental, stability) = match &class {
        SingularClass::PleatedImproper(d) => {
            (d.case.as_str().to_string(), Some(d.b), false, Some(d.stability))
        }
        SingularClass::FoldedImproper(f) => (
            format!("folded_improper:{}", f.stability.as_str()),
            None,
            f.stability == Stability::Focus,
            Some(f.stability),
        ),
        other => (other.kind().to_string(), None, false, None),
    };

    let seeds = match &spec.seeds {
        Seeds::Grid { density } => seed_grid(&spec.window, [o[0], o[2]], *density),
        Seeds::List(list) => list.clone(),
    };

    let mut chart_els = Vec::new();
    let mut plane_els = Vec::new();
    let mut skipped = Vec::new();
    for (i, s) in seeds.iter().enumerate() {
        for dir in [1.0, -1.0] {
            let arrow = if dir > 0.0 { "fwd" } else { "bwd" };
            let source = format!("seed#{i:02}@({:.6},{:.6}):{arrow}", s[0], s[1]);
            match integrate(ode, *s, spec, dir) {
                Ok(traj) => {
                    chart_els.push(Element {
                        kind: "bundle",
                        style: LineStyle::Thin,
                        source: source.clone(),
                        pts: traj.samples.iter().map(|q| [q.x, q.p]).collect(),
                    });
                    plane_els.push(Element {
                        kind: "solution",
                        style: LineStyle::Thin,
                        source,
                        pts: traj.samples.iter().map(|q| [q.x, q.y]).collect(),
                    });
                }
                Err(err) => skipped.push(format!("{source}: {err}")),
            }
        }
    }

    if !matches!(
        class,
        SingularClass::NotSingular | SingularClass::Degenerate { .. }
    ) {
        let step = (spec.window.p[1] - spec.window.p[0]) / 400.0;
        match curves::trace_criminant(ode, (spec.window.p[0], spec.window.p[1]), step) {
            Ok(locus) => {
                chart_els.push(Element {
                    kind: "criminant",
                    style: LineStyle::Dashed,
                    source: "locus:criminant".to_string(),
                    pts: locus.samples.iter().map(|q| [q.x, q.p]).collect(),
                });
                plane_els.push(Element {
                    kind: "discriminant",
                    style: LineStyle::Dashed,
                    source: "locus:criminant".to_string(),
                    pts: locus.samples.iter().map(|q| [q.x, q.y]).collect(),
                });
            }
            Err(err) => skipped.push(format!("locus:criminant: {err}")),
        }
    }

    if matches!(stability, Some(Stability::Saddle) | Some(Stability::Node)) {
        let kind = if stability == Some(Stability::Saddle) {
            "separatrix"
        } else {
            "invariant_curve"
        };
        let half_x = 0.5 * (spec.window.x[1] - spec.window.x[0]);
        let half_p = 0.5 * (spec.window.p[1] - spec.window.p[0]);
        let copts = CurveOptions {
            window: 1.02 * half_x.max(half_p),
            arc: 2.0 * (half_x + half_p),
            ..CurveOptions::default()
        };
        for (tang, name) in [(Tangency::Vertical, "cusp"), (Tangency::Transverse, "transverse")] {
            match curves::invariant_curve(ode, tang, &copts) {
                Ok(traj) => {
                    for (tag, pts) in split_branches(&traj, o) {
                        chart_els.push(Element {
                            kind,
                            style: LineStyle::Bold,
                            source: format!("curve:{name}:{tag}"),
                            pts: pts.iter().map(|q| [q[0], q[1]]).collect(),
                        });
                        plane_els.push(Element {
                            kind: "projection",
                            style: LineStyle::Bold,
                            source: format!("curve:{name}:{tag}"),
                            pts: pts.iter().map(|q| [q[0], q[2]]).collect(),
                        });
                    }
                }
                Err(err) => skipped.push(format!("curve:{name}: {err}")),
            }
        }
    }

    Ok(Scene {
        case,
        b,
        experimental,
        origin: o,
        window: spec.window,
        y_half: (0.5 * (spec.window.x[1] - spec.window.x[0])).powf(1.5),
        chart: chart_els,
        plane: plane_els,
        skipped,
    })
}

/// Split a stitched two-branch curve at its t = 0 junction into per-branch
/// point lists (x, p, y), each closed off with the exact base point so the
/// branches meet at the equilibrium.
fn split_branches(traj: &Trajectory, origin: [f64; 3]) -> Vec<(&'static str, Vec<[f64; 3]>)> {
    let j = traj
        .samples
        .iter()
        .position(|s| s.t >= 0.0)
        .unwrap_or(traj.samples.len());
    let at = |s: &Sample| [s.x, s.p, s.y];
    let o = [origin[0], origin[2], origin[1]];
    let mut out = Vec::new();
    if j > 0 {
        let mut pts: Vec<[f64; 3]> = traj.samples[..j].iter().map(at).collect();
        pts.push(o);
        out.push(("minus", pts));
    }
    if j < traj.samples.len() {
        let mut pts = vec![o];
        pts.extend(traj.samples[j..].iter().map(at));
        out.push(("plus", pts));
    }
    out
}

// ---------------------------------------------------------------------------
// SVG + manifest.

/// A rendered portrait: the chart pane, the plane pane, and a manifest
/// listing every drawn element with its style and source.
pub struct Portrait {
    pub svg_chart: String,
    pub svg_plane: String,
    pub manifest: Value,
}

pub fn render(ode: &ImplicitOde, spec: &PortraitSpec) -> Result<Portrait, CurveError> {
    let scene = build_scene(ode, spec)?;
    Ok(portrait_from_scene(&scene, spec))
}

pub(crate) fn portrait_from_scene(scene: &Scene, spec: &PortraitSpec) -> Portrait {
    let style = &spec.style;
    let svg_chart = pane_svg(
        &format!("{} chart (x, p)", scene.case),
        scene.window.x,
        scene.window.p,
        [scene.origin[0], scene.origin[2]],
        &scene.chart,
        style,
    );
    let svg_plane = pane_svg(
        &format!("{} plane (x, y)", scene.case),
        scene.window.x,
        [scene.origin[1] - scene.y_half, scene.origin[1] + scene.y_half],
        [scene.origin[0], scene.origin[1]],
        &scene.plane,
        style,
    );

    let mut elements: Vec<Value> = Vec::new();
    for el in scene.chart.iter().chain(&scene.plane) {
        elements.push(json!({
            "kind": el.kind,
            "style": el.style.name(),
            "source": el.source,
        }));
    }
    elements.push(json!({
        "kind": "origin",
        "style": "marker",
        "source": "base_point",
    }));
    for s in &scene.skipped {
        elements.push(json!({
            "kind": "skipped",
            "style": "none",
            "source": s,
        }));
    }

    // Every knob of the run goes into the manifest so a portrait can be
    // reproduced from its artifacts alone.
    let seeds = match &spec.seeds {
        Seeds::Grid { density } => json!({ "grid_density": density }),
        Seeds::List(list) => json!({ "list": list }),
    };
    let manifest = json!({
        "case": scene.case,
        "b": scene.b,
        "experimental": scene.experimental,
        "window": { "x": scene.window.x, "p": scene.window.p },
        "plane_y_half": scene.y_half,
        "delta_stop": DELTA_STOP,
        "seeds": seeds,
        "integ": {
            "rel_tol": spec.integ.rel_tol,
            "abs_tol": spec.integ.abs_tol,
            "max_step": spec.integ.max_step,
        },
        "max_arc": spec.max_arc,
        "style": {
            "canvas": style.canvas,
            "thin": style.thin,
            "dashed": style.dashed,
            "bold": style.bold,
        },
        "elements": elements,
    });
    Portrait { svg_chart, svg_plane, manifest }
}

struct PaneMap {
    x: [f64; 2],
    v: [f64; 2],
    w: f64,
    h: f64,
    margin: f64,
}

impl PaneMap {
    fn px(&self, x: f64, v: f64) -> (f64, f64) {
        let sx = self.margin + (x - self.x[0]) / (self.x[1] - self.x[0]) * (self.w - 2.0 * self.margin);
        let sy = self.margin + (self.v[1] - v) / (self.v[1] - self.v[0]) * (self.h - 2.0 * self.margin);
        (sx, sy)
    }
}

fn pane_svg(
    label: &str,
    x_range: [f64; 2],
    v_range: [f64; 2],
    origin: [f64; 2],
    elements: &[Element],
    style: &Style,
) -> String {
    let map = PaneMap {
        x: x_range,
        v: v_range,
        w: style.canvas[0] as f64,
        h: style.canvas[1] as f64,
        margin: 28.0,
    };
    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
        w = style.canvas[0],
        h = style.canvas[1],
    );
    let iw = map.w - 2.0 * map.margin;
    let ih = map.h - 2.0 * map.margin;
    let _ = write!(
        s,
        "<defs><clipPath id=\"pane\"><rect x=\"{m:.1}\" y=\"{m:.1}\" width=\"{iw:.1}\" height=\"{ih:.1}\"/></clipPath></defs>\n",
        m = map.margin,
    );
    let _ = write!(s, "<rect width=\"{:.1}\" height=\"{:.1}\" fill=\"#ffffff\"/>\n", map.w, map.h);
    let _ = write!(
        s,
        "<rect x=\"{m:.1}\" y=\"{m:.1}\" width=\"{iw:.1}\" height=\"{ih:.1}\" fill=\"none\" stroke=\"#c8c8c8\" stroke-width=\"1\"/>\n",
        m = map.margin,
    );
    let _ = write!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"13\">{}</text>\n",
        map.margin,
        map.margin - 9.0,
        xml_escape(label),
    );

    s.push_str("<g clip-path=\"url(#pane)\">\n");
    // Faint axes through the base point.
    let (ox, oy) = map.px(origin[0], origin[1]);
    let _ = write!(
        s,
        "<line x1=\"{ox:.2}\" y1=\"{m:.1}\" x2=\"{ox:.2}\" y2=\"{b:.1}\" stroke=\"#e0e0e0\" stroke-width=\"0.6\"/>\n",
        m = map.margin,
        b = map.h - map.margin,
    );
    let _ = write!(
        s,
        "<line x1=\"{m:.1}\" y1=\"{oy:.2}\" x2=\"{r:.1}\" y2=\"{oy:.2}\" stroke=\"#e0e0e0\" stroke-width=\"0.6\"/>\n",
        m = map.margin,
        r = map.w - map.margin,
    );

    for el in elements {
        let (stroke, width, dash) = match el.style {
            LineStyle::Thin => ("#7f8c99", style.thin, None),
            LineStyle::Dashed => ("#b03a3a", style.dashed, Some("6 4")),
            LineStyle::Bold => ("#000000", style.bold, None),
        };
        let pts = polyline_points(&map, &el.pts);
        if pts.is_empty() {
            continue;
        }
        let dash_attr = match dash {
            Some(d) => format!(" stroke-dasharray=\"{d}\""),
            None => String::new(),
        };
        let _ = write!(
            s,
            "<polyline fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width:.1}\"{dash_attr} stroke-linejoin=\"round\" stroke-linecap=\"round\" points=\"{pts}\"/>\n",
        );
    }

    let _ = write!(s, "<circle cx=\"{ox:.2}\" cy=\"{oy:.2}\" r=\"2.6\" fill=\"#000000\"/>\n");
    s.push_str("</g>\n</svg>\n");
    s
}

fn polyline_points(map: &PaneMap, pts: &[[f64; 2]]) -> String {
    if pts.len() < 2 {
        return String::new();
    }
    let stride = (pts.len() - 1) / (MAX_SVG_PTS - 1) + 1;
    let mut out = String::new();
    let mut last = String::new();
    let emit = |q: &[f64; 2], out: &mut String, last: &mut String| {
        if !(q[0].is_finite() && q[1].is_finite()) {
            return;
        }
        let (sx, sy) = map.px(q[0], q[1]);
        let tok = format!("{sx:.2},{sy:.2}");
        if tok != *last {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(&tok);
            *last = tok;
        }
    };
    for q in pts.iter().step_by(stride) {
        emit(q, &mut out, &mut last);
    }
    if (pts.len() - 1) % stride != 0 {
        emit(&pts[pts.len() - 1], &mut out, &mut last);
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::IntegOptions;
    use crate::nflab::{CubicFamily, NodeNonRes, WellFoldedFamily};

    fn cubic_ode(b: f64) -> ImplicitOde {
        CubicFamily::new(b).unwrap().ode()
    }

    #[test]
    fn seed_grid_counts_and_exclusion() {
        let unit = Rect { x: [0.0, 1.0], p: [0.0, 1.0] };
        let on_boundary = |s: &&[f64; 2]| {
            s[0] == 0.0 || s[0] == 1.0 || s[1] == 0.0 || s[1] == 1.0
        };
        let g1 = seed_grid(&unit, [0.0, 0.0], 1);
        assert_eq!(g1.iter().filter(on_boundary).count(), 16);
        assert_eq!(g1.len(), 17);
        let g2 = seed_grid(&unit, [0.0, 0.0], 2);
        assert_eq!(g2.iter().filter(on_boundary).count(), 32);
        assert_eq!(g2.len(), 41);

        // Centered window: the middle interior node coincides with the base
        // point and falls inside the exclusion disc.
        let centered = Rect { x: [-0.25, 0.25], p: [-0.5, 0.5] };
        let g2c = seed_grid(&centered, [0.0, 0.0], 2);
        assert_eq!(g2c.len(), 40);
        for s in &g2c {
            assert!(s[0].hypot(s[1]) > 5.0 * DELTA_STOP);
        }
    }

    #[test]
    fn axis_orbit_stays_on_axis_and_clips_to_the_edge() {
        let ode = cubic_ode(2.0);
        let spec = PortraitSpec::around(ode.origin());
        let traj = integrate(&ode, [0.1, 0.0], &spec, 1.0).unwrap();
        assert_eq!(traj.meta.stop_reason, "window_exit");
        for s in &traj.samples {
            assert!(s.p.abs() < 1e-9, "p drifted off the invariant axis: {}", s.p);
            assert!(s.y.abs() < 1e-9);
        }
        let last = traj.samples.last().unwrap();
        assert!(
            (last.x - 0.25).abs() < 1e-9,
            "expected the final sample on the window edge, got x = {}",
            last.x
        );
    }

    #[test]
    fn endpoint_is_insensitive_to_tolerance_refinement() {
        let ode = cubic_ode(2.0);
        let spec = PortraitSpec::around(ode.origin());
        let a = integrate(&ode, [0.04, 0.02], &spec, 1.0).unwrap();
        assert_eq!(a.meta.stop_reason, "window_exit");

        let mut tight = spec.clone();
        tight.integ.rel_tol /= 10.0;
        tight.integ.abs_tol /= 10.0;
        let b = integrate(&ode, [0.04, 0.02], &tight, 1.0).unwrap();

        let qa = a.samples.last().unwrap();
        let qb = b.samples.last().unwrap();
        let gap = (qa.x - qb.x).hypot(qa.p - qb.p);
        assert!(gap < 1e-6, "endpoint moved by {gap:.3e} under refinement");
    }

    #[test]
    fn backward_node_orbit_arrives_tangent_to_the_weak_axis() {
        let nf = NodeNonRes::new(4.0).unwrap();
        let mut rhs =
            |_t: f64, s: &[f64; 2]| Ok::<_, std::convert::Infallible>(nf.rhs(*s));
        let mut stop =
            |_t: f64, s: &[f64; 2]| (s[0].abs() <= 1e-3).then_some("near_origin");
        let run = dp45(
            &mut rhs,
            0.0,
            [1.0, 0.5],
            -1.0,
            50.0,
            &IntegOptions::default(),
            &mut stop,
        )
        .unwrap();
        assert!(matches!(run.stop, StopReason::Predicate("near_origin")));
        let s = run.ys.last().unwrap();
        let v = nf.rhs(*s);
        let slope = (v[1] / v[0]).abs();
        assert!(slope < 1e-6, "arrival direction slope {slope:.3e}");
    }

    #[test]
    fn saddle_portrait_shows_four_separatrix_branches() {
        let ode = cubic_ode(2.0);
        let spec = PortraitSpec::around(ode.origin());
        let scene = build_scene(&ode, &spec).unwrap();
        assert_eq!(scene.case, "S3");
        assert!(!scene.experimental);
        let seps: Vec<_> = scene.chart.iter().filter(|e| e.kind == "separatrix").collect();
        assert_eq!(seps.len(), 4);
        for e in &seps {
            let touches_origin = e
                .pts
                .iter()
                .any(|q| q[0].hypot(q[1]) < 1e-12);
            assert!(touches_origin, "branch {} does not reach the base point", e.source);
        }
        assert!(scene.chart.iter().any(|e| e.kind == "criminant"));
        assert!(scene.skipped.is_empty(), "skipped: {:?}", scene.skipped);
    }

    #[test]
    fn node_portrait_separates_cusps_and_discriminant() {
        let ode = cubic_ode(0.25);
        let spec = PortraitSpec::around(ode.origin());
        let scene = build_scene(&ode, &spec).unwrap();
        assert_eq!(scene.case, "N1");
        let mean_x = |pts: &[[f64; 2]]| {
            pts.iter().map(|q| q[0]).sum::<f64>() / pts.len() as f64
        };
        let disc = scene.plane.iter().find(|e| e.kind == "discriminant").unwrap();
        assert!(mean_x(&disc.pts) > 0.0);
        let cusps: Vec<_> = scene
            .plane
            .iter()
            .filter(|e| e.kind == "projection" && e.source.contains("cusp"))
            .collect();
        assert_eq!(cusps.len(), 2);
        for e in &cusps {
            assert!(mean_x(&e.pts) < 0.0, "cusp branch {} on the wrong side", e.source);
        }
    }

    #[test]
    fn focus_portrait_is_experimental_and_has_no_bold_curves() {
        let ode = WellFoldedFamily::new(0.25).unwrap().ode();
        let spec = PortraitSpec::around(ode.origin());
        let scene = build_scene(&ode, &spec).unwrap();
        assert_eq!(scene.case, "folded_improper:focus");
        assert!(scene.experimental);
        assert!(scene.chart.iter().all(|e| e.style != LineStyle::Bold));
        assert!(scene.chart.iter().any(|e| e.kind == "criminant"));
    }

    #[test]
    fn svg_output_is_reproducible() {
        let ode = cubic_ode(2.0);
        let spec = PortraitSpec::around(ode.origin());
        let a = render(&ode, &spec).unwrap();
        let b = render(&ode, &spec).unwrap();
        assert_eq!(a.svg_chart, b.svg_chart);
        assert_eq!(a.svg_plane, b.svg_plane);
        assert_eq!(a.manifest.to_string(), b.manifest.to_string());
        assert!(a.svg_chart.starts_with("<svg"));
        assert!(a.svg_chart.contains("stroke-dasharray"));
        assert!(a.svg_plane.ends_with("</svg>\n"));
        assert_eq!(a.manifest["case"], "S3");
        assert_eq!(a.manifest["b"], 2.0);
    }

    #[test]
    fn window_must_contain_the_base_point() {
        let ode = cubic_ode(2.0);
        let mut spec = PortraitSpec::around(ode.origin());
        spec.window = Rect { x: [0.1, 0.5], p: [-0.5, 0.5] };
        assert!(matches!(
            integrate(&ode, [0.2, 0.0], &spec, 1.0),
            Err(CurveError::BadRequest(_))
        ));
        assert!(render(&ode, &spec).is_err());
        let spec2 = PortraitSpec::around(ode.origin());
        assert!(matches!(
            integrate(&ode, [0.4, 0.0], &spec2, 1.0),
            Err(CurveError::BadRequest(_))
        ));
    }

    /// Segment intersection with strictly interior parameters and a
    /// transversality threshold; near-parallel overlap (two seeds tracing
    /// one orbit) does not count as a crossing.
    fn transversal_crossing(
        a0: [f64; 2],
        a1: [f64; 2],
        b0: [f64; 2],
        b1: [f64; 2],
    ) -> Option<[f64; 2]> {
        let r = [a1[0] - a0[0], a1[1] - a0[1]];
        let s = [b1[0] - b0[0], b1[1] - b0[1]];
        let den = r[0] * s[1] - r[1] * s[0];
        let scale = r[0].hypot(r[1]) * s[0].hypot(s[1]);
        if den.abs() <= 1e-6 * scale {
            return None;
        }
        let d = [b0[0] - a0[0], b0[1] - a0[1]];
        let t = (d[0] * s[1] - d[1] * s[0]) / den;
        let u = (d[0] * r[1] - d[1] * r[0]) / den;
        let eps = 1e-6;
        if t > eps && t < 1.0 - eps && u > eps && u < 1.0 - eps {
            Some([a0[0] + t * r[0], a0[1] + t * r[1]])
        } else {
            None
        }
    }

    #[test]
    fn bundle_orbits_do_not_cross() {
        let ode = cubic_ode(2.0);
        let spec = PortraitSpec::around(ode.origin());
        let scene = build_scene(&ode, &spec).unwrap();

        // Flatten bundle segments, hash them on a uniform grid, and test
        // only pairs sharing a cell.
        struct Seg {
            el: usize,
            idx: usize,
            a: [f64; 2],
            b: [f64; 2],
        }
        let mut segs = Vec::new();
        let mut max_len = 0.0_f64;
        for (ei, el) in scene.chart.iter().enumerate() {
            if el.kind != "bundle" {
                continue;
            }
            for (i, w) in el.pts.windows(2).enumerate() {
                let len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
                if len == 0.0 {
                    continue;
                }
                max_len = max_len.max(len);
                segs.push(Seg { el: ei, idx: i, a: w[0], b: w[1] });
            }
        }
        assert!(segs.len() > 1000, "bundle too sparse: {} segments", segs.len());

        let cell = max_len.max(1e-9);
        let key = |q: [f64; 2]| ((q[0] / cell).floor() as i64, (q[1] / cell).floor() as i64);
        let mut grid: std::collections::BTreeMap<(i64, i64), Vec<usize>> =
            std::collections::BTreeMap::new();
        for (si, seg) in segs.iter().enumerate() {
            let (k0, k1) = (key(seg.a), key(seg.b));
            for kx in k0.0.min(k1.0)..=k0.0.max(k1.0) {
                for ky in k0.1.min(k1.1)..=k0.1.max(k1.1) {
                    grid.entry((kx, ky)).or_default().push(si);
                }
            }
        }

        let mut seen = std::collections::BTreeSet::new();
        let mut crossings = Vec::new();
        for bucket in grid.values() {
            for (bi, &i) in bucket.iter().enumerate() {
                for &j in &bucket[bi + 1..] {
                    let (lo, hi) = (i.min(j), i.max(j));
                    if !seen.insert((lo, hi)) {
                        continue;
                    }
                    let (p, q) = (&segs[lo], &segs[hi]);
                    if p.el == q.el && p.idx.abs_diff(q.idx) <= 1 {
                        continue;
                    }
                    if let Some(pt) = transversal_crossing(p.a, p.b, q.a, q.b) {
                        if pt[0].hypot(pt[1]) > 10.0 * DELTA_STOP {
                            crossings.push((p.el, q.el, pt));
                        }
                    }
                }
            }
        }
        assert!(crossings.is_empty(), "orbit crossings found: {crossings:?}");
    }

    #[test]
    fn plane_cusps_sit_on_the_discriminant() {
        for b in [0.25, 2.0] {
            let ode = cubic_ode(b);
            let spec = PortraitSpec::around(ode.origin());
            let scene = build_scene(&ode, &spec).unwrap();
            let disc = &scene
                .plane
                .iter()
                .find(|e| e.kind == "discriminant")
                .unwrap()
                .pts;

            let dist_to_disc = |q: [f64; 2]| -> (f64, f64) {
                let mut best = f64::INFINITY;
                let mut seg_len = 0.0;
                for w in disc.windows(2) {
                    let d = point_segment_distance(q, w[0], w[1]);
                    if d < best {
                        best = d;
                        seg_len = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
                    }
                }
                (best, seg_len)
            };

            let half_p = 0.5 * (spec.window.p[1] - spec.window.p[0]);
            let mut found = 0;
            for (ei, el) in scene.plane.iter().enumerate() {
                if el.kind != "solution" {
                    continue;
                }
                let chart_el = &scene.chart[ei];
                let pts = &el.pts;
                let mut last_sign = 0.0_f64;
                for i in 0..pts.len().saturating_sub(1) {
                    let dx = pts[i + 1][0] - pts[i][0];
                    if dx.abs() < 1e-14 {
                        continue;
                    }
                    let sign = dx.signum();
                    if last_sign != 0.0 && sign != last_sign {
                        let q = pts[i];
                        let xp = chart_el.pts[i];
                        let off_origin = xp[0].hypot(xp[1]) > 10.0 * DELTA_STOP;
                        let in_range = xp[1].abs() <= 0.9 * half_p;
                        if off_origin && in_range {
                            let lo = i.saturating_sub(1);
                            let hi = (i + 2).min(pts.len() - 1);
                            let spacing = pts[lo..hi]
                                .windows(2)
                                .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
                                .fold(0.0_f64, f64::max);
                            let (d, seg) = dist_to_disc(q);
                            assert!(
                                d <= 2.0 * spacing + 2.0 * seg,
                                "b = {b}: cusp at ({:.4}, {:.6}) sits {d:.2e} from the \
                                 discriminant (allowance {:.2e})",
                                q[0],
                                q[1],
                                2.0 * spacing + 2.0 * seg,
                            );
                            found += 1;
                        }
                    }
                    last_sign = sign;
                }
            }
            assert!(found >= 4, "b = {b}: only {found} cusps detected in the bundle");
        }
    }

    fn point_segment_distance(q: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
        let ab = [b[0] - a[0], b[1] - a[1]];
        let aq = [q[0] - a[0], q[1] - a[1]];
        let len2 = ab[0] * ab[0] + ab[1] * ab[1];
        let t = if len2 == 0.0 {
            0.0
        } else {
            ((aq[0] * ab[0] + aq[1] * ab[1]) / len2).clamp(0.0, 1.0)
        };
        (aq[0] - t * ab[0]).hypot(aq[1] - t * ab[1])
    }
}
