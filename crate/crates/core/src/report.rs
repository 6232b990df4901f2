//! SVG figures and CSV tables.
//!
//! Both plots use an 800×800 canvas whose plot area spans `[80, 720]` on
//! each axis. Coordinates are written with six decimals.

use std::fmt::Write as _;
use std::sync::OnceLock;

use serde::Deserialize;

use crate::absolute::{Ideology, IdeologyTriple};
use crate::drift::{DriftRecord, PairDistance};
use crate::relative::{CompassScore, AXIS_LIMIT};

pub const CANVAS: f64 = 800.0;
pub const PLOT_MIN: f64 = 80.0;
pub const PLOT_MAX: f64 = 720.0;
pub const CENTER: f64 = (PLOT_MIN + PLOT_MAX) / 2.0;
/// Pixels per compass unit.
pub const COMPASS_SCALE: f64 = (PLOT_MAX - PLOT_MIN) / (2.0 * AXIS_LIMIT);
pub const TRIANGLE_SIDE: f64 = PLOT_MAX - PLOT_MIN;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Palette {
    pub background: String,
    pub plot_area: String,
    pub grid: String,
    pub axis: String,
    pub text: String,
    pub aggregate: String,
    pub quadrants: [String; 4],
    pub members: Vec<String>,
    pub per_prompt: String,
    pub member_opacity: f64,
    pub per_prompt_opacity: f64,
}

pub fn palette() -> &'static Palette {
    static PALETTE: OnceLock<Palette> = OnceLock::new();
    PALETTE.get_or_init(|| {
        serde_json::from_str(include_str!("../resources/palette.json"))
            .expect("bundled palette is valid")
    })
}

/// Compass point to canvas pixels. `y` grows downward, so positive
/// `social` is drawn toward the top.
pub fn compass_to_px(econ: f64, social: f64) -> (f64, f64) {
    (
        CENTER + COMPASS_SCALE * econ,
        CENTER - COMPASS_SCALE * social,
    )
}

pub fn px_to_compass(x: f64, y: f64) -> (f64, f64) {
    ((x - CENTER) / COMPASS_SCALE, (CENTER - y) / COMPASS_SCALE)
}

pub fn triangle_height() -> f64 {
    TRIANGLE_SIDE * 3f64.sqrt() / 2.0
}

/// Vertex positions, indexed like [`Ideology::ALL`]: liberal bottom-left,
/// conservative bottom-right, marxist at the top.
pub fn ternary_vertices() -> [(f64, f64); 3] {
    let h = triangle_height();
    let bottom = CENTER + h / 2.0;
    let top = CENTER - h / 2.0;
    [(PLOT_MIN, bottom), (PLOT_MAX, bottom), (CENTER, top)]
}

pub fn ternary_to_px(c: [f64; 3]) -> (f64, f64) {
    let v = ternary_vertices();
    let x = c[0] * v[0].0 + c[1] * v[1].0 + c[2] * v[2].0;
    let y = c[0] * v[0].1 + c[1] * v[1].1 + c[2] * v[2].1;
    (x, y)
}

/// Barycentric coordinates of a canvas point.
pub fn px_to_ternary(x: f64, y: f64) -> [f64; 3] {
    let v = ternary_vertices();
    let marxist = (v[0].1 - y) / triangle_height();
    let conservative = (x - v[0].0 - marxist * (v[2].0 - v[0].0)) / TRIANGLE_SIDE;
    [1.0 - conservative - marxist, conservative, marxist]
}

pub fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && !matches!(c, '\t' | '\n' | '\r') => out.push('\u{FFFD}'),
            c => out.push(c),
        }
    }
    out
}

fn open_svg(out: &mut String, title: &str) {
    let p = palette();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{CANVAS}" height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape_xml(title));
    let _ = writeln!(
        out,
        r#"<rect width="{CANVAS}" height="{CANVAS}" fill="{}"/>"#,
        p.background
    );
}

fn line(out: &mut String, (x1, y1): (f64, f64), (x2, y2): (f64, f64), stroke: &str, width: f64) {
    let _ = writeln!(
        out,
        r#"<line x1="{x1:.6}" y1="{y1:.6}" x2="{x2:.6}" y2="{y2:.6}" stroke="{stroke}" stroke-width="{width}"/>"#
    );
}

fn text(out: &mut String, (x, y): (f64, f64), anchor: &str, size: u32, body: &str) {
    let _ = writeln!(
        out,
        r#"<text x="{x:.6}" y="{y:.6}" text-anchor="{anchor}" font-size="{size}" fill="{}">{}</text>"#,
        palette().text,
        escape_xml(body)
    );
}

/// Political-compass plot: panel mean plus one translucent marker per
/// scorer, with a legend of scorer names.
pub fn render_compass(score: &CompassScore) -> String {
    let p = palette();
    let mut out = String::new();
    open_svg(&mut out, "Political compass");

    let half = (PLOT_MAX - PLOT_MIN) / 2.0;
    // quadrants: top-left, top-right, bottom-left, bottom-right
    let origins = [
        (PLOT_MIN, PLOT_MIN),
        (CENTER, PLOT_MIN),
        (PLOT_MIN, CENTER),
        (CENTER, CENTER),
    ];
    for ((x, y), fill) in origins.iter().zip(&p.quadrants) {
        let _ = writeln!(
            out,
            r#"<rect x="{x:.6}" y="{y:.6}" width="{half:.6}" height="{half:.6}" fill="{fill}"/>"#
        );
    }
    let mut g = -AXIS_LIMIT;
    while g <= AXIS_LIMIT {
        let (gx, gy) = compass_to_px(g, g);
        line(&mut out, (gx, PLOT_MIN), (gx, PLOT_MAX), &p.grid, 1.0);
        line(&mut out, (PLOT_MIN, gy), (PLOT_MAX, gy), &p.grid, 1.0);
        g += 2.0;
    }
    line(
        &mut out,
        (PLOT_MIN, CENTER),
        (PLOT_MAX, CENTER),
        &p.axis,
        2.0,
    );
    line(
        &mut out,
        (CENTER, PLOT_MIN),
        (CENTER, PLOT_MAX),
        &p.axis,
        2.0,
    );
    let _ = writeln!(
        out,
        r#"<rect x="{PLOT_MIN}" y="{PLOT_MIN}" width="{s}" height="{s}" fill="none" stroke="{}" stroke-width="2"/>"#,
        p.axis,
        s = PLOT_MAX - PLOT_MIN
    );

    text(
        &mut out,
        (CENTER, PLOT_MIN - 12.0),
        "middle",
        16,
        "Authoritarian",
    );
    text(
        &mut out,
        (CENTER, PLOT_MAX + 28.0),
        "middle",
        16,
        "Libertarian",
    );
    text(&mut out, (PLOT_MIN - 8.0, CENTER - 8.0), "end", 14, "Left");
    text(
        &mut out,
        (PLOT_MAX + 8.0, CENTER - 8.0),
        "start",
        14,
        "Right",
    );
    text(
        &mut out,
        (CENTER, 30.0),
        "middle",
        18,
        "Economic (x) / Social (y), axes -10 to 10",
    );

    for (i, member) in score.panel.iter().enumerate() {
        let color = &p.members[i % p.members.len()];
        let (x, y) = compass_to_px(member.econ_axis(), member.social_axis());
        let _ = writeln!(
            out,
            r#"<circle class="member" cx="{x:.6}" cy="{y:.6}" r="6" fill="{color}" fill-opacity="{}"><title>{}</title></circle>"#,
            p.member_opacity,
            escape_xml(&member.scorer().label())
        );
    }
    let (x, y) = compass_to_px(score.econ_mean, score.social_mean);
    let _ = writeln!(
        out,
        r#"<circle id="aggregate" cx="{x:.6}" cy="{y:.6}" r="8" fill="{}" stroke="{}" stroke-width="1.5"/>"#,
        p.aggregate, p.axis
    );

    let _ = writeln!(out, r#"<g id="legend">"#);
    let lx = PLOT_MIN + 10.0;
    let mut ly = PLOT_MAX - 12.0 - 18.0 * score.panel.len() as f64;
    let _ = writeln!(
        out,
        r#"<circle cx="{lx:.6}" cy="{:.6}" r="6" fill="{}"/>"#,
        ly - 4.0,
        p.aggregate
    );
    text(
        &mut out,
        (lx + 12.0, ly),
        "start",
        12,
        &format!(
            "panel mean ({:.2}, {:.2})",
            score.econ_mean, score.social_mean
        ),
    );
    for (i, member) in score.panel.iter().enumerate() {
        ly += 18.0;
        let color = &p.members[i % p.members.len()];
        let _ = writeln!(
            out,
            r#"<circle cx="{lx:.6}" cy="{:.6}" r="6" fill="{color}" fill-opacity="{}"/>"#,
            ly - 4.0,
            p.member_opacity
        );
        text(
            &mut out,
            (lx + 12.0, ly),
            "start",
            12,
            &member.scorer().label(),
        );
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    out
}

/// Ternary plot of an ideology triple with optional per-prompt scatter.
pub fn render_ternary(triple: &IdeologyTriple, per_prompt: Option<&[IdeologyTriple]>) -> String {
    let p = palette();
    let mut out = String::new();
    open_svg(&mut out, "Absolute position");
    let v = ternary_vertices();

    let _ = writeln!(
        out,
        r#"<polygon points="{:.6},{:.6} {:.6},{:.6} {:.6},{:.6}" fill="{}" stroke="{}" stroke-width="2"/>"#,
        v[0].0, v[0].1, v[1].0, v[1].1, v[2].0, v[2].1, p.plot_area, p.axis
    );
    for step in 1..5 {
        let t = f64::from(step) / 5.0;
        for k in 0..3 {
            let (i, j) = ((k + 1) % 3, (k + 2) % 3);
            let mut a = [0.0; 3];
            let mut b = [0.0; 3];
            a[k] = t;
            a[i] = 1.0 - t;
            b[k] = t;
            b[j] = 1.0 - t;
            line(&mut out, ternary_to_px(a), ternary_to_px(b), &p.grid, 1.0);
        }
    }
    let offsets = [
        (-10.0, 26.0, "start"),
        (10.0, 26.0, "end"),
        (0.0, -14.0, "middle"),
    ];
    for (ideology, ((x, y), (dx, dy, anchor))) in Ideology::ALL.iter().zip(v.iter().zip(offsets)) {
        text(&mut out, (x + dx, y + dy), anchor, 16, ideology.as_str());
    }

    if let Some(points) = per_prompt {
        for point in points {
            let (x, y) = ternary_to_px(point.components());
            let _ = writeln!(
                out,
                r#"<circle class="per-prompt" cx="{x:.6}" cy="{y:.6}" r="4" fill="{}" fill-opacity="{}"/>"#,
                p.per_prompt, p.per_prompt_opacity
            );
        }
    }
    let c = triple.components();
    let (x, y) = ternary_to_px(c);
    let _ = writeln!(
        out,
        r#"<circle id="aggregate" cx="{x:.6}" cy="{y:.6}" r="8" fill="{}" stroke="{}" stroke-width="1.5"/>"#,
        p.aggregate, p.axis
    );
    text(
        &mut out,
        (CENTER, 40.0),
        "middle",
        14,
        &format!(
            "liberal {:.3} / conservative {:.3} / marxist {:.3}",
            c[0], c[1], c[2]
        ),
    );
    out.push_str("</svg>\n");
    out
}

/// Nine significant digits, printed in the shortest form that parses back
/// to the rounded value.
pub fn format_sig9(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> String {
    let bytes = w.into_inner().expect("in-memory CSV writer does not fail");
    String::from_utf8(bytes).expect("CSV of UTF-8 fields is UTF-8")
}

pub const DRIFT_CSV_HEADER: [&str; 3] = ["token", "l2", "cosine_dist"];
pub const PAIRS_CSV_HEADER: [&str; 5] = [
    "word_a",
    "word_b",
    "metric",
    "base_distance",
    "trained_distance",
];

/// `token,l2,cosine_dist`; an undefined cosine distance is an empty field.
pub fn drift_csv(records: &[DriftRecord]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(DRIFT_CSV_HEADER).expect("write to memory");
    for r in records {
        let cos = r.cosine_dist.map(format_sig9).unwrap_or_default();
        w.write_record([r.token.as_str(), &format_sig9(r.l2), &cos])
            .expect("write to memory");
    }
    finish_csv(w)
}

pub fn pairs_csv(rows: &[PairDistance]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    w.write_record(PAIRS_CSV_HEADER).expect("write to memory");
    for r in rows {
        w.write_record([
            r.word_a.as_str(),
            &r.word_b,
            &r.metric.to_string(),
            &format_sig9(r.base_distance),
            &format_sig9(r.trained_distance),
        ])
        .expect("write to memory");
    }
    finish_csv(w)
}
