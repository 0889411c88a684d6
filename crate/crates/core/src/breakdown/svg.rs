//! Grouped bar chart: per system, a solid bar for the observed score beside a
//! stacked bar of factor contributions.

use std::fmt::Write as _;

use super::report::BreakdownReport;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvgOptions {
    pub width: f64,
    pub height: f64,
}

impl Default for SvgOptions {
    fn default() -> Self {
        Self { width: 960.0, height: 540.0 }
    }
}

const PALETTE: [&str; 13] = [
    "#7f7f7f", "#1f77b4", "#aec7e8", "#ff7f0e", "#ffbb78", "#2ca02c", "#98df8a", "#d62728", "#ff9896", "#9467bd",
    "#c5b0d5", "#8c564b", "#e377c2",
];
const TRUE_FILL: &str = "#111111";

const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 190.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 90.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn label(name: &str) -> String {
    if name == "loop31" {
        "overhead/loop (loop31)".to_string()
    } else {
        name.to_string()
    }
}

/// Round tick step (1, 2 or 5 times a power of ten) giving about five ticks.
fn tick_step(max: f64) -> f64 {
    let raw = max / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].into_iter().map(|m| m * mag).find(|&s| s >= raw).unwrap_or(10.0 * mag)
}

pub(crate) fn render_svg(report: &BreakdownReport, options: &SvgOptions) -> String {
    let (w, h) =
        (options.width.max(MARGIN_LEFT + MARGIN_RIGHT + 50.0), options.height.max(MARGIN_TOP + MARGIN_BOTTOM + 50.0));
    let plot_w = w - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = h - MARGIN_TOP - MARGIN_BOTTOM;
    let base_y = MARGIN_TOP + plot_h;

    let max_value = report.systems.iter().flat_map(|s| [s.true_score, s.fitted]).fold(0.0f64, f64::max);
    let y_max = if max_value > 0.0 { max_value * 1.1 } else { 1.0 };
    let px = |v: f64| v / y_max * plot_h;

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(out, "<!-- scorebreak {} -->", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.3}" y="22" text-anchor="middle" font-size="14">{} (observed vs. estimated breakdown, seconds)</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(&report.target)
    );

    // Axes and ticks.
    let _ = writeln!(out, r##"<g class="axis" stroke="#000">"##);
    let _ = writeln!(out, r#"<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{base_y:.3}"/>"#);
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN_LEFT}" y1="{base_y:.3}" x2="{:.3}" y2="{base_y:.3}"/>"#,
        MARGIN_LEFT + plot_w
    );
    let step = tick_step(y_max);
    let mut tick = 0.0;
    while tick <= y_max * (1.0 + 1e-9) {
        let y = base_y - px(tick);
        let _ = writeln!(out, r#"<line x1="{:.3}" y1="{y:.3}" x2="{MARGIN_LEFT}" y2="{y:.3}"/>"#, MARGIN_LEFT - 4.0);
        let _ = writeln!(
            out,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="end" stroke="none">{}</text>"#,
            MARGIN_LEFT - 6.0,
            y + 4.0,
            format_tick(tick, step)
        );
        tick += step;
    }
    let _ = writeln!(out, "</g>");

    let groups = report.systems.len().max(1) as f64;
    let group_w = plot_w / groups;
    let bar_w = group_w * 0.35;
    for (g, s) in report.systems.iter().enumerate() {
        let x0 = MARGIN_LEFT + g as f64 * group_w + group_w * 0.1;
        let id = escape(&s.system_id);
        let _ = writeln!(out, r#"<g class="system" data-system="{id}">"#);
        let th = px(s.true_score);
        let _ = writeln!(
            out,
            r#"<rect class="true" data-seconds="{}" x="{x0:.3}" y="{:.3}" width="{bar_w:.3}" height="{th:.3}" fill="{TRUE_FILL}"/>"#,
            s.true_score,
            base_y - th
        );
        let xs = x0 + bar_w + group_w * 0.1;
        let _ = writeln!(out, r#"<g class="stack" data-fitted="{}">"#, s.fitted);
        let mut acc = 0.0;
        for (j, c) in s.contributions.iter().enumerate() {
            if c.seconds <= 0.0 {
                continue;
            }
            let y_top = base_y - px(acc + c.seconds);
            let y_bot = base_y - px(acc);
            let _ = writeln!(
                out,
                r#"<rect class="segment" data-name="{}" data-seconds="{}" x="{xs:.3}" y="{y_top:.3}" width="{bar_w:.3}" height="{:.3}" fill="{}"/>"#,
                escape(&c.name),
                c.seconds,
                y_bot - y_top,
                PALETTE[j % PALETTE.len()]
            );
            acc += c.seconds;
        }
        let _ = writeln!(out, "</g>");
        let lx = x0 + bar_w + group_w * 0.05;
        let _ = writeln!(
            out,
            r#"<text x="{lx:.3}" y="{:.3}" text-anchor="end" transform="rotate(-45 {lx:.3} {:.3})">{id}</text>"#,
            base_y + 14.0,
            base_y + 14.0
        );
        let _ = writeln!(out, "</g>");
    }

    // Legend: observed bar, then every regressor.
    let lx = w - MARGIN_RIGHT + 15.0;
    let _ = writeln!(out, r#"<g class="legend">"#);
    let _ = writeln!(out, r#"<rect x="{lx:.3}" y="{MARGIN_TOP}" width="12" height="12" fill="{TRUE_FILL}"/>"#);
    let _ = writeln!(out, r#"<text x="{:.3}" y="{:.3}">observed</text>"#, lx + 18.0, MARGIN_TOP + 10.0);
    for (j, name) in report.regressors.iter().enumerate() {
        let y = MARGIN_TOP + 18.0 * (j as f64 + 1.0);
        let _ = writeln!(
            out,
            r#"<rect x="{lx:.3}" y="{y:.3}" width="12" height="12" fill="{}"/>"#,
            PALETTE[j % PALETTE.len()]
        );
        let _ = writeln!(out, r#"<text x="{:.3}" y="{:.3}">{}</text>"#, lx + 18.0, y + 10.0, escape(&label(name)));
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(out, "</svg>");
    out
}

fn format_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    format!("{v:.decimals$}")
}
