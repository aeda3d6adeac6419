//! Accuracy-versus-noise line charts as standalone SVG.

use qsnn_core::dataio::RunRecord;
use std::collections::BTreeMap;
use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Curve label: the model, plus the noise kind when a file mixes kinds.
fn series(records: &[RunRecord]) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mixed = records.iter().any(|r| r.noise_kind != records[0].noise_kind);
    let mut out: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        let key = if mixed {
            format!("{} ({})", r.model, r.noise_kind)
        } else {
            r.model.clone()
        };
        out.entry(key).or_default().push((r.noise_param, r.accuracy));
    }
    for points in out.values_mut() {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One curve per model; x is the noise parameter, y the accuracy in [0, 1].
pub fn render_svg(records: &[RunRecord], title: &str) -> String {
    let curves = if records.is_empty() {
        BTreeMap::new()
    } else {
        series(records)
    };
    let (mut x_min, mut x_max) = records.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
        (lo.min(r.noise_param), hi.max(r.noise_param))
    });
    if !x_min.is_finite() {
        (x_min, x_max) = (0.0, 1.0);
    }
    if x_max - x_min < 1e-12 {
        x_min -= 0.5;
        x_max += 0.5;
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let py = |y: f64| TOP + (1.0 - y) * plot_h;
    let x_label = records.first().map(|r| r.noise_kind.as_str()).unwrap_or("noise");

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for k in 0..=5 {
        let y = k as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#dddddd"/><text x="{2:.1}" y="{3:.2}" text-anchor="end">{y:.1}</text>"##,
            py(y),
            LEFT + plot_w,
            LEFT - 6.0,
            py(y) + 4.0
        );
    }
    for k in 0..=4 {
        let x = x_min + (x_max - x_min) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{x:.3}</text>"#,
            px(x),
            TOP + plot_h + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">accuracy</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    for (i, (name, points)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        for &(x, y) in points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{:.1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(model: &str, p: f64, a: f64) -> RunRecord {
        RunRecord {
            dataset: "mnist".into(),
            model: model.into(),
            noise_kind: "invert".into(),
            noise_param: p,
            seed: 0,
            n_samples: 10,
            accuracy: a,
        }
    }

    #[test]
    fn single_point_chart() {
        let svg = render_svg(&[rec("qsnn", 0.0, 0.9)], "one");
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches("class=\"legend\"").count(), 1);
    }

    #[test]
    fn output_is_deterministic_and_has_one_legend_entry_per_model() {
        let recs = vec![
            rec("qsnn", 0.0, 0.9),
            rec("ann", 0.0, 0.95),
            rec("qsnn", 1.0, 0.9),
            rec("ann", 1.0, 0.1),
        ];
        let a = render_svg(&recs, "t");
        assert_eq!(a, render_svg(&recs, "t"));
        assert_eq!(a.matches("class=\"legend\"").count(), 2);
        assert_eq!(a.matches("<polyline").count(), 2);
    }

    #[test]
    fn labels_are_escaped() {
        let svg = render_svg(&[rec("a<b", 0.0, 0.5)], "x & y");
        assert!(svg.contains("a&lt;b") && svg.contains("x &amp; y"));
    }
}
