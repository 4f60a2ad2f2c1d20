//! Log-scale grouped bar chart of waiting times.

use std::fmt::Write;

use super::{Fig2Row, Series};

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 540.0;
const LEFT: f64 = 130.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 70.0;
const BOTTOM: f64 = 60.0;

const SECONDS_PER_YEAR: f64 = 365.25 * 86400.0;

fn color(series: Series) -> &'static str {
    match series {
        Series::Unsynchronized => "#8c8c8c",
        Series::Postselected => "#c0392b",
        Series::Unpostselected => "#2471a3",
    }
}

/// Three significant digits without trailing zeros.
fn short(x: f64) -> String {
    let digits = (2 - x.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{x:.digits$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Duration in the largest unit that keeps the number at least one.
pub fn human_duration(seconds: f64) -> String {
    if !seconds.is_finite() {
        return "never".into();
    }
    let (value, unit) = if seconds < 1e-6 {
        (seconds * 1e9, "ns")
    } else if seconds < 1e-3 {
        (seconds * 1e6, "μs")
    } else if seconds < 1.0 {
        (seconds * 1e3, "ms")
    } else if seconds < 60.0 {
        (seconds, "s")
    } else if seconds < 3600.0 {
        (seconds / 60.0, "min")
    } else if seconds < 86400.0 {
        (seconds / 3600.0, "h")
    } else if seconds < SECONDS_PER_YEAR {
        (seconds / 86400.0, "days")
    } else {
        (seconds / SECONDS_PER_YEAR, "years")
    };
    format!("{} {unit}", short(value))
}

/// SVG chart of the rows produced for the waiting-time figure. The output
/// depends only on its inputs.
pub fn fig2_svg(rows: &[Fig2Row], theta: f64) -> String {
    let values: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.waiting_time_s)
        .filter(|v| v.is_finite() && *v > 0.0)
        .collect();
    let (mut lo, mut hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v.log10().floor()), hi.max(v.log10().ceil()))
    });
    if values.is_empty() {
        (lo, hi) = (-9.0, 0.0);
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let plot_h = HEIGHT - TOP - BOTTOM;
    let plot_w = WIDTH - LEFT - RIGHT;
    let y_of = |v: f64| TOP + plot_h * (hi - v.log10()) / (hi - lo);

    let mut units: Vec<usize> = rows.iter().map(|r| r.units).collect();
    units.dedup();
    let group_w = plot_w / units.len().max(1) as f64;
    let bar_w = group_w * 0.8 / Series::ALL.len() as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">Waiting time for an N-photon coincidence (fidelity threshold {})</text>"#,
        WIDTH / 2.0,
        short(theta)
    );

    for decade in lo as i32..=hi as i32 {
        let y = y_of(10f64.powi(decade));
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            WIDTH - RIGHT
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{decade} s ({})</text>"#,
            LEFT - 6.0,
            y + 4.0,
            human_duration(10f64.powi(decade))
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}" stroke="black"/>"#,
        HEIGHT - BOTTOM
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        HEIGHT - BOTTOM,
        WIDTH - RIGHT,
        HEIGHT - BOTTOM
    );

    for (g, &n) in units.iter().enumerate() {
        let x0 = LEFT + g as f64 * group_w + group_w * 0.1;
        for (k, series) in Series::ALL.iter().enumerate() {
            let x = x0 + k as f64 * bar_w;
            let row = rows.iter().find(|r| r.units == n && r.series == *series);
            match row.and_then(|r| r.waiting_time_s).filter(|v| v.is_finite() && *v > 0.0) {
                Some(v) => {
                    let y = y_of(v);
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} N={n}: {}</title></rect>"#,
                        bar_w * 0.92,
                        HEIGHT - BOTTOM - y,
                        color(*series),
                        series.name(),
                        human_duration(v)
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="{}">x</text>"#,
                        x + bar_w / 2.0,
                        HEIGHT - BOTTOM - 4.0,
                        color(*series)
                    );
                }
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{n}</text>"#,
            LEFT + (g as f64 + 0.5) * group_w,
            HEIGHT - BOTTOM + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">number of photons N</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 14.0
    );

    for (k, series) in Series::ALL.iter().enumerate() {
        let x = LEFT + 10.0 + k as f64 * 220.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="40" width="14" height="14" fill="{}"/><text x="{:.2}" y="52">{}</text>"#,
            color(*series),
            x + 20.0,
            series.name()
        );
    }
    s.push_str("</svg>\n");
    s
}
