//! Minimal SVG line plots and heat maps.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Copy, Default)]
pub struct Axes {
    pub log_x: bool,
    pub log_y: bool,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-300 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], axes: Axes) -> String {
    let tx = |x: f64| if axes.log_x { x.log10() } else { x };
    let ty = |y: f64| if axes.log_y { y.log10() } else { y };
    let keep = |p: &&(f64, f64)| (!axes.log_x || p.0 > 0.0) && (!axes.log_y || p.1 > 0.0) && p.0.is_finite() && p.1.is_finite();
    let (x0, x1) = range(series.iter().flat_map(|s| s.points.iter().filter(keep).map(|p| tx(p.0))));
    let (y0, y1) = range(series.iter().flat_map(|s| s.points.iter().filter(keep).map(|p| ty(p.1))));
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    let _ = writeln!(
        s,
        r#"<path d="M{PAD},{PAD} L{PAD},{b} L{r},{b}" fill="none" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * f64::from(i) / 4.0;
        let fy = y0 + (y1 - y0) * f64::from(i) / 4.0;
        let lx = if axes.log_x { 10f64.powf(fx) } else { fx };
        let ly = if axes.log_y { 10f64.powf(fy) } else { fy };
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.3e}</text>"#, px(fx), H - PAD + 16.0, lx);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3e}</text>"#, PAD - 4.0, py(fy) + 4.0, ly);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, esc(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        esc(ylabel)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = ser.points.iter().filter(keep).map(|p| format!("{:.2},{:.2}", px(tx(p.0)), py(ty(p.1)))).collect();
        if !pts.is_empty() {
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD - 120.0,
            PAD + 16.0 * k as f64,
            esc(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// `values[row][col]`, rows bottom-to-top along `y`, columns along `x`.
pub fn heat_map(title: &str, values: &[Vec<f64>], (xa, xb): (f64, f64), (ya, yb): (f64, f64)) -> String {
    let rows = values.len().max(1);
    let cols = values.first().map_or(1, Vec::len).max(1);
    let (lo, hi) = range(values.iter().flatten().copied().filter(|v| v.is_finite()));
    let cw = (W - 2.0 * PAD) / cols as f64;
    let ch = (H - 2.0 * PAD) / rows as f64;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    for (r, row) in values.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            let u = if v.is_finite() { (v - lo) / (hi - lo) } else { 0.0 };
            let (red, blue) = ((255.0 * u) as u8, (255.0 * (1.0 - u)) as u8);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({red},64,{blue})"/>"#,
                PAD + c as f64 * cw,
                H - PAD - (r + 1) as f64 * ch,
                cw + 0.3,
                ch + 0.3
            );
        }
    }
    let _ = writeln!(s, r#"<text x="{PAD}" y="{}">{xa:.3}</text>"#, H - PAD + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{xb:.3}</text>"#, W - PAD, H - PAD + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{ya:.3}</text>"#, PAD - 4.0, H - PAD);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{yb:.3}</text>"#, PAD - 4.0, PAD + 10.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">range [{lo:.3e}, {hi:.3e}]</text>"#, W - PAD, PAD - 8.0);
    s.push_str("</svg>\n");
    s
}
