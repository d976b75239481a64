//! Minimal SVG emitters for recall plots and scene renders.

use std::fmt::Write as _;
use std::io::Cursor;

use base64::Engine as _;

use crate::geometry::Window;
use crate::scene::Raster;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Line plot with y fixed to [0, 1] and x spanning `x_range`.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], x_range: (f64, f64)) -> String {
    let (w, h) = (480.0, 360.0);
    let (left, right, top, bottom) = (60.0, 20.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let (x0, x1) = x_range;
    let span = if x1 > x0 { x1 - x0 } else { 1.0 };
    let sx = |x: f64| left + (x - x0) / span * pw;
    let sy = |y: f64| top + (1.0 - y.clamp(0.0, 1.0)) * ph;

    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(out, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#, w / 2.0, escape(title)).unwrap();
    writeln!(out, r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, top + ph, left + pw, top + ph).unwrap();
    writeln!(out, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + ph).unwrap();
    for k in 0..=5 {
        let y = k as f64 / 5.0;
        writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="10">{y:.1}</text>"#, left - 6.0, sy(y) + 3.0).unwrap();
        let x = x0 + span * k as f64 / 5.0;
        writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{}</text>"#, sx(x), top + ph + 14.0, trim_number(x)).unwrap();
    }
    writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#, left + pw / 2.0, h - 12.0, escape(x_label)).unwrap();
    writeln!(out, r#"<text x="14" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})">{}</text>"#, top + ph / 2.0, top + ph / 2.0, escape(y_label)).unwrap();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" ")).unwrap();
        let ly = top + 14.0 + 14.0 * i as f64;
        writeln!(out, r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="10" fill="{color}">{}</text>"#, left + pw - 110.0, escape(&s.label)).unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn trim_number(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.2}")
    }
}

/// Stroke colour for a proposal at tree `level`.
pub fn level_color(level: usize) -> &'static str {
    match level {
        2 => "green",
        3 => "yellow",
        4 => "red",
        _ => "gray",
    }
}

fn raster_png_base64(raster: &Raster) -> String {
    let bytes: Vec<u8> = raster.samples().iter().map(|v| (v * 255.0).round() as u8).collect();
    let img = image::GrayImage::from_raw(raster.width(), raster.height(), bytes).expect("buffer matches dimensions");
    let mut png = Vec::new();
    img.write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    base64::engine::general_purpose::STANDARD.encode(png)
}

/// Scene render: raster background, dashed ground truths, level-coloured
/// proposals. Every box is a `<rect>` with class `gt` or `proposal`.
pub fn scene_svg(raster: &Raster, ground_truths: &[Window], proposals: &[(usize, Window)]) -> String {
    let (w, h) = (raster.width(), raster.height());
    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" width="{}" height="{}" viewBox="0 0 {w} {h}">"#, w * 4, h * 4).unwrap();
    writeln!(
        out,
        r#"<image x="0" y="0" width="{w}" height="{h}" style="image-rendering:pixelated" xlink:href="data:image/png;base64,{}"/>"#,
        raster_png_base64(raster)
    )
    .unwrap();
    for g in ground_truths {
        writeln!(out, r#"<rect class="gt" x="{}" y="{}" width="{}" height="{}" fill="none" stroke="cyan" stroke-width="0.6" stroke-dasharray="2,1"/>"#, g.x0(), g.y0(), g.width(), g.height()).unwrap();
    }
    for (level, p) in proposals {
        writeln!(out, r#"<rect class="proposal" data-level="{level}" x="{}" y="{}" width="{}" height="{}" fill="none" stroke="{}" stroke-width="0.5"/>"#, p.x0(), p.y0(), p.width(), p.height(), level_color(*level)).unwrap();
    }
    out.push_str("</svg>\n");
    out
}
