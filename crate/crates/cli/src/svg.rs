//! Minimal SVG scatter plots for the reduce stage. Enough to eyeball class
//! separation; not a plotting library.

use std::fmt::Write as _;
use std::path::Path;

use coexpr::CancerType;
use nalgebra::DMatrix;

const SIZE: f64 = 640.0;
const MARGIN: f64 = 48.0;

fn color(c: CancerType) -> &'static str {
    match c {
        CancerType::BRCA => "#1f77b4",
        CancerType::COAD => "#ff7f0e",
        CancerType::KIRC => "#2ca02c",
        CancerType::LUAD => "#d62728",
        CancerType::PRAD => "#9467bd",
    }
}

/// First two columns of `points`, coloured by label.
pub fn scatter(path: &Path, points: &DMatrix<f64>, labels: &[CancerType], title: &str, axes: (&str, &str)) -> anyhow::Result<()> {
    anyhow::ensure!(points.ncols() >= 2, "scatter needs two coordinates");
    let range = |c: usize| {
        let col = points.column(c);
        let (lo, hi) = (col.min(), col.max());
        if hi > lo { (lo, hi) } else { (lo - 1.0, hi + 1.0) }
    };
    let (x0, x1) = range(0);
    let (y0, y1) = range(1);
    let span = SIZE - 2.0 * MARGIN;
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * span;
    let py = |y: f64| SIZE - MARGIN - (y - y0) / (y1 - y0) * span;

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" font-family="sans-serif" font-size="12">"#)?;
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{title}</text>"#, SIZE / 2.0)?;
    writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="none" stroke="grey"/>"#
    )?;
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, SIZE / 2.0, SIZE - 12.0, axes.0)?;
    writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        SIZE / 2.0,
        SIZE / 2.0,
        axes.1
    )?;
    for (i, l) in labels.iter().enumerate() {
        writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            px(points[(i, 0)]),
            py(points[(i, 1)]),
            color(*l)
        )?;
    }
    for (k, c) in CancerType::ALL.iter().enumerate() {
        let y = MARGIN + 14.0 + 16.0 * k as f64;
        writeln!(s, r#"<circle cx="{}" cy="{}" r="4" fill="{}"/>"#, SIZE - MARGIN - 50.0, y - 4.0, color(*c))?;
        writeln!(s, r#"<text x="{}" y="{y}">{c}</text>"#, SIZE - MARGIN - 42.0)?;
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s)?;
    Ok(())
}
