//! Minimal SVG renderings: a reliability diagram and a per-class box plot.

use std::fmt::Write;

use super::{BinStats, ConfidenceDistribution, FiveNumber};

const SIZE: f64 = 320.0;
const PAD: f64 = 40.0;

fn header(out: &mut String, title: &str) {
    let total = SIZE + 2.0 * PAD;
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total}\" height=\"{total}\" viewBox=\"0 0 {total} {total}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{x}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n\
         <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"none\" stroke=\"black\"/>\n",
        x = total / 2.0,
    );
}

fn y_of(v: f64) -> f64 {
    PAD + SIZE * (1.0 - v)
}

/// Bars of per-bin accuracy against the identity line.
pub fn reliability_diagram_svg(bins: &[BinStats], title: &str) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(out, "<line x1=\"{PAD}\" y1=\"{}\" x2=\"{}\" y2=\"{PAD}\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>", PAD + SIZE, PAD + SIZE);
    for b in bins.iter().filter(|b| b.count > 0) {
        let x = PAD + SIZE * b.lower;
        let w = SIZE * (b.upper - b.lower);
        let y = y_of(b.accuracy);
        let _ = writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{:.2}\" fill=\"steelblue\" stroke=\"white\"><title>n={}</title></rect>",
            PAD + SIZE - y,
            b.count
        );
        let _ = writeln!(out, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"crimson\"/>", x + w / 2.0, y_of(b.confidence));
    }
    out.push_str("</svg>\n");
    out
}

fn draw_box(out: &mut String, cx: f64, s: &FiveNumber, color: &str, label: &str) {
    let half = 30.0;
    let _ = writeln!(out, "<line x1=\"{cx}\" y1=\"{:.2}\" x2=\"{cx}\" y2=\"{:.2}\" stroke=\"black\"/>", y_of(s.min), y_of(s.max));
    let _ = writeln!(
        out,
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\" stroke=\"black\"/>",
        cx - half,
        y_of(s.q3),
        2.0 * half,
        (y_of(s.q1) - y_of(s.q3)).max(0.5)
    );
    let _ = writeln!(
        out,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-width=\"2\"/>",
        cx - half,
        y_of(s.median),
        cx + half,
        y_of(s.median)
    );
    let _ = writeln!(
        out,
        "<text x=\"{cx}\" y=\"{:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{label} (n={})</text>",
        PAD + SIZE + 16.0,
        s.count
    );
}

/// Confidence box plots for correct and incorrect instances.
pub fn box_plot_svg(dist: &ConfidenceDistribution, title: &str) -> String {
    let mut out = String::new();
    header(&mut out, title);
    if let Some(s) = &dist.correct {
        draw_box(&mut out, PAD + SIZE * 0.3, s, "lightgreen", "correct");
    }
    if let Some(s) = &dist.incorrect {
        draw_box(&mut out, PAD + SIZE * 0.7, s, "lightcoral", "incorrect");
    }
    out.push_str("</svg>\n");
    out
}
