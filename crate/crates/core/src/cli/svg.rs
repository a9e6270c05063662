//! Static trajectory overlays.

use std::fmt::Write as _;

use crate::inference::Path2;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 30.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One pedestrian's layers.
pub struct PedLayers<'a> {
    pub id: i64,
    pub history: &'a [[f64; 2]],
    pub candidates: &'a [Path2],
    pub truth: Option<&'a [[f64; 2]]>,
}

/// Observed history (solid), candidates (thin, translucent) and ground truth
/// (dashed), in a square view fitted to all points. y points up.
pub fn render(title: &str, peds: &[PedLayers<'_>]) -> String {
    let all = peds.iter().flat_map(|p| {
        p.history
            .iter()
            .chain(p.candidates.iter().flatten())
            .chain(p.truth.into_iter().flatten())
    });
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for q in all {
        for d in 0..2 {
            lo[d] = lo[d].min(q[d]);
            hi[d] = hi[d].max(q[d]);
        }
    }
    if !lo[0].is_finite() {
        lo = [0.0; 2];
        hi = [1.0; 2];
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-6);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let px = |q: &[f64; 2]| {
        (
            MARGIN + (q[0] - lo[0]) * scale,
            SIZE - MARGIN - (q[1] - lo[1]) * scale,
        )
    };
    let points = |path: &[[f64; 2]]| {
        path.iter()
            .map(|q| {
                let (x, y) = px(q);
                format!("{x:.2},{y:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="20" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    for (i, p) in peds.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(s, r#"<g id="ped-{}">"#, p.id);
        for c in p.candidates {
            // candidates start where the history ends
            let mut path = p.history.last().copied().into_iter().collect::<Vec<_>>();
            path.extend_from_slice(c);
            let _ = writeln!(
                s,
                r#"<polyline class="candidate" points="{}" fill="none" stroke="{color}" stroke-opacity="0.35" stroke-width="1"/>"#,
                points(&path)
            );
        }
        if let Some(t) = p.truth {
            let mut path = p.history.last().copied().into_iter().collect::<Vec<_>>();
            path.extend_from_slice(t);
            let _ = writeln!(
                s,
                r#"<polyline class="truth" points="{}" fill="none" stroke="black" stroke-dasharray="4 3" stroke-width="1.5"/>"#,
                points(&path)
            );
        }
        let _ = writeln!(
            s,
            r#"<polyline class="history" points="{}" fill="none" stroke="{color}" stroke-width="2.5"/>"#,
            points(p.history)
        );
        if let Some(last) = p.history.last() {
            let (x, y) = px(last);
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_layers() {
        let hist = vec![[0.0, 0.0], [1.0, 0.0]];
        let cands: Vec<Path2> = (0..5).map(|i| vec![[2.0, i as f64 * 0.1]]).collect();
        let svg = render("a<b", &[PedLayers { id: 1, history: &hist, candidates: &cands, truth: None }]);
        assert_eq!(svg.matches(r#"class="candidate""#).count(), 5);
        assert_eq!(svg.matches(r#"class="truth""#).count(), 0);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
