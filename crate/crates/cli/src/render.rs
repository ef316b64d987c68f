//! SVG strip of skeleton frames.
//!
//! Each frame gets its own cell. Ground truth at visible joints is drawn in
//! blue, ground truth at masked joints in grey, and the model's prediction at
//! masked joints in red. Bones are faint black polylines through the ground
//! truth. Every coloured mark is one `<circle>` carrying a class, so the
//! output can be audited by counting.

use std::fmt::Write;

use msae_core::SkeletonSequence;

pub const CLASS_RECONSTRUCTED: &str = "reconstructed";
pub const CLASS_VISIBLE: &str = "visible";
pub const CLASS_MASKED: &str = "masked";

#[derive(Clone, Debug)]
pub struct RenderSpec {
    pub frames_per_row: usize,
    /// Cell edge length in pixels.
    pub cell: f64,
    pub joint_radius: f64,
    pub bone_width: f64,
    pub reconstructed: String,
    pub visible: String,
    pub masked: String,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            frames_per_row: 6,
            cell: 160.0,
            joint_radius: 2.5,
            bone_width: 1.0,
            reconstructed: "red".into(),
            visible: "blue".into(),
            masked: "grey".into(),
        }
    }
}

/// `predicted` and `hidden` are frame-major over `truth`'s grid.
pub fn render_svg(truth: &SkeletonSequence, predicted: &[[f64; 2]], hidden: &[bool], spec: &RenderSpec) -> String {
    let (frames, joints) = (truth.frames(), truth.joints());
    assert_eq!(predicted.len(), frames * joints);
    assert_eq!(hidden.len(), frames * joints);

    // One shared scale so motion between frames stays visible.
    let shown = truth
        .coords()
        .iter()
        .chain(predicted.iter().zip(hidden).filter(|(_, &h)| h).map(|(p, _)| p));
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in shown {
        for a in 0..2 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-12);
    let margin = 0.08 * spec.cell;
    let scale = (spec.cell - 2.0 * margin) / span;

    let cols = spec.frames_per_row.max(1).min(frames.max(1));
    let rows = frames.div_ceil(cols);
    let (width, height) = (cols as f64 * spec.cell, rows as f64 * spec.cell + 24.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(&truth.bout_id));
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
    for f in 0..frames {
        let (ox, oy) = ((f % cols) as f64 * spec.cell, (f / cols) as f64 * spec.cell + 24.0);
        // SVG y grows downward; flip so the skeleton keeps its handedness.
        let at = |p: [f64; 2]| {
            (
                ox + margin + (p[0] - lo[0]) * scale,
                oy + spec.cell - margin - (p[1] - lo[1]) * scale,
            )
        };
        let _ = writeln!(s, r#"<g id="frame-{f}">"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" font-family="monospace">t={f}</text>"#,
            ox + 4.0,
            oy + 12.0
        );
        let points: Vec<String> = truth
            .frame(f)
            .iter()
            .map(|&p| {
                let (x, y) = at(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="bone" points="{}" fill="none" stroke="black" stroke-opacity="0.3" stroke-width="{}"/>"#,
            points.join(" "),
            spec.bone_width
        );
        for j in 0..joints {
            let i = f * joints + j;
            let (x, y) = at(truth.point(f, j));
            let (class, color) = if hidden[i] {
                (CLASS_MASKED, &spec.masked)
            } else {
                (CLASS_VISIBLE, &spec.visible)
            };
            circle(&mut s, class, color, x, y, spec.joint_radius);
            if hidden[i] {
                let (x, y) = at(predicted[i]);
                circle(&mut s, CLASS_RECONSTRUCTED, &spec.reconstructed, x, y, spec.joint_radius);
            }
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

fn circle(s: &mut String, class: &str, color: &str, x: f64, y: f64, r: f64) {
    let _ = writeln!(s, r#"<circle class="{class}" cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{color}"/>"#);
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Number of elements carrying `fill="{color}"`.
pub fn count_fill(svg: &str, color: &str) -> usize {
    svg.matches(&format!(r#"fill="{color}""#)).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bout() -> SkeletonSequence {
        let coords = (0..6).map(|i| [i as f64, (i % 3) as f64]).collect();
        SkeletonSequence::new("a<b", 10.0, 2, 3, coords).unwrap()
    }

    #[test]
    fn counts_follow_the_mask() {
        let seq = bout();
        let pred = vec![[0.5, 0.5]; 6];
        let hidden = [true, false, false, true, true, true];
        let svg = render_svg(&seq, &pred, &hidden, &RenderSpec::default());
        assert_eq!(count_fill(&svg, "red"), 4);
        assert_eq!(count_fill(&svg, "grey"), 4);
        assert_eq!(count_fill(&svg, "blue"), 2);
        assert!(svg.contains("a&lt;b"));
    }

    #[test]
    fn nothing_masked_means_only_blue() {
        let seq = bout();
        let svg = render_svg(&seq, seq.coords(), &[false; 6], &RenderSpec::default());
        assert_eq!(count_fill(&svg, "red"), 0);
        assert_eq!(count_fill(&svg, "grey"), 0);
        assert_eq!(count_fill(&svg, "blue"), 6);
    }
}
