//! SVG scene renderer. Fixed color mapping: black lanes, blue other
//! agents, cyan focal history, yellow predicted points, red ground-truth
//! line, magenta prediction endpoints, green ground-truth endpoint.

use crate::dataio::{format_decimal, PredictionRecord};
use crate::geom::Point2;
use crate::scenario::Scenario;

const MARGIN_M: f64 = 10.0;
const PX_PER_M: f64 = 8.0;

/// World-to-viewport affine map: meters scaled by `PX_PER_M`, origin at
/// the content's min corner padded by the margin, y flipped so north is
/// up.
pub struct Viewport {
    min_x: f64,
    max_y: f64,
    pub width: f64,
    pub height: f64,
}

impl Viewport {
    pub fn fit(points: impl Iterator<Item = Point2>) -> Viewport {
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut any = false;
        for p in points {
            any = true;
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        if !any {
            min = Point2::new(0.0, 0.0);
            max = Point2::new(0.0, 0.0);
        }
        Viewport {
            min_x: min.x,
            max_y: max.y,
            width: (max.x - min.x + 2.0 * MARGIN_M) * PX_PER_M,
            height: (max.y - min.y + 2.0 * MARGIN_M) * PX_PER_M,
        }
    }

    pub fn project(&self, p: Point2) -> (f64, f64) {
        (
            (p.x - self.min_x + MARGIN_M) * PX_PER_M,
            (self.max_y + MARGIN_M - p.y) * PX_PER_M,
        )
    }
}

fn fmt(v: f64) -> String {
    format_decimal((v * 100.0).round() / 100.0)
}

fn circle(out: &mut String, vp: &Viewport, p: Point2, r: f64, color: &str) {
    let (x, y) = vp.project(p);
    out.push_str(&format!(
        "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{color}\"/>",
        fmt(x),
        fmt(y),
        fmt(r)
    ));
}

fn polyline(out: &mut String, vp: &Viewport, pts: &[Point2], color: &str, width: f64) {
    if pts.len() < 2 {
        return;
    }
    out.push_str("<polyline points=\"");
    for (i, p) in pts.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let (x, y) = vp.project(*p);
        out.push_str(&format!("{},{}", fmt(x), fmt(y)));
    }
    out.push_str(&format!(
        "\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{}\"/>",
        fmt(width)
    ));
}

/// Render one scenario, optionally with its prediction record. Without a
/// prediction only the static scene (lanes, agents, focal history) is
/// drawn.
pub fn render_svg(scenario: &Scenario, prediction: Option<&PredictionRecord>) -> String {
    let h = scenario.horizon.history_len;
    let focal = scenario.focal_track().expect("validated scenario");

    let focal_history: Vec<Point2> = focal.states[..h]
        .iter()
        .filter(|st| st.valid)
        .map(|st| st.pose.position())
        .collect();
    let other_agents: Vec<Point2> = scenario
        .tracks
        .iter()
        .filter(|t| t.agent_id != scenario.focal_agent_id)
        .filter_map(|t| {
            t.states[..h]
                .iter()
                .rev()
                .find(|st| st.valid)
                .map(|st| st.pose.position())
        })
        .collect();
    let gt_future: Vec<Point2> = focal.states[h..]
        .iter()
        .filter(|st| st.valid)
        .map(|st| st.pose.position())
        .collect();

    let mut content: Vec<Point2> = Vec::new();
    for lane in &scenario.map.lanes {
        content.extend_from_slice(&lane.points);
    }
    content.extend_from_slice(&focal_history);
    content.extend_from_slice(&other_agents);
    if let Some(pred) = prediction {
        content.extend(pred.trajectories.iter().flatten().copied());
        content.extend_from_slice(&gt_future);
    }
    let vp = Viewport::fit(content.into_iter());

    let mut svg = String::new();
    svg.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n",
        fmt(vp.width),
        fmt(vp.height),
        fmt(vp.width),
        fmt(vp.height)
    ));

    svg.push_str("<g id=\"lanes\">");
    for lane in &scenario.map.lanes {
        polyline(&mut svg, &vp, &lane.points, "black", 2.0);
    }
    svg.push_str("</g>\n");

    svg.push_str("<g id=\"agents\">");
    for p in &other_agents {
        circle(&mut svg, &vp, *p, 5.0, "blue");
    }
    svg.push_str("</g>\n");

    svg.push_str("<g id=\"history\">");
    for p in &focal_history {
        circle(&mut svg, &vp, *p, 3.0, "cyan");
    }
    svg.push_str("</g>\n");

    if let Some(pred) = prediction {
        svg.push_str("<g id=\"ground-truth\">");
        polyline(&mut svg, &vp, &gt_future, "red", 2.0);
        if let Some(end) = gt_future.last() {
            circle(&mut svg, &vp, *end, 5.0, "green");
        }
        svg.push_str("</g>\n");

        svg.push_str("<g id=\"predictions\">");
        for traj in &pred.trajectories {
            svg.push_str("<g class=\"mode\">");
            for p in traj {
                circle(&mut svg, &vp, *p, 2.0, "yellow");
            }
            svg.push_str("</g>");
        }
        for traj in &pred.trajectories {
            if let Some(end) = traj.last() {
                circle(&mut svg, &vp, *end, 4.0, "magenta");
            }
        }
        svg.push_str("</g>\n");
    }

    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic, SynthConfig};

    fn sample() -> Scenario {
        generate_synthetic(&SynthConfig { n_scenarios: 1, seed: 50, ..SynthConfig::default() })
            .unwrap()
            .remove(0)
    }

    fn sample_prediction(s: &Scenario, k: usize) -> PredictionRecord {
        let focal = s.focal_track().unwrap();
        let h = s.horizon.history_len;
        let gt: Vec<Point2> = focal.states[h..].iter().map(|st| st.pose.position()).collect();
        PredictionRecord {
            scenario_id: s.scenario_id.clone(),
            probabilities: vec![1.0 / k as f64; k],
            trajectories: (0..k)
                .map(|m| gt.iter().map(|p| Point2::new(p.x + m as f64, p.y)).collect())
                .collect(),
        }
    }

    // Oracle: minimal XML well-formedness scan (matched tags, quoted
    // attribute values).
    fn assert_well_formed(xml: &str) {
        let body = xml.trim_start_matches("<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
        let mut stack: Vec<String> = Vec::new();
        let mut rest = body.trim();
        while let Some(start) = rest.find('<') {
            let end = rest[start..].find('>').expect("unterminated tag") + start;
            let tag = &rest[start + 1..end];
            if let Some(name) = tag.strip_prefix('/') {
                assert_eq!(stack.pop().as_deref(), Some(name.trim()), "mismatched close");
            } else if !tag.ends_with('/') {
                let name = tag.split_whitespace().next().unwrap().to_string();
                stack.push(name);
            }
            assert_eq!(tag.matches('"').count() % 2, 0, "unbalanced quotes in <{tag}>");
            rest = &rest[end + 1..];
        }
        assert!(stack.is_empty(), "unclosed tags: {stack:?}");
    }

    #[test]
    fn scene_without_predictions_has_no_forecast_colors() {
        let s = sample();
        let svg = render_svg(&s, None);
        assert_well_formed(&svg);
        assert!(svg.contains("black"));
        assert!(svg.contains("cyan"));
        assert!(!svg.contains("yellow"));
        assert!(!svg.contains("magenta"));
        assert!(!svg.contains("green"));
        assert!(!svg.contains("red"));
    }

    #[test]
    fn element_counts_match_mode_count() {
        let s = sample();
        let pred = sample_prediction(&s, 6);
        let svg = render_svg(&s, Some(&pred));
        assert_well_formed(&svg);
        assert_eq!(svg.matches("<g class=\"mode\">").count(), 6);
        assert_eq!(svg.matches("fill=\"magenta\"").count(), 6);
        assert_eq!(svg.matches("fill=\"green\"").count(), 1);
        assert_eq!(svg.matches("stroke=\"red\"").count(), 1);
    }

    #[test]
    fn only_the_seven_scene_colors_appear() {
        let s = sample();
        let pred = sample_prediction(&s, 3);
        let svg = render_svg(&s, Some(&pred));
        for attr in ["fill=\"", "stroke=\""] {
            let mut rest = svg.as_str();
            while let Some(i) = rest.find(attr) {
                let tail = &rest[i + attr.len()..];
                let color = &tail[..tail.find('"').unwrap()];
                assert!(
                    ["black", "blue", "cyan", "yellow", "red", "magenta", "green", "none"]
                        .contains(&color),
                    "unexpected color {color}"
                );
                rest = tail;
            }
        }
    }

    #[test]
    fn projected_coordinates_match_affine_oracle() {
        let s = sample();
        let pred = sample_prediction(&s, 2);
        let svg = render_svg(&s, Some(&pred));

        // recompute the affine map from the scenario content
        let mut content: Vec<Point2> = Vec::new();
        for lane in &s.map.lanes {
            content.extend_from_slice(&lane.points);
        }
        let focal = s.focal_track().unwrap();
        let h = s.horizon.history_len;
        content.extend(focal.states[..h].iter().filter(|st| st.valid).map(|st| st.pose.position()));
        for t in &s.tracks {
            if t.agent_id != s.focal_agent_id {
                if let Some(st) = t.states[..h].iter().rev().find(|st| st.valid) {
                    content.push(st.pose.position());
                }
            }
        }
        content.extend(pred.trajectories.iter().flatten().copied());
        content.extend(focal.states[h..].iter().filter(|st| st.valid).map(|st| st.pose.position()));
        let vp = Viewport::fit(content.into_iter());

        // five sampled history points must land exactly where the oracle
        // affine map puts them
        for st in focal.states[..h].iter().step_by(3).take(5) {
            let (x, y) = vp.project(st.pose.position());
            let needle = format!("<circle cx=\"{}\" cy=\"{}\"", fmt(x), fmt(y));
            assert!(svg.contains(&needle), "missing {needle}");
        }
    }
}
