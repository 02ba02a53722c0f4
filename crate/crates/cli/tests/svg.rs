use paramscope::svg::{accuracy_color, nice_ticks, render_svg, Mark, PlotData, PlotKind, PlotSpec, Series};

fn spec() -> PlotSpec {
    PlotSpec::new(PlotKind::MeanSigmaScatter, "FC2-O/P", "mean", "std")
}

fn marks(n: usize) -> PlotData {
    PlotData {
        marks: (0..n).map(|i| Mark { x: i as f64 * 0.1, y: 1.0 + i as f64, accuracy: 30.0 * i as f64, row: i }).collect(),
        lines: vec![],
    }
}

#[test]
fn empty_data_draws_axes_only() {
    let svg = render_svg(&spec(), &PlotData::default());
    assert!(svg.starts_with("<svg"));
    assert!(svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("class=\"axes\""));
    assert!(svg.contains("class=\"legend\""));
    assert_eq!(svg.matches("<circle").count(), 0);
    assert_eq!(svg.matches("<polyline").count(), 0);
}

#[test]
fn one_mark_element_per_point() {
    let svg = render_svg(&spec(), &marks(3));
    assert_eq!(svg.matches("<circle").count(), 3);
    for row in 0..3 {
        assert!(svg.contains(&format!("data-row=\"{row}\"")));
    }
}

#[test]
fn rendering_is_deterministic() {
    let mut data = marks(5);
    data.lines.push(Series { points: vec![(1.0, 2.3), (2.0, 1.1), (3.0, f64::NAN)], accuracy: 97.0, row: 0 });
    assert_eq!(render_svg(&spec(), &data), render_svg(&spec(), &data));
}

#[test]
fn ramp_runs_blue_to_red() {
    assert_eq!(accuracy_color(0.0, (0.0, 100.0)), "#2c7bb6");
    assert_eq!(accuracy_color(100.0, (0.0, 100.0)), "#d7191c");
    assert_eq!(accuracy_color(-5.0, (0.0, 100.0)), "#2c7bb6");
    assert_eq!(accuracy_color(150.0, (0.0, 100.0)), "#d7191c");
    let mid = accuracy_color(50.0, (0.0, 100.0));
    assert_eq!(mid, "#824a69");
}

#[test]
fn ticks_are_round_and_inside() {
    let (t, step) = nice_ticks(0.03, 0.97, 5);
    assert_eq!(step, 0.2);
    assert!(t.iter().all(|v| (0.03..=0.97).contains(v)));
    assert_eq!(t.len(), 4);
    let (t, step) = nice_ticks(-12.0, 480.0, 6);
    assert_eq!(step, 100.0);
    assert_eq!(t, vec![0.0, 100.0, 200.0, 300.0, 400.0]);
}

#[test]
fn labels_are_escaped() {
    let spec = PlotSpec::new(PlotKind::StrengthScatter, "a < b & c", "x", "y");
    let svg = render_svg(&spec, &PlotData::default());
    assert!(svg.contains("a &lt; b &amp; c"));
}
