use aerial_web::{
    alpha_bar_curve_impl, conditioning_plan_impl, pseudo_aerial_impl, render_scene_impl,
};

#[test]
fn rendered_scene_round_trips_through_the_warp() {
    let front = render_scene_impl("pyramid", "yellow", 0.4, 0.3, 0.5, "front", 24).unwrap();
    let warped = pseudo_aerial_impl(&front, 24, 24, 24, 0.5).unwrap();
    assert_eq!(warped.len(), front.len());
    // The bottom-left corner maps onto itself, so the floor survives there.
    let last_row = &warped[(23 * 24) * 4..(23 * 24 + 1) * 4];
    assert_eq!(last_row[..3], front[(23 * 24) * 4..(23 * 24) * 4 + 3]);
}

#[test]
fn plan_strings_for_every_length() {
    for steps in 1..40 {
        let alt = conditioning_plan_impl("alternating", steps, 0.3).unwrap();
        let flip = conditioning_plan_impl("alternating_start_e2", steps, 0.3).unwrap();
        assert_eq!(alt.len(), steps);
        assert!(alt.starts_with('1'));
        assert!(alt.chars().zip(flip.chars()).all(|(a, b)| a != b));
    }
}

#[test]
fn bad_inputs_are_errors() {
    assert!(alpha_bar_curve_impl("sigmoid", 10, 1e-4, 0.02).is_err());
    assert!(alpha_bar_curve_impl("linear", 0, 1e-4, 0.02).is_err());
    assert!(conditioning_plan_impl("alternating", 0, 0.5).is_err());
}
