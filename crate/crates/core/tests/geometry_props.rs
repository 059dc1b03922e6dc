use mckg::fusion::{self, Representation};
use mckg::geometry::Curvature;
use mckg::linalg;
use mckg::training::{hinge, margin, MarginRule};
use proptest::prelude::*;

fn kappa() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1e-8), Just(-1e-8), -2.0..2.0f64]
}

/// A curvature and a point pair of dimension 3 inside its domain.
fn space_and_points() -> impl Strategy<Value = (f64, Vec<f64>, Vec<f64>)> {
    (kappa(), prop::collection::vec(-1.0..1.0f64, 3), prop::collection::vec(-1.0..1.0f64, 3)).prop_map(|(k, x, y)| {
        let r = if k < 0.0 { 0.7 * (1.0 / (-k).sqrt()).min(1.0) } else { 0.7 };
        let fit = |v: Vec<f64>| {
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1.0);
            v.iter().map(|a| a * r / n).collect::<Vec<_>>()
        };
        (k, fit(x), fit(y))
    })
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #[test]
    fn distance_is_a_symmetric_nonnegative_function((k, x, y) in space_and_points()) {
        let c = Curvature::new(k);
        let d = c.dist(&x, &y).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!((d - c.dist(&y, &x).unwrap()).abs() < 1e-12);
        prop_assert!(c.dist(&x, &x).unwrap() < 1e-12);
    }

    #[test]
    fn exp_inverts_log((k, x, y) in space_and_points()) {
        let c = Curvature::new(k);
        let v = c.log_map(&x, &y).unwrap();
        let back = c.exp_map(&x, &v).unwrap();
        prop_assert!(close(&back, &y, 1e-9));
    }

    #[test]
    fn left_cancellation((k, x, y) in space_and_points()) {
        let c = Curvature::new(k);
        let s = c.mobius_add(&x, &y).unwrap();
        let back = c.mobius_add(&linalg::neg(&x), &s).unwrap();
        prop_assert!(close(&back, &y, 1e-9));
    }

    #[test]
    fn projection_lands_inside_the_ball(k in -2.0..-0.01f64, x in prop::collection::vec(-50.0..50.0f64, 4)) {
        let c = Curvature::new(k);
        let p = c.project(&x).unwrap();
        let n = p.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!(n < 1.0 / (-k).sqrt());
    }

    #[test]
    fn attention_weights_form_a_distribution(logits in prop::collection::vec(-30.0..30.0f64, 1..6)) {
        let w = linalg::softmax(&logits);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn global_distance_is_nonnegative((k, x, y) in space_and_points(), a in 0.01..1.0f64, b in 0.01..1.0f64) {
        let spaces = [Curvature::new(k), Curvature::new(0.0)];
        let u = Representation { embs: vec![x.clone(), y.clone()], weights: vec![a, 1.0 - a] };
        let v = Representation { embs: vec![y, x], weights: vec![b, 1.0 - b] };
        prop_assert!(fusion::global_distance(&spaces, &u, &v).unwrap() >= 0.0);
    }

    #[test]
    fn loss_is_nonnegative(dp in 0.0..10.0f64, dn in 0.0..10.0f64, duo in 0.0..5.0f64, dio in 0.0..5.0f64, c in 0.0..2.0f64) {
        for rule in MarginRule::all(c) {
            let m = margin(rule, dp, duo, dio).unwrap();
            prop_assert!(m >= c);
            prop_assert!(hinge(dp, dn, m) >= 0.0);
        }
    }
}
