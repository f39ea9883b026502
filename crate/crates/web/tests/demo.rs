use std::f64::consts::PI;

use isoenergy_web::{curvature_json, decay_json, gamma_json, MAX_RADIUS};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn curvature_probe() {
    let v = parse(curvature_json(PI / 3.0, PI / 3.0, PI / 3.0).unwrap());
    assert!((v["gauss"].as_f64().unwrap() - 1.0 / 9.0).abs() < 1e-12);
    assert!((v["mean"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert!((v["e"].as_f64().unwrap() - 1.5).abs() < 1e-12);
    assert!(curvature_json(0.0, 0.0, 0.0).is_err());
}

#[test]
fn gamma_at_two_and_a_half() {
    let v = parse(gamma_json(2.5).unwrap());
    assert_eq!(v["tangential"].as_array().unwrap().len(), 24);
    assert!(!v["components"].as_array().unwrap().is_empty());
    let convex = parse(gamma_json(1.0).unwrap());
    assert!(convex["components"].as_array().unwrap().is_empty());
    assert_eq!(convex["euler_characteristic"], 2);
}

#[test]
fn decay_scan_payload() {
    let v = parse(decay_json(1.0, 0.3, 0.5, 0.8, 60.0).unwrap());
    let radii = v["radii"].as_array().unwrap();
    assert_eq!(radii.len(), v["values"].as_array().unwrap().len());
    let mass = v["mass"].as_f64().unwrap();
    assert!(v["values"].as_array().unwrap().iter().all(|x| x.as_f64().unwrap() <= mass * (1.0 + 1e-12)));
    assert!(decay_json(1.0, 0.3, 0.5, 0.8, MAX_RADIUS * 2.0).is_err());
    assert!(decay_json(1.0, 0.0, 0.0, 0.0, 50.0).is_err());
}
