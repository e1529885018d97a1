use active_grasp_demo::{active_summary, bandit_trace, object_summary};
use serde_json::Value;

#[test]
fn object_summary_has_a_height_map_and_regions() {
    let v: Value = serde_json::from_str(&object_summary(3, 8).unwrap()).unwrap();
    assert_eq!(v["height"].as_array().unwrap().len(), 8);
    assert!(!v["regions"].as_array().unwrap().is_empty());
    let rate = v["heuristic_success"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    assert!(object_summary(3, 0).is_err());
}

#[test]
fn bandit_trace_favours_the_best_arm() {
    let v: Value = serde_json::from_str(&bandit_trace(&[0.9, 0.5, 0.2], &[0.0; 3], 1.0, 500, 1).unwrap()).unwrap();
    let pulls: Vec<u64> = v["pulls"].as_array().unwrap().iter().map(|p| p.as_u64().unwrap()).collect();
    assert_eq!(pulls.iter().sum::<u64>(), 500);
    assert!(pulls[0] > pulls[1] && pulls[0] > pulls[2]);
    assert_eq!(v["choices"].as_array().unwrap().len(), 500);
    assert!(bandit_trace(&[0.5], &[0.0, 0.0], 1.0, 10, 1).is_err());
    assert!(bandit_trace(&[1.5], &[0.0], 1.0, 10, 1).is_err());
}

#[test]
fn active_summary_reports_every_query() {
    let v: Value = serde_json::from_str(&active_summary(2, 2, 3).unwrap()).unwrap();
    assert_eq!(v["queries"].as_array().unwrap().len(), 6);
    assert_eq!(v["geodata"], 200);
    assert!(active_summary(2, 0, 3).is_err());
}
