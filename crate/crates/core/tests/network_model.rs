mod common;

use common::SinglePipe;
use ihes::network::{derive_adjacency, from_json_str, to_json_string, NetworkError};
use serde_json::json;

#[test]
fn minimal_file_is_valid() {
    let model = SinglePipe::default().model();
    assert_eq!(model.pipes.len(), 1);
    assert_eq!(model.horizon_hours, 1);
    let adj = derive_adjacency(&model);
    assert!(adj.incoming("s").is_empty());
    assert!(adj.outgoing("l").is_empty());
}

#[test]
fn inverted_flow_bounds_are_reported() {
    let mut doc = SinglePipe::default().json();
    doc["pipes"][0]["m_min"] = json!(2.0);
    doc["pipes"][0]["m_max"] = json!(1.0);
    let err = from_json_str(&doc.to_string()).unwrap_err();
    assert!(matches!(err, NetworkError::Validation(_)), "{err}");
    assert!(err.to_string().contains("pipe p1: m_min < m_max violated"), "{err}");
}

fn with_chp(c2: f64, c4: f64, c5: f64) -> serde_json::Value {
    let mut doc = SinglePipe::default().json();
    doc["units"].as_array_mut().unwrap().push(json!({
        "type": "chp", "id": "chp1", "bus_id": "b1", "node_id": "s",
        "cost_c0": 0.0, "cost_c1": 10.0, "cost_c2": c2, "cost_c3": 5.0, "cost_c4": c4, "cost_c5": c5,
        "region": [{"a": 1, "b": 0, "d": 10}, {"a": 0, "b": 1, "d": 5}]
    }));
    doc
}

#[test]
fn psd_chp_cost_is_accepted() {
    // 4·0.01·0.02 - 0.02² = 4e-4 > 0 with a positive diagonal.
    let model = from_json_str(&with_chp(0.01, 0.02, 0.02).to_string()).unwrap();
    assert_eq!(model.units.len(), 2);
}

#[test]
fn indefinite_chp_cost_is_rejected() {
    // 4·0.01·0.02 - 0.1² < 0.
    let err = from_json_str(&with_chp(0.01, 0.02, 0.1).to_string()).unwrap_err();
    assert!(err.to_string().contains("not positive semidefinite"), "{err}");
}

#[test]
fn unbounded_chp_region_is_rejected() {
    let mut doc = with_chp(0.01, 0.02, 0.0);
    doc["units"][1]["region"] = json!([{"a": 1, "b": -1, "d": 0}]);
    let err = from_json_str(&doc.to_string()).unwrap_err();
    assert!(err.to_string().contains("unbounded"), "{err}");
}

#[test]
fn schema_rejects_missing_fields() {
    let mut doc = SinglePipe::default().json();
    doc["pipes"][0].as_object_mut().unwrap().remove("length");
    assert!(from_json_str(&doc.to_string()).is_err());
}

#[test]
fn bundled_instances_round_trip() {
    for rel in common::BUNDLED.iter().chain([&common::MICRO2]) {
        let model = common::load(rel);
        let again = from_json_str(&to_json_string(&model)).unwrap();
        assert_eq!(model, again, "{rel}");
    }
}
