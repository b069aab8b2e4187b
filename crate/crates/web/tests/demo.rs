use serde_json::Value;

#[test]
fn flips_in_every_dtype() {
    for (dtype, bits) in [("fp32", 32), ("fp16", 16), ("q2.5", 8)] {
        for bit in 0..bits {
            let v: Value = serde_json::from_str(&saflab_web::flip_one(-0.3, dtype, bit).unwrap()).unwrap();
            let (a, b) = (v["bits_before"].as_str().unwrap(), v["bits_after"].as_str().unwrap());
            assert_eq!(a.len(), bits);
            let differing = a.chars().zip(b.chars()).filter(|(x, y)| x != y).count();
            assert_eq!(differing, 1, "{dtype} bit {bit}");
        }
    }
}

#[test]
fn bounded_curves() {
    let v: Value = serde_json::from_str(&saflab_web::curves(-50.0, 50.0, 101).unwrap()).unwrap();
    for s in v["series"].as_array().unwrap() {
        if s["saf"] == "none" {
            continue;
        }
        assert!(s["y"].as_array().unwrap().iter().all(|y| y.as_f64().unwrap().abs() <= 1.6), "{}", s["saf"]);
    }
}

#[test]
fn campaign_is_deterministic() {
    let a = saflab_web::mini_campaign("tanh", "fp16", 1e-3, 4, 9).unwrap();
    assert_eq!(a, saflab_web::mini_campaign("tanh", "fp16", 1e-3, 4, 9).unwrap());
    assert!(saflab_web::mini_campaign("relu", "fp16", 1e-3, 4, 9).is_err());
}
