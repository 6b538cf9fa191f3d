use std::fs;

use ndarray::Array4;
use proptest::prelude::*;

use twophoton::io::{load_stack, payload_path, save_stack};
use twophoton::{Error, ImageStack};

fn finite_stack() -> impl Strategy<Value = ImageStack> {
    (1usize..3, 1usize..5, 1usize..9, 1usize..9, 1e-4f64..10.0).prop_flat_map(
        |(ch, t, r, c, period)| {
            prop::collection::vec(
                prop::num::f32::NORMAL | prop::num::f32::SUBNORMAL | prop::num::f32::ZERO,
                ch * t * r * c,
            )
            .prop_map(move |v| {
                ImageStack::new(Array4::from_shape_vec((ch, t, r, c), v).unwrap(), period).unwrap()
            })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn save_then_load_is_bit_exact(stack in finite_stack()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stack.json");
        save_stack(&stack, &path).unwrap();
        let back = load_stack(&path).unwrap();
        prop_assert_eq!(back.shape(), stack.shape());
        prop_assert_eq!(back.frame_period_s().to_bits(), stack.frame_period_s().to_bits());
        let bits = |s: &ImageStack| s.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&stack));
    }

    #[test]
    fn arbitrary_headers_never_panic(text in ".{0,200}", payload in prop::collection::vec(any::<u8>(), 0..64)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stack.json");
        fs::write(&path, &text).unwrap();
        fs::write(payload_path(&path), &payload).unwrap();
        let _ = load_stack(&path);
    }

    #[test]
    fn wrong_payload_length_is_size_mismatch(
        dims in (1usize..4, 1usize..4, 1usize..6, 1usize..6),
        delta in prop_oneof![-3i64..0, 1i64..9],
    ) {
        let (ch, t, r, c) = dims;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stack.json");
        fs::write(
            &path,
            format!(r#"{{"channels":{ch},"frames":{t},"rows":{r},"cols":{c},"dtype":"f32le","frame_period_s":0.125}}"#),
        )
        .unwrap();
        let len = ((ch * t * r * c * 4) as i64 + delta).max(0) as usize;
        fs::write(payload_path(&path), vec![0u8; len]).unwrap();
        let is_size_mismatch = matches!(load_stack(&path), Err(Error::SizeMismatch { .. }));
        prop_assert!(is_size_mismatch);
    }

    #[test]
    fn non_finite_payload_is_integrity_error(index in 0usize..12, bad in prop_oneof![Just(f32::NAN), Just(f32::INFINITY), Just(f32::NEG_INFINITY)]) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stack.json");
        fs::write(
            &path,
            r#"{"channels":1,"frames":3,"rows":2,"cols":2,"dtype":"f32le","frame_period_s":0.125}"#,
        )
        .unwrap();
        let mut values = [1.0f32; 12];
        values[index] = bad;
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(payload_path(&path), bytes).unwrap();
        let is_integrity = matches!(load_stack(&path), Err(Error::DataIntegrity { index: i }) if i == index);
        prop_assert!(is_integrity);
    }
}

#[test]
fn malformed_headers_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        "",
        "{",
        "[]",
        "null",
        r#"{"channels":1,"frames":1,"rows":1,"cols":1,"dtype":"f32le"}"#,
        r#"{"channels":1.5,"frames":1,"rows":1,"cols":1,"dtype":"f32le","frame_period_s":0.1}"#,
        r#"{"channels":1,"frames":1,"rows":1,"cols":1,"dtype":"f32le","frame_period_s":0.1,"extra":1}"#,
    ];
    for (i, text) in cases.iter().enumerate() {
        let path = dir.path().join(format!("h{i}.json"));
        fs::write(&path, text).unwrap();
        fs::write(payload_path(&path), [0u8; 4]).unwrap();
        assert!(
            matches!(load_stack(&path), Err(Error::Parse { .. })),
            "header {text:?}"
        );
    }
}

#[test]
fn bad_header_values_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        r#"{"channels":1,"frames":1,"rows":1,"cols":1,"dtype":"u16","frame_period_s":0.1}"#,
        r#"{"channels":0,"frames":1,"rows":1,"cols":1,"dtype":"f32le","frame_period_s":0.1}"#,
        r#"{"channels":1,"frames":1,"rows":1,"cols":1,"dtype":"f32le","frame_period_s":-0.1}"#,
    ];
    for (i, text) in cases.iter().enumerate() {
        let path = dir.path().join(format!("h{i}.json"));
        fs::write(&path, text).unwrap();
        fs::write(payload_path(&path), [0u8; 4]).unwrap();
        assert!(
            matches!(load_stack(&path), Err(Error::Format { .. })),
            "header {text:?}"
        );
    }
}

#[test]
fn missing_files_are_read_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("absent.json");
    assert!(matches!(load_stack(&path), Err(Error::Read { .. })));
    fs::write(
        &path,
        r#"{"channels":1,"frames":1,"rows":1,"cols":1,"dtype":"f32le","frame_period_s":0.1}"#,
    )
    .unwrap();
    assert!(matches!(load_stack(&path), Err(Error::Read { .. })));
}
