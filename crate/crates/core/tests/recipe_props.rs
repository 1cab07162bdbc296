use std::collections::BTreeMap;

use openchamber_core::recipe::{compile, parse_recipe, serialize_recipe, Recipe, RecipeError, SetPoint, SAMPLE_RECIPE_JSON};
use openchamber_core::Variable;
use proptest::prelude::*;
use serde_json::json;

fn variable() -> impl Strategy<Value = Variable> {
    proptest::sample::select(Variable::ALL.to_vec())
}

fn value_for(v: Variable) -> impl Strategy<Value = f64> {
    prop_oneof![
        (v.min()..=v.max()),
        Just(v.min()),
        Just(v.max()),
        (v.min().ceil() as i64..=v.max().floor() as i64).prop_map(|i| i as f64),
    ]
}

fn setpoint_raw() -> impl Strategy<Value = (u64, Variable, f64)> {
    (0u64..500_000, variable()).prop_flat_map(|(t, v)| value_for(v).prop_map(move |x| (t, v, x)))
}

/// Valid recipes: sorted offsets, first (offset, variable) wins.
fn recipe_with(max_len: usize) -> impl Strategy<Value = Recipe> {
    ("[a-z0-9]{1,32}", proptest::collection::vec(setpoint_raw(), 1..max_len)).prop_map(|(id, mut raw)| {
        raw.sort_by_key(|(t, _, _)| *t);
        let mut seen = std::collections::BTreeSet::new();
        let ops: Vec<SetPoint> = raw
            .into_iter()
            .filter(|(t, v, _)| seen.insert((*t, *v)))
            .map(|(offset, variable, value)| SetPoint { offset, variable, value })
            .collect();
        Recipe::new(id, ops).unwrap()
    })
}

/// Oracle: scan the operation list for the latest setpoint at or before `t`.
fn naive_at(r: &Recipe, t: u64) -> BTreeMap<Variable, f64> {
    let mut out = BTreeMap::new();
    for op in r.operations() {
        if op.offset <= t {
            out.insert(op.variable, op.value);
        }
    }
    out
}

fn probe_times(r: &Recipe) -> Vec<u64> {
    let mut ts = vec![0, r.duration(), r.duration() + 1, r.duration() + 86_400];
    for op in r.operations() {
        ts.extend([op.offset, op.offset.saturating_sub(1), op.offset + 1]);
    }
    ts.sort_unstable();
    ts.dedup();
    ts
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn setpoints_match_oracle(r in recipe_with(40)) {
        let tl = compile(&r);
        for t in probe_times(&r) {
            let got = tl.setpoints_at(t);
            prop_assert_eq!(&got.values, &naive_at(&r, t), "t = {}", t);
            prop_assert_eq!(got.ended, t >= r.duration());
        }
    }

    #[test]
    fn hold_and_coverage(r in recipe_with(40), a in 0u64..600_000, b in 0u64..600_000) {
        let (t1, t2) = (a.min(b), a.max(b));
        let tl = compile(&r);
        let (s1, s2) = (tl.setpoints_at(t1), tl.setpoints_at(t2));
        for (v, x) in &s1.values {
            // present once seen
            prop_assert!(s2.values.contains_key(v));
            let changed = r.operations().iter().any(|op| op.variable == *v && op.offset > t1 && op.offset <= t2);
            if !changed {
                prop_assert_eq!(s2.values[v], *x);
            }
        }
    }

    #[test]
    fn duration_law(r in recipe_with(40), t in 0u64..600_000) {
        let max = r.operations().iter().map(|op| op.offset).max().unwrap();
        let tl = compile(&r);
        prop_assert_eq!(tl.duration(), max);
        prop_assert_eq!(tl.setpoints_at(t).ended, t >= max);
    }

    #[test]
    fn compile_is_lossless(r in recipe_with(40)) {
        prop_assert_eq!(compile(&r).enumerate(), r.operations().to_vec());
        for v in compile(&r).variables() {
            let steps = compile(&r).steps(v);
            prop_assert!(steps.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }

    #[test]
    fn serialize_round_trips(r in recipe_with(40)) {
        let bytes = serialize_recipe(&r);
        let back = parse_recipe(&bytes).unwrap();
        prop_assert_eq!(&back, &r);
        prop_assert_eq!(serialize_recipe(&back), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn thousand_setpoint_recipes(r in recipe_with(1200).prop_filter("long", |r| r.operations().len() >= 1000)) {
        let tl = compile(&r);
        prop_assert_eq!(tl.enumerate().len(), r.operations().len());
        for t in probe_times(&r).into_iter().step_by(7) {
            prop_assert_eq!(tl.setpoints_at(t).values, naive_at(&r, t));
        }
        prop_assert_eq!(parse_recipe(&serialize_recipe(&r)).unwrap(), r);
    }
}

#[test]
fn sample_examples() {
    let tl = compile(&parse_recipe(SAMPLE_RECIPE_JSON.as_bytes()).unwrap());
    use Variable::*;
    let check = |t, expect: &[(Variable, f64)], ended| {
        let got = tl.setpoints_at(t);
        assert_eq!(got.values, expect.iter().copied().collect::<BTreeMap<_, _>>(), "t = {t}");
        assert_eq!(got.ended, ended);
    };
    check(0, &[(AirTemperature, 25.0), (AirHumidity, 25.0), (LightIlluminance, 60.0)], false);
    check(50_000, &[(AirTemperature, 23.0), (AirHumidity, 25.0), (LightIlluminance, 60.0)], false);
    check(172_800, &[(AirTemperature, 23.0), (AirHumidity, 20.0), (LightIlluminance, 0.0)], true);
    assert_eq!(tl.steps(AirTemperature), vec![(0, 25.0), (43_200, 23.0)]);
    assert_eq!(tl.steps(AirHumidity), vec![(0, 25.0), (172_800, 20.0)]);
    assert_eq!(tl.steps(LightIlluminance), vec![(0, 60.0), (108_000, 0.0)]);
}

#[test]
fn extra_fields_survive_round_trip() {
    let doc = json!({"_id": "x", "format": "simple", "operations": [[0, "water_level", 300]], "name": "lettuce", "tags": [1, 2]});
    let r = parse_recipe(doc.to_string().as_bytes()).unwrap();
    let back: serde_json::Value = serde_json::from_slice(&serialize_recipe(&r)).unwrap();
    assert_eq!(back["name"], "lettuce");
    assert_eq!(back["tags"], json!([1, 2]));
}

fn mutate(seed: &[u8], ops: &[(usize, u8, u8)]) -> Vec<u8> {
    let mut out = seed.to_vec();
    for &(pos, kind, byte) in ops {
        if out.is_empty() {
            out.push(byte);
            continue;
        }
        let i = pos % out.len();
        match kind % 4 {
            0 => out[i] = byte,
            1 => out.insert(i, byte),
            2 => {
                out.remove(i);
            }
            _ => out.truncate(i),
        }
    }
    out
}

fn check_total(bytes: &[u8]) -> Result<(), TestCaseError> {
    match parse_recipe(bytes) {
        Ok(r) => {
            prop_assert!(!r.operations().is_empty());
            prop_assert!(r.operations().windows(2).all(|w| w[0].offset <= w[1].offset));
        }
        Err(e) => {
            prop_assert!(!e.code().is_empty());
            if let RecipeError::UnsortedOffsets { index, .. }
            | RecipeError::UnknownVariable { index, .. }
            | RecipeError::ValueOutOfRange { index, .. }
            | RecipeError::DuplicateSetPoint { index, .. } = e
            {
                prop_assert_eq!(e.index(), Some(index));
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3000))]

    #[test]
    fn parser_is_total_on_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
        check_total(&bytes)?;
    }

    #[test]
    fn parser_is_total_on_mutated_sample(ops in proptest::collection::vec((any::<usize>(), any::<u8>(), any::<u8>()), 1..8)) {
        check_total(&mutate(SAMPLE_RECIPE_JSON.as_bytes(), &ops))?;
    }

    #[test]
    fn parser_is_total_on_json_shapes(v in json_value()) {
        check_total(v.to_string().as_bytes())?;
        let wrapped = json!({"_id": "f", "format": "simple", "operations": v});
        check_total(wrapped.to_string().as_bytes())?;
    }
}

fn json_value() -> impl Strategy<Value = serde_json::Value> {
    let leaf = prop_oneof![
        Just(serde_json::Value::Null),
        any::<bool>().prop_map(serde_json::Value::from),
        any::<i64>().prop_map(serde_json::Value::from),
        any::<f64>().prop_map(|x| serde_json::Number::from_f64(x).map_or(serde_json::Value::Null, Into::into)),
        proptest::sample::select(vec!["air_temperature", "simple", "_id", "water_level", "", "x"])
            .prop_map(serde_json::Value::from),
    ];
    leaf.prop_recursive(4, 64, 8, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 0..6).prop_map(serde_json::Value::Array),
            proptest::collection::btree_map(
                proptest::sample::select(vec!["_id", "format", "operations", "other"]).prop_map(String::from),
                inner,
                0..4
            )
            .prop_map(|m| serde_json::Value::Object(m.into_iter().collect())),
        ]
    })
}
