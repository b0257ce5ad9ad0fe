//! Parameter checkpoints: a JSON object `{name → {shape, values}}` with
//! every value written to 17 significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct Entry {
    shape: Vec<usize>,
    values: Vec<f64>,
}

fn fmt_f64(v: f64) -> String {
    assert!(v.is_finite(), "checkpoint values must be finite");
    format!("{v:.16e}")
}

/// Serializes a store in insertion order.
pub fn to_json(store: &ParamStore) -> String {
    let mut out = String::from("{\n");
    let n = store.len();
    for (k, (_, p)) in store.iter().enumerate() {
        let shape = p
            .value
            .shape()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let values = p.value.values().iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(",");
        let name = serde_json::to_string(&p.name).expect("string");
        let _ = write!(out, "  {name}: {{\"shape\": [{shape}], \"values\": [{values}]}}");
        out.push_str(if k + 1 < n { ",\n" } else { "\n" });
    }
    out.push('}');
    out.push('\n');
    out
}

/// Parses a checkpoint into named tensors.
pub fn from_json(text: &str) -> Result<BTreeMap<String, Tensor>> {
    let raw: BTreeMap<String, Entry> = serde_json::from_str(text)?;
    raw.into_iter()
        .map(|(name, e)| Ok((name, Tensor::new(e.shape, e.values)?)))
        .collect()
}

/// Overwrites every parameter in `store` with the checkpoint value of the
/// same name.
pub fn load_into(store: &mut ParamStore, text: &str) -> Result<()> {
    let tensors = from_json(text)?;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.get(id).name.clone();
        let t = tensors
            .get(&name)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks parameter {name}")))?;
        store.set_value(id, t.clone())?;
    }
    Ok(())
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(store)).map_err(|e| Error::io(path, e))
}

pub fn load(store: &mut ParamStore, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_into(store, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::matrix(2, 2, vec![0.1, 1.0 / 3.0, -2.5e-17, 12345.678901234567]));
        store.add("b.bias", Tensor::vector(vec![std::f64::consts::PI]));
        let text = to_json(&store);
        let mut other = store.clone();
        other.zero_grad();
        for id in other.ids().collect::<Vec<_>>() {
            let shape = other.value(id).shape().to_vec();
            other.set_value(id, Tensor::zeros(&shape)).unwrap();
        }
        load_into(&mut other, &text).unwrap();
        for id in store.ids() {
            assert_eq!(store.value(id), other.value(id));
        }
        assert!(text.contains("\"shape\": [2,2]"));
    }

    #[test]
    fn missing_parameter_is_an_error() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::vector(vec![1.0]));
        assert!(load_into(&mut store, "{}").is_err());
    }
}
