//! Serde adapter storing an `Array2<f64>` as nested row arrays in JSON.

use ndarray::Array2;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn serialize<S: Serializer>(m: &Array2<f64>, s: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.rows().into_iter().map(|r| r.to_vec()).collect();
    rows.serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Array2<f64>, D::Error> {
    let rows = Vec::<Vec<f64>>::deserialize(d)?;
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(serde::de::Error::custom("ragged matrix"));
    }
    let mut flat = Vec::with_capacity(r * c);
    for row in &rows {
        flat.extend_from_slice(row);
    }
    Array2::from_shape_vec((r, c), flat).map_err(serde::de::Error::custom)
}
