//! The reference attention pass against an independent numpy computation
//! (tests/fixtures/attention_golden.py).

use lato::fuser::{attention_forward, AttentionBlockParams, TokenSequence};
use lato::posenc::{PositionTriple, RopeLayout};
use ndarray::Array2;
use serde_json::Value;

fn matrix(v: &Value) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone()).unwrap();
    let (r, c) = (rows.len(), rows[0].len());
    Array2::from_shape_vec((r, c), rows.into_iter().flatten().collect()).unwrap()
}

#[test]
fn attention_matches_numpy_golden() {
    let fx: Value = serde_json::from_str(include_str!("fixtures/attention_golden.json")).unwrap();
    let d_model = fx["d_model"].as_u64().unwrap() as usize;
    let heads = fx["heads"].as_u64().unwrap() as usize;
    let axes: [usize; 3] = serde_json::from_value(fx["axes"].clone()).unwrap();
    let layout = RopeLayout::new(d_model / heads, axes, fx["base"].as_f64().unwrap()).unwrap();
    let positions: Vec<[u32; 3]> = serde_json::from_value(fx["positions"].clone()).unwrap();
    let positions = positions.iter().map(|p| PositionTriple::new(p[0], p[1], p[2])).collect();

    let params = AttentionBlockParams {
        wq: matrix(&fx["wq"]),
        wk: matrix(&fx["wk"]),
        wv: matrix(&fx["wv"]),
        wo: matrix(&fx["wo"]),
        heads,
        layout,
    };
    let seq = TokenSequence::from_parts(matrix(&fx["tokens"]), positions).unwrap();
    let out = attention_forward(&seq, &params).unwrap();
    let expected = matrix(&fx["output"]);
    assert_eq!(out.dim(), expected.dim());
    for (a, b) in out.iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}
