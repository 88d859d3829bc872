//! Scores identity preservation for the worked example, then evaluates the
//! two-record manifest shipped with the tests.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::Result;
use lato::metrics::{evaluate, expected_amplitude, rectified_ip, AmplitudeTable, EvalConfig, IpInputs};
use lato::instruction::parse_instruction;
use lato::scoring::ScorerSuite;

fn main() -> Result<()> {
    let r = rectified_ip(&IpInputs::new(0.984, 0.257, 0.05))?;
    println!("identity 0.984, expected change 0.257, realized 0.05: p {:.4}, score {:.4}", r.p, r.s_rip);

    let ins = parse_instruction("make his/her facial expression happy slightly and turn his/her head 30 degrees to the left")?;
    println!("expected amplitude for \"{ins}\": {:.3}", expected_amplitude(&ins, &AmplitudeTable::default())?);

    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let input = BufReader::new(File::open(dir.join("eval_manifest.jsonl"))?);
    let report = evaluate(input, &ScorerSuite::mock(7), &EvalConfig::default(), &dir, 1)?;
    for (name, agg) in &report.aggregates {
        println!("{name:<15} mean {:?} over {} ({} missing)", agg.mean, agg.count, agg.missing);
    }
    Ok(())
}
