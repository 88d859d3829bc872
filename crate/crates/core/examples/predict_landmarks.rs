//! Predicts edited landmarks for the reference face and prints the four
//! reasoning stages.
//!
//!     cargo run --example predict_landmarks -- "make his/her facial expression happy and turn his/her head 20 degrees to the left"

use anyhow::Result;
use lato::instruction::parse_instruction;
use lato::kinematics::predict_landmarks;
use lato::kinematics::template::reference_face;
use lato::landmarks::{landmark_l1_error, serialize_landmarks};

fn main() -> Result<()> {
    let text = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "turn his/her head 30 degrees to the right and 30 degrees up".into());
    let source = reference_face();
    let instruction = parse_instruction(&text)?;
    let (edited, trace) = predict_landmarks(&source, &instruction)?;

    println!("instruction: {instruction}");
    for stage in [
        (&trace.initial_state.heading, &trace.initial_state.text),
        (&trace.decomposition.heading, &trace.decomposition.text),
        (&trace.kinematic_chain.heading, &trace.kinematic_chain.text),
        (&trace.coordinate_estimation.heading, &trace.coordinate_estimation.text),
    ] {
        println!("\n{}\n{}", stage.0, stage.1);
    }
    println!("\nmean point shift {:.2} px", landmark_l1_error(&edited, &source)?);
    println!("{}", serialize_landmarks(&edited));
    Ok(())
}
