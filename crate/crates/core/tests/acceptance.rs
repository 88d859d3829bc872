//! Acceptance criteria, one line of output each.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! report. Every criterion is checked at its stated tolerance. Criteria in
//! [`KNOWN_UNATTAINABLE`] are expected to miss their bound at desk scale;
//! the test asserts that they still do, so the list cannot go stale.

use std::time::Instant;

use lato::curation::{CurationConfig, Outcome, RecordStatus, Stage};
use lato::fuser::{
    attention_cost, cfg_combine, replace_uncond, Segment, SegmentKind, SequenceLengths, TokenSequence, UncondTokens,
    UNCOND_PROBABILITY,
};
use lato::instruction::{parse_instruction, render_instruction, Axis, EditInstruction, Expression, Intensity, Pronoun, Rotation};
use lato::kinematics::template::{reference_face, template_2d};
use lato::kinematics::{
    apply_expression, apply_rigid_rotation, estimate_pose, lift, pose_deviation, synthesize, FaceSynth, HeadPose, SynthConfig,
};
use lato::landmarks::{change_score, Canvas, LandmarkSet, NUM_LANDMARKS};
use lato::metrics::{rectified_ip, ssim, IpInputs};
use lato::posenc::{apply_rope_signed, image_positions, landmark_positions, PositionTriple, RopeLayout};
use lato::tokenizer::{codebook_stats, evaluate_tokenizer, nearest_codes, train, TokenizerConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

mod common;
use common::*;

/// Criteria whose bound is out of reach at desk scale.
const KNOWN_UNATTAINABLE: &[usize] = &[4];

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($msg)+)),
        }
    };
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn criterion_1() -> Check {
    let inputs = IpInputs::new(0.984, 0.257, 0.05);
    let start = Instant::now();
    let r = rectified_ip(&inputs).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!((r.p - 0.6487).abs() <= 1e-3, "p = {}", r.p);
    ensure!((r.s_rip - 0.3353).abs() <= 1e-3, "s_rip = {}", r.s_rip);
    ensure!(elapsed.as_secs_f64() < 1e-3, "took {elapsed:?}");
    Ok(format!("p {:.4}, s_rip {:.4}, {:?}", r.p, r.s_rip, elapsed))
}

fn criterion_2() -> Check {
    ensure!(pose_deviation(HeadPose::new(3.0, 4.0), HeadPose::default()) == 5.0, "(3,4) vs (0,0) is not 5");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let mut pose = || HeadPose::new(rng.random_range(-90.0..90.0), rng.random_range(-90.0..90.0));
        let (a, b) = (pose(), pose());
        let (ab, ba) = (pose_deviation(a, b), pose_deviation(b, a));
        ensure!(ab == ba, "asymmetric at {a:?}, {b:?}");
        ensure!(pose_deviation(a, a) == 0.0, "nonzero self deviation at {a:?}");
        ensure!((ab == 0.0) == (a == b), "zero iff equal fails at {a:?}, {b:?}");
    }
    Ok("exact 5, symmetric and definite over 1000 pairs".into())
}

struct TokenizerRun {
    mean_l1_px: f64,
    utilization: f64,
    reset_steps: Vec<usize>,
    steps: usize,
    interval: usize,
    seconds: f64,
    oracle_mismatches: usize,
    mean_abs_cos: f64,
    oracle_abs_cos: f64,
}

fn tokenizer_run() -> Result<TokenizerRun, String> {
    let config = TokenizerConfig::default();
    ensure!(
        config.m == 256 && config.d == 64,
        "desk configuration is {}x{}",
        config.m,
        config.d
    );
    let (model, log) = train(&config, &synthesize(10_000, 1)).map_err(|e| e.to_string())?;
    let eval = evaluate_tokenizer(&model, &synthesize(1_000, 2)).map_err(|e| e.to_string())?;

    let book = model.codebook();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let latents = Array2::from_shape_vec((100, config.d), gaussian(&mut rng, 100 * config.d)).unwrap();
    let fast = nearest_codes(latents.view(), book).map_err(|e| e.to_string())?;
    let mismatches = latents
        .rows()
        .into_iter()
        .zip(&fast)
        .filter(|(e, &got)| {
            let dist = |j: usize| book.row(j).iter().zip(e.iter()).map(|(c, x)| (c - x).powi(2)).sum::<f64>();
            let best = (0..book.nrows()).fold(0, |b, j| if dist(j) < dist(b) { j } else { b });
            best != got
        })
        .count();

    let rows: Vec<Vec<f64>> = book.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let c = dot(&rows[i], &rows[j]) / (dot(&rows[i], &rows[i]).sqrt() * dot(&rows[j], &rows[j]).sqrt());
            sum += c.abs();
            pairs += 1;
        }
    }

    Ok(TokenizerRun {
        mean_l1_px: eval.mean_l1_px,
        utilization: eval.utilization,
        reset_steps: log.resets.iter().map(|r| r.step).collect(),
        steps: config.steps,
        interval: config.reset_interval,
        seconds: log.seconds,
        oracle_mismatches: mismatches,
        mean_abs_cos: codebook_stats(book).map_err(|e| e.to_string())?.mean_abs_cos,
        oracle_abs_cos: sum / pairs as f64,
    })
}

fn criterion_3(run: &TokenizerRun) -> Check {
    let schedule: Vec<usize> = (run.interval..=run.steps).step_by(run.interval).collect();
    ensure!(run.interval == 50, "reset interval {}", run.interval);
    ensure!(run.reset_steps == schedule, "resets at {:?}", run.reset_steps);
    ensure!(run.oracle_mismatches == 0, "{} of 100 quantizer indices differ from the scan", run.oracle_mismatches);
    ensure!(run.mean_l1_px <= 2.0, "held-out L1 {:.3} px", run.mean_l1_px);
    ensure!(run.utilization >= 0.5, "utilization {:.3}", run.utilization);
    ensure!(run.seconds <= 600.0, "training took {:.0} s", run.seconds);
    Ok(format!(
        "L1 {:.3} px, utilization {:.1}%, {} resets, quantizer exact, {:.0} s",
        run.mean_l1_px,
        100.0 * run.utilization,
        run.reset_steps.len(),
        run.seconds
    ))
}

fn criterion_4(run: &TokenizerRun) -> Check {
    ensure!(
        (run.mean_abs_cos - run.oracle_abs_cos).abs() < 1e-12,
        "codebook statistics disagree with the pairwise loop: {} vs {}",
        run.mean_abs_cos,
        run.oracle_abs_cos
    );
    ensure!(run.mean_abs_cos <= 0.05, "mean pairwise |cos| {:.4} > 0.05", run.mean_abs_cos);
    Ok(format!("mean pairwise |cos| {:.4}", run.mean_abs_cos))
}

fn criterion_5() -> Check {
    let layout = RopeLayout::default();
    let d = layout.head_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pos = |rng: &mut ChaCha8Rng| [0; 3].map(|_: i64| rng.random_range(-512..512));
    let (mut worst_norm, mut worst_dot) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let v = gaussian(&mut rng, d);
        let p = pos(&mut rng);
        let r = apply_rope_signed(&v, p, &layout).map_err(|e| e.to_string())?;
        worst_norm = worst_norm.max((dot(&r, &r).sqrt() - dot(&v, &v).sqrt()).abs() / dot(&v, &v).sqrt());
    }
    for _ in 0..1000 {
        let (q, k) = (gaussian(&mut rng, d), gaussian(&mut rng, d));
        let (m, n) = (pos(&mut rng), pos(&mut rng));
        let lhs = dot(
            &apply_rope_signed(&q, m, &layout).map_err(|e| e.to_string())?,
            &apply_rope_signed(&k, n, &layout).map_err(|e| e.to_string())?,
        );
        let rel = [n[0] - m[0], n[1] - m[1], n[2] - m[2]];
        let rhs = dot(&q, &apply_rope_signed(&k, rel, &layout).map_err(|e| e.to_string())?);
        worst_dot = worst_dot.max((lhs - rhs).abs());
    }
    ensure!(worst_norm <= 1e-12, "norm drift {worst_norm:e}");
    ensure!(worst_dot <= 1e-9, "relative-position identity off by {worst_dot:e}");

    // Every pixel of the canvas, 68 at a time.
    let stride = 16u32;
    let image = image_positions(512 / stride, 512 / stride).map_err(|e| e.to_string())?;
    let pixels: Vec<(u32, u32)> = (0..512).flat_map(|y| (0..512).map(move |x| (x, y))).collect();
    let mut checked = 0usize;
    for chunk in pixels.chunks(NUM_LANDMARKS) {
        let mut pts = [[0.0; 2]; NUM_LANDMARKS];
        for (i, &(x, y)) in chunk.iter().enumerate() {
            pts[i] = [x as f64, y as f64];
        }
        let f = LandmarkSet::new(pts, Canvas::default()).map_err(|e| e.to_string())?;
        let got = landmark_positions(&f, stride).map_err(|e| e.to_string())?;
        for (i, &(x, y)) in chunk.iter().enumerate() {
            let want: PositionTriple = image[((y / stride) * (512 / stride) + x / stride) as usize];
            ensure!(got[i] == want, "pixel ({x}, {y}) maps to {:?}, covering token is {want:?}", got[i]);
            checked += 1;
        }
    }
    ensure!(checked == 512 * 512, "checked {checked} pixels");
    Ok(format!("norm drift {worst_norm:.1e}, dot error {worst_dot:.1e}, {checked} pixels mapped exactly"))
}

fn criterion_6() -> Check {
    let cost = attention_cost(SequenceLengths::new(77, 1024, 68, 1024));
    let closed = (2193.0f64 / 3149.0).powi(2);
    ensure!(cost.pairwise_logits == 2193 * 2193, "logits {}", cost.pairwise_logits);
    ensure!(cost.rendered_logits == 3149 * 3149, "rendered logits {}", cost.rendered_logits);
    ensure!(
        (cost.relative_cost_vs_rendered - closed).abs() <= 1e-12,
        "ratio {} vs {closed}",
        cost.relative_cost_vs_rendered
    );
    ensure!(cost.relative_cost_vs_rendered < 1.0 && 52.1 / 83.6 < 1.0, "direction differs from the latency gap");
    Ok(format!("logit ratio {:.6} (fused cheaper, like 52.1 s vs 83.6 s)", cost.relative_cost_vs_rendered))
}

fn criterion_7() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u = Array2::from_shape_vec((9, 5), gaussian(&mut rng, 45)).unwrap();
    let c = Array2::from_shape_vec((9, 5), gaussian(&mut rng, 45)).unwrap();
    ensure!(cfg_combine(&u, &c, 0.0).unwrap() == u, "w = 0 is not the unconditional output");
    ensure!(cfg_combine(&u, &c, 1.0).unwrap() == c, "w = 1 is not the conditional output");

    let d = 4;
    let seq = TokenSequence {
        tokens: Array2::ones((NUM_LANDMARKS + 1, d)),
        positions: vec![PositionTriple::default(); NUM_LANDMARKS + 1],
        segments: vec![
            Segment { kind: SegmentKind::Text, start: 0, len: 1 },
            Segment { kind: SegmentKind::Landmark, start: 1, len: NUM_LANDMARKS },
        ],
    };
    let uncond = UncondTokens::init(&mut rng, d);
    ensure!(uncond.probability == UNCOND_PROBABILITY && UNCOND_PROBABILITY == 0.1, "default probability");
    let trials = 100_000;
    let mut swaps = 0usize;
    for _ in 0..trials {
        swaps += replace_uncond(&seq, &uncond, &mut rng).map_err(|e| e.to_string())?.1 as usize;
    }
    let rate = swaps as f64 / trials as f64;
    ensure!((rate - 0.1).abs() <= 0.005, "replacement rate {rate}");
    Ok(format!("w=0 and w=1 exact, replacement rate {rate:.4}"))
}

fn criterion_8() -> Check {
    let config = SynthConfig { max_yaw: 45.0, max_pitch: 45.0, expressions: false, ..Default::default() };
    let mut synth = FaceSynth::new(8, config);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (f, yaw, pitch, _, _) = synth.sample();
        let est = estimate_pose(&f).map_err(|e| e.to_string())?;
        worst = worst.max((est.yaw - yaw).abs()).max((est.pitch - pitch).abs());
    }
    ensure!(worst <= 2.0, "pose recovery error {worst:.3} deg");

    let mut worst_trip = 0.0f64;
    for f in [reference_face(), template_2d().clone()] {
        // Depth comes from one lift and is carried through both turns.
        let lifted = lift(&f).map_err(|e| e.to_string())?;
        let turned = lifted.rotated(30.0, 0.0, 0.0);
        ensure!(turned.project().unwrap().clamp() == apply_rigid_rotation(&f, 30.0, 0.0).unwrap(), "turn disagrees");
        let back = turned.rotated(-30.0, 0.0, 0.0).project().map_err(|e| e.to_string())?;
        for i in 0..NUM_LANDMARKS {
            for a in 0..2 {
                worst_trip = worst_trip.max((back.point(i)[a] - f.point(i)[a]).abs());
            }
        }
    }
    ensure!(worst_trip <= 0.5, "yaw round trip drifts {worst_trip:.3} px");

    let t = template_2d();
    let happy = apply_expression(t, Expression::Happy, Intensity::Normally).map_err(|e| e.to_string())?;
    for (i, want) in [(48, [-10.0, -15.0]), (54, [10.0, -15.0]), (51, [0.0, -8.0])] {
        let got = [happy.point(i)[0] - t.point(i)[0], happy.point(i)[1] - t.point(i)[1]];
        ensure!(
            (got[0] - want[0]).abs() <= 0.5 && (got[1] - want[1]).abs() <= 0.5,
            "point {i} moved {got:?}, expected {want:?}"
        );
    }
    Ok(format!("pose error {worst:.3} deg over 200, round trip {worst_trip:.3} px, happy field on target"))
}

fn criterion_9() -> Check {
    let input = manifest(&fixture());
    let (out, s) = run(&input, 1, 256);
    let rates: Vec<(usize, usize, f64)> = Stage::ALL
        .iter()
        .map(|&st| {
            let x = s.stage(st);
            (x.entered, x.passed, x.pass_rate)
        })
        .collect();
    let designed = vec![(100, 80, 0.8), (80, 60, 0.75), (60, 54, 0.9), (54, 27, 0.5)];
    ensure!(rates == designed, "stage rates {rates:?}");
    ensure!(run(&input, 1, 256).0 == out && run(&input, 4, 7).0 == out, "reruns differ");

    let src = reference_face();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let (dx, dy) = (rng.random_range(-150.0..150.0), rng.random_range(-150.0..150.0));
        let cs = change_score(&src, &src.translate(dx, dy).unwrap()).map_err(|e| e.to_string())?.score;
        let want: f64 = (f64::abs(dx) + f64::abs(dy)) / 2.0;
        ensure!((cs - want).abs() <= 1e-12, "shift ({dx}, {dy}): {cs} vs {want}");
    }

    let mut sides = 0;
    let mut expect = |what: &str, got: bool, want: bool| -> Result<(), String> {
        sides += 1;
        if got == want {
            Ok(())
        } else {
            Err(format!("{what}: expected pass = {want}"))
        }
    };
    let cfg = CurationConfig::default();
    let (xl, xh, _, _) = cfg.centroid_bounds();
    let e = 1e-6;
    expect("centroid inside band", quality(&box_face(xl + e, 256.0, 200.0, 200.0)) == Outcome::Pass, true)?;
    expect("centroid outside band", quality(&box_face(xh + e, 256.0, 200.0, 200.0)) == Outcome::Pass, false)?;
    let side = (cfg.landmark_area_min * 512.0 * 512.0).sqrt();
    expect("area above 7%", quality(&box_face(256.0, 256.0, side * (1.0 + e), side)) == Outcome::Pass, true)?;
    expect("area below 7%", quality(&box_face(256.0, 256.0, side * (1.0 - e), side)) == Outcome::Pass, false)?;
    for (name, at, below, stage) in [
        ("blur", 50.0, 49.999_999, Stage::Quality),
        ("aesthetic", 0.5, 0.499_999_9, Stage::Quality),
        ("semantic_diff", 0.4, 0.399_999_9, Stage::Diversity),
        ("identity", 0.9, 0.899_999_9, Stage::Identity),
    ] {
        let mut r = good();
        r.scores.insert(name.into(), at);
        expect(name, outcome(&r, stage) == Outcome::Pass, true)?;
        r.scores.insert(name.into(), below);
        expect(name, outcome(&r, stage) == Outcome::Pass, false)?;
    }
    for (shift, ok) in [(23.0, true), (22.999_99, false)] {
        let r = record("c".into(), &src, &src.translate(shift, 23.0).unwrap(), LEFT_30);
        expect("change score 23", outcome(&r, Stage::Diversity) == Outcome::Pass, ok)?;
    }
    for (deg, ok) in [(21.0, true), (19.0, false)] {
        let r = record("p".into(), &src, &turn(&src, deg), LEFT_30);
        expect("pose 10 deg", decide(&r, &cfg).status == Some(RecordStatus::Kept), ok)?;
    }
    Ok(format!("rates {designed:?}, byte-identical reruns, 200 shifts exact, {sides} boundary sides"))
}

fn criterion_10() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let a: Array2<u8> = Array2::from_shape_simple_fn((64, 64), || rng.random());
    ensure!(ssim(&a, &a).unwrap() == 1.0, "identical images score {}", ssim(&a, &a).unwrap());
    let (black, white) = (Array2::<u8>::zeros((64, 64)), Array2::<u8>::from_elem((64, 64), 255));
    let bw = ssim(&black, &white).unwrap();
    ensure!((bw - 1.0003e-4).abs() <= 1e-7, "constant images score {bw:e}");
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x: Array2<u8> = Array2::from_shape_simple_fn((64, 64), || rng.random());
        let y: Array2<u8> = if rng.random_bool(0.5) {
            x.mapv(|v| v.saturating_add(rng.random_range(0..40)))
        } else {
            Array2::from_shape_simple_fn((64, 64), || rng.random())
        };
        worst = worst.max((ssim(&x, &y).unwrap() - ssim_oracle(&x, &y)).abs());
    }
    ensure!(worst <= 1e-9, "oracle disagreement {worst:e}");
    Ok(format!("self 1.0, black vs white {bw:.4e}, oracle gap {worst:.1e} over 10 pairs"))
}

fn criterion_11() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let expression = rng.random_bool(0.6).then(|| lato::instruction::ExpressionEdit {
            kind: Expression::ALL[rng.random_range(0..Expression::ALL.len())],
            intensity: Intensity::ALL[rng.random_range(0..Intensity::ALL.len())],
        });
        let mut rotations = Vec::new();
        let axes = match (expression.is_some(), rng.random_range(0..4)) {
            (_, 1) => vec![Axis::Yaw],
            (_, 2) => vec![Axis::Pitch],
            (_, 3) => vec![Axis::Pitch, Axis::Yaw],
            (false, _) => vec![Axis::Yaw, Axis::Pitch],
            (true, _) => vec![],
        };
        for axis in axes {
            let mag = if rng.random_bool(0.5) { rng.random_range(1..=90) as f64 } else { rng.random_range(0.01..=90.0) };
            rotations.push(Rotation { axis, degrees: if rng.random_bool(0.5) { mag } else { -mag } });
        }
        let pronoun = [Pronoun::His, Pronoun::Her, Pronoun::Either][rng.random_range(0..3)];
        let ins = EditInstruction { expression, rotations, pronoun };
        let text = render_instruction(&ins).map_err(|e| e.to_string())?;
        let back = parse_instruction(&text).map_err(|e| format!("{text:?}: {e}"))?;
        ensure!(back == ins, "{text:?} parsed to {back:?}");
    }
    let ins = parse_instruction("turn his/her head 30 degrees to the right and 30 degrees up").map_err(|e| e.to_string())?;
    let want = vec![Rotation { axis: Axis::Yaw, degrees: -30.0 }, Rotation { axis: Axis::Pitch, degrees: 30.0 }];
    ensure!(ins.rotations == want && ins.expression.is_none(), "parsed to {ins:?}");
    Ok("1000 round trips, right = yaw -30, up = pitch +30".into())
}

#[test]
fn acceptance_criteria() {
    let run = tokenizer_run();
    let results: Vec<(usize, &str, Check)> = vec![
        (1, "rectified IP worked example", criterion_1()),
        (2, "pose deviation metric", criterion_2()),
        (3, "tokenizer desk run", run.as_ref().map_err(Clone::clone).and_then(criterion_3)),
        (4, "codebook diversity", run.as_ref().map_err(Clone::clone).and_then(criterion_4)),
        (5, "RoPE identities and location mapping", criterion_5()),
        (6, "attention cost accounting", criterion_6()),
        (7, "guidance mechanics", criterion_7()),
        (8, "kinematics oracle", criterion_8()),
        (9, "curation determinism and thresholds", criterion_9()),
        (10, "SSIM", criterion_10()),
        (11, "instruction grammar", criterion_11()),
    ];

    let mut unexpected = Vec::new();
    for (n, name, result) in &results {
        let known = KNOWN_UNATTAINABLE.contains(n);
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(why) => println!("criterion {n:>2} FAIL  {name}: {why}{}", if known { " (known)" } else { "" }),
        }
        if result.is_ok() == known {
            unexpected.push(*n);
        }
    }
    assert!(unexpected.is_empty(), "criteria with an unexpected outcome: {unexpected:?}");
}
