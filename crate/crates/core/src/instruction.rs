//! Edit instructions in the unified template
//!
//! `Make his/her facial expression {type} {intensity} and turn his/her head {N degrees dir}`
//!
//! Grammar (case-insensitive, whitespace separated, optional trailing period):
//!
//! ```text
//! instruction := expr_clause | pose_clause | expr_clause "and" pose_clause
//! expr_clause := "make" pronoun "facial" "expression" TYPE [INTENSITY]
//! pose_clause := "turn" pronoun "head" rotation ["and" rotation]
//! rotation    := NUMBER ("degree" | "degrees") ["to" "the"] ("left" | "right" | "up" | "down")
//! pronoun     := "his" | "her" | "his/her"
//! ```
//!
//! Sign convention, shared with the kinematics module: turning **left** is
//! positive yaw (the face moves toward image-left), turning **up** is
//! positive pitch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{LatoError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Expression {
    Happy,
    Sad,
    Angry,
    Scared,
    Surprised,
    Disgusted,
    Neutral,
}

impl Expression {
    pub const ALL: [Expression; 7] = [
        Expression::Happy,
        Expression::Sad,
        Expression::Angry,
        Expression::Scared,
        Expression::Surprised,
        Expression::Disgusted,
        Expression::Neutral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Expression::Happy => "happy",
            Expression::Sad => "sad",
            Expression::Angry => "angry",
            Expression::Scared => "scared",
            Expression::Surprised => "surprised",
            Expression::Disgusted => "disgusted",
            Expression::Neutral => "neutral",
        }
    }
}

impl FromStr for Expression {
    type Err = LatoError;

    fn from_str(s: &str) -> Result<Self> {
        Expression::ALL
            .into_iter()
            .find(|e| e.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| LatoError::Parse {
                offset: 0,
                message: format!("unknown expression {s:?}"),
            })
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Slightly,
    #[default]
    Normally,
    Strongly,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Intensity::Slightly, Intensity::Normally, Intensity::Strongly];

    pub fn as_str(self) -> &'static str {
        match self {
            Intensity::Slightly => "slightly",
            Intensity::Normally => "normally",
            Intensity::Strongly => "strongly",
        }
    }

    /// Scale applied to expression displacement fields.
    pub fn multiplier(self) -> f64 {
        match self {
            Intensity::Slightly => 0.5,
            Intensity::Normally => 1.0,
            Intensity::Strongly => 1.5,
        }
    }
}

impl FromStr for Intensity {
    type Err = LatoError;

    fn from_str(s: &str) -> Result<Self> {
        Intensity::ALL
            .into_iter()
            .find(|e| e.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| LatoError::Parse {
                offset: 0,
                message: format!("unknown intensity {s:?}"),
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Yaw,
    Pitch,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pronoun {
    #[serde(rename = "his")]
    His,
    #[serde(rename = "her")]
    Her,
    #[default]
    #[serde(rename = "his/her")]
    Either,
}

impl Pronoun {
    pub fn as_str(self) -> &'static str {
        match self {
            Pronoun::His => "his",
            Pronoun::Her => "her",
            Pronoun::Either => "his/her",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpressionEdit {
    #[serde(rename = "type")]
    pub kind: Expression,
    #[serde(default)]
    pub intensity: Intensity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    pub axis: Axis,
    /// Signed degrees: left and up are positive.
    pub degrees: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditInstruction {
    pub expression: Option<ExpressionEdit>,
    #[serde(default)]
    pub rotations: Vec<Rotation>,
    #[serde(default)]
    pub pronoun: Pronoun,
}

impl EditInstruction {
    pub fn expression_only(kind: Expression, intensity: Intensity) -> Self {
        EditInstruction {
            expression: Some(ExpressionEdit { kind, intensity }),
            rotations: Vec::new(),
            pronoun: Pronoun::Either,
        }
    }

    pub fn rotation_only(rotations: Vec<Rotation>) -> Self {
        EditInstruction {
            expression: None,
            rotations,
            pronoun: Pronoun::Either,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.expression.is_none() && self.rotations.is_empty() {
            return Err(LatoError::Range(
                "instruction needs an expression or a rotation".into(),
            ));
        }
        if self.rotations.len() > 2 {
            return Err(LatoError::Range("at most two rotation terms".into()));
        }
        if self.rotations.len() == 2 && self.rotations[0].axis == self.rotations[1].axis {
            return Err(LatoError::Range("rotation axes must differ".into()));
        }
        for r in &self.rotations {
            if !r.degrees.is_finite() || r.degrees == 0.0 || r.degrees.abs() > 90.0 {
                return Err(LatoError::Range(format!(
                    "rotation of {} degrees is outside (0, 90]",
                    r.degrees
                )));
            }
        }
        Ok(())
    }

    pub fn yaw(&self) -> f64 {
        self.axis_total(Axis::Yaw)
    }

    pub fn pitch(&self) -> f64 {
        self.axis_total(Axis::Pitch)
    }

    fn axis_total(&self, axis: Axis) -> f64 {
        self.rotations
            .iter()
            .filter(|r| r.axis == axis)
            .map(|r| r.degrees)
            .sum()
    }
}

impl fmt::Display for EditInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_clauses(self))
    }
}

impl FromStr for EditInstruction {
    type Err = LatoError;

    fn from_str(s: &str) -> Result<Self> {
        parse_instruction(s)
    }
}

fn fmt_degrees(d: f64) -> String {
    if d.fract() == 0.0 {
        format!("{}", d as i64)
    } else {
        format!("{d}")
    }
}

fn render_clauses(e: &EditInstruction) -> String {
    let pronoun = e.pronoun.as_str();
    let mut out = String::new();
    if let Some(x) = e.expression {
        out.push_str(&format!(
            "Make {pronoun} facial expression {} {}",
            x.kind.as_str(),
            x.intensity.as_str()
        ));
    }
    if !e.rotations.is_empty() {
        out.push_str(if out.is_empty() { "Turn " } else { " and turn " });
        out.push_str(pronoun);
        out.push_str(" head ");
        let terms: Vec<String> = e
            .rotations
            .iter()
            .map(|r| {
                let dir = match (r.axis, r.degrees > 0.0) {
                    (Axis::Yaw, true) => "to the left",
                    (Axis::Yaw, false) => "to the right",
                    (Axis::Pitch, true) => "up",
                    (Axis::Pitch, false) => "down",
                };
                format!("{} degrees {dir}", fmt_degrees(r.degrees.abs()))
            })
            .collect();
        out.push_str(&terms.join(" and "));
    }
    out
}

/// Renders the unified template. `parse_instruction` inverts this exactly.
pub fn render_instruction(e: &EditInstruction) -> Result<String> {
    e.validate()?;
    Ok(render_clauses(e))
}

#[derive(Clone, Copy, Debug)]
struct Word<'a> {
    text: &'a str,
    offset: usize,
}

struct Cursor<'a> {
    words: Vec<Word<'a>>,
    pos: usize,
    end: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str) -> Self {
        let mut words = Vec::new();
        let mut start = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), start) {
                (true, Some(s)) => {
                    words.push(Word { text: &text[s..i], offset: s });
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        if let Some(s) = start {
            words.push(Word { text: &text[s..], offset: s });
        }
        if let Some(last) = words.last_mut() {
            if last.text.len() > 1 {
                last.text = last.text.strip_suffix('.').unwrap_or(last.text);
            } else if last.text == "." {
                words.pop();
            }
        }
        Cursor {
            words,
            pos: 0,
            end: text.len(),
        }
    }

    fn peek(&self) -> Option<Word<'a>> {
        self.words.get(self.pos).copied()
    }

    fn offset(&self) -> usize {
        self.peek().map_or(self.end, |w| w.offset)
    }

    fn error(&self, message: impl Into<String>) -> LatoError {
        LatoError::Parse {
            offset: self.offset(),
            message: message.into(),
        }
    }

    fn at(&self, word: &str) -> bool {
        self.peek().is_some_and(|w| w.text.eq_ignore_ascii_case(word))
    }

    fn eat(&mut self, word: &str) -> bool {
        let hit = self.at(word);
        if hit {
            self.pos += 1;
        }
        hit
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        if self.eat(word) {
            Ok(())
        } else {
            Err(self.error(format!("expected {word:?}")))
        }
    }

    fn next(&mut self) -> Option<Word<'a>> {
        let w = self.peek();
        if w.is_some() {
            self.pos += 1;
        }
        w
    }

    fn pronoun(&mut self) -> Result<Pronoun> {
        for p in [Pronoun::Either, Pronoun::His, Pronoun::Her] {
            if self.eat(p.as_str()) {
                return Ok(p);
            }
        }
        Err(self.error("expected his, her or his/her"))
    }
}

/// Parses an instruction written in the unified template.
pub fn parse_instruction(text: &str) -> Result<EditInstruction> {
    let mut cur = Cursor::new(text);
    let mut expression = None;
    let mut rotations = Vec::new();
    let mut pronoun = None;

    if cur.at("make") {
        cur.next();
        pronoun = Some(cur.pronoun()?);
        cur.expect("facial")?;
        cur.expect("expression")?;
        let word = cur.next().ok_or_else(|| cur.error("missing expression type"))?;
        let kind = word.text.parse::<Expression>().map_err(|_| LatoError::Parse {
            offset: word.offset,
            message: format!("unknown expression {:?}", word.text),
        })?;
        let intensity = match cur.peek().map(|w| w.text.parse::<Intensity>()) {
            Some(Ok(i)) => {
                cur.next();
                i
            }
            _ => Intensity::default(),
        };
        expression = Some(ExpressionEdit { kind, intensity });
        if cur.peek().is_some() {
            cur.expect("and")?;
            if !cur.at("turn") {
                return Err(cur.error("expected \"turn\" after \"and\""));
            }
        }
    }

    if cur.at("turn") {
        cur.next();
        let p = cur.pronoun()?;
        pronoun.get_or_insert(p);
        cur.expect("head")?;
        rotations.push(parse_rotation(&mut cur)?);
        if cur.eat("and") {
            rotations.push(parse_rotation(&mut cur)?);
        }
    }

    if expression.is_none() && rotations.is_empty() {
        return Err(cur.error("expected \"make\" or \"turn\""));
    }
    if cur.peek().is_some() {
        return Err(cur.error("unexpected trailing input"));
    }
    let ins = EditInstruction {
        expression,
        rotations,
        pronoun: pronoun.unwrap_or_default(),
    };
    ins.validate().map_err(|e| LatoError::Parse {
        offset: 0,
        message: e.to_string(),
    })?;
    Ok(ins)
}

fn parse_rotation(cur: &mut Cursor<'_>) -> Result<Rotation> {
    let num = cur.next().ok_or_else(|| cur.error("missing angle"))?;
    let magnitude: f64 = num
        .text
        .parse()
        .ok()
        .filter(|v: &f64| v.is_finite() && *v >= 0.0 && !num.text.starts_with('+'))
        .ok_or_else(|| LatoError::Parse {
            offset: num.offset,
            message: format!("expected a number of degrees, found {:?}", num.text),
        })?;
    if !(cur.eat("degrees") || cur.eat("degree")) {
        return Err(cur.error("expected \"degrees\""));
    }
    if cur.eat("to") {
        cur.expect("the")?;
    }
    let (axis, sign) = if cur.eat("left") {
        (Axis::Yaw, 1.0)
    } else if cur.eat("right") {
        (Axis::Yaw, -1.0)
    } else if cur.eat("up") {
        (Axis::Pitch, 1.0)
    } else if cur.eat("down") {
        (Axis::Pitch, -1.0)
    } else {
        return Err(cur.error("missing direction (left, right, up or down)"));
    };
    Ok(Rotation {
        axis,
        degrees: sign * magnitude,
    })
}
