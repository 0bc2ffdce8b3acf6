//! Discrete instruction vocabulary.
//!
//! A prompt is a token tuple `(op, arg0, arg1)`. Each slot maps into one
//! shared embedding table; [`PromptSpec::tokens`] gives the row ids and
//! [`VOCAB_SIZE`] the table height, with the final row reserved for the
//! null prompt.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RfdmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    GlobalStyle,
    LocalStyle,
    Remove,
}

impl EditOp {
    pub fn id(self) -> u32 {
        match self {
            EditOp::GlobalStyle => 0,
            EditOp::LocalStyle => 1,
            EditOp::Remove => 2,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        match id {
            0 => Some(EditOp::GlobalStyle),
            1 => Some(EditOp::LocalStyle),
            2 => Some(EditOp::Remove),
            _ => None,
        }
    }

    pub fn task_name(self) -> &'static str {
        match self {
            EditOp::GlobalStyle => "global_style",
            EditOp::LocalStyle => "local_style",
            EditOp::Remove => "remove",
        }
    }
}

/// Which objects a local edit applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeSelector {
    Circle,
    Square,
    Triangle,
    All,
}

impl ShapeSelector {
    pub const COUNT: u32 = 4;

    pub fn from_id(id: u32) -> Option<Self> {
        match id {
            0 => Some(ShapeSelector::Circle),
            1 => Some(ShapeSelector::Square),
            2 => Some(ShapeSelector::Triangle),
            3 => Some(ShapeSelector::All),
            _ => None,
        }
    }

    pub fn id(self) -> u32 {
        match self {
            ShapeSelector::Circle => 0,
            ShapeSelector::Square => 1,
            ShapeSelector::Triangle => 2,
            ShapeSelector::All => 3,
        }
    }

    pub fn matches(self, shape: super::ShapeKind) -> bool {
        use super::ShapeKind as S;
        matches!(
            (self, shape),
            (ShapeSelector::All, _)
                | (ShapeSelector::Circle, S::Circle)
                | (ShapeSelector::Square, S::Square)
                | (ShapeSelector::Triangle, S::Triangle)
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeSelector::Circle => "circle",
            ShapeSelector::Square => "square",
            ShapeSelector::Triangle => "triangle",
            ShapeSelector::All => "all",
        }
    }
}

/// 3x3 colour matrices for global style transfer, row-major, acting on RGB
/// column vectors. Index 0 is the identity.
pub const STYLE_MATRICES: [[[f32; 3]; 3]; 5] = [
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    // luma, replicated
    [[0.299, 0.587, 0.114], [0.299, 0.587, 0.114], [0.299, 0.587, 0.114]],
    // sepia, scaled so no channel exceeds 1
    [
        [0.2909, 0.5692, 0.1399],
        [0.2583, 0.5078, 0.1244],
        [0.2013, 0.3953, 0.0970],
    ],
    // swap red and blue
    [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]],
    // cool tint
    [[0.7, 0.0, 0.0], [0.0, 0.85, 0.1], [0.1, 0.1, 0.8]],
];

pub const STYLE_NAMES: [&str; 5] = ["identity", "grayscale", "sepia", "swap_rb", "cool"];

pub const COLOR_PALETTE: [[f32; 3]; 8] = [
    [0.9, 0.1, 0.1],
    [0.1, 0.8, 0.2],
    [0.1, 0.2, 0.9],
    [0.95, 0.9, 0.1],
    [0.1, 0.9, 0.9],
    [0.9, 0.1, 0.9],
    [0.95, 0.95, 0.95],
    [0.08, 0.08, 0.08],
];

pub const COLOR_NAMES: [&str; 8] = [
    "red", "green", "blue", "yellow", "cyan", "magenta", "white", "black",
];

const OP_BASE: u32 = 0;
const STYLE_BASE: u32 = 3;
const SELECTOR_BASE: u32 = STYLE_BASE + STYLE_MATRICES.len() as u32;
const COLOR_BASE: u32 = SELECTOR_BASE + ShapeSelector::COUNT;
/// Row id of the learned null prompt.
pub const NULL_TOKEN: u32 = COLOR_BASE + COLOR_PALETTE.len() as u32;
/// Embedding table height: every token plus the null row.
pub const VOCAB_SIZE: usize = NULL_TOKEN as usize + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub op: EditOp,
    pub arg0: u32,
    pub arg1: Option<u32>,
}

impl PromptSpec {
    pub fn global_style(matrix: u32) -> Self {
        Self {
            op: EditOp::GlobalStyle,
            arg0: matrix,
            arg1: None,
        }
    }

    pub fn local_style(selector: ShapeSelector, color: u32) -> Self {
        Self {
            op: EditOp::LocalStyle,
            arg0: selector.id(),
            arg1: Some(color),
        }
    }

    pub fn remove(selector: ShapeSelector) -> Self {
        Self {
            op: EditOp::Remove,
            arg0: selector.id(),
            arg1: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(RfdmError::InvalidPrompt(m));
        match self.op {
            EditOp::GlobalStyle => {
                if self.arg0 as usize >= STYLE_MATRICES.len() {
                    return bad(format!("style matrix id {} out of range", self.arg0));
                }
                if self.arg1.is_some() {
                    return bad("global_style takes one argument".into());
                }
            }
            EditOp::LocalStyle => {
                if ShapeSelector::from_id(self.arg0).is_none() {
                    return bad(format!("shape selector {} out of range", self.arg0));
                }
                match self.arg1 {
                    Some(c) if (c as usize) < COLOR_PALETTE.len() => {}
                    Some(c) => return bad(format!("color id {c} out of range")),
                    None => return bad("local_style needs a color argument".into()),
                }
            }
            EditOp::Remove => {
                if ShapeSelector::from_id(self.arg0).is_none() {
                    return bad(format!("shape selector {} out of range", self.arg0));
                }
                if self.arg1.is_some() {
                    return bad("remove takes one argument".into());
                }
            }
        }
        Ok(())
    }

    pub fn to_ids(&self) -> (u32, u32, Option<u32>) {
        (self.op.id(), self.arg0, self.arg1)
    }

    pub fn from_ids(ids: (u32, u32, Option<u32>)) -> Result<Self> {
        let op = EditOp::from_id(ids.0)
            .ok_or_else(|| RfdmError::InvalidPrompt(format!("op id {} out of range", ids.0)))?;
        let p = Self {
            op,
            arg0: ids.1,
            arg1: ids.2,
        };
        p.validate()?;
        Ok(p)
    }

    /// Embedding-table rows for this prompt, one per filled slot.
    pub fn tokens(&self) -> Vec<u32> {
        let mut t = vec![OP_BASE + self.op.id()];
        match self.op {
            EditOp::GlobalStyle => t.push(STYLE_BASE + self.arg0),
            EditOp::LocalStyle | EditOp::Remove => t.push(SELECTOR_BASE + self.arg0),
        }
        if let Some(c) = self.arg1 {
            t.push(COLOR_BASE + c);
        }
        t
    }

    /// Parses `remove:circle`, `local_style:square:red`, `global_style:sepia`
    /// or a numeric triple such as `1,0,3` / `2,3,-`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.contains(',') {
            let parts: Vec<&str> = s.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(RfdmError::InvalidPrompt(format!("expected 3 ids in `{s}`")));
            }
            let num = |p: &str| {
                p.parse::<u32>()
                    .map_err(|_| RfdmError::InvalidPrompt(format!("bad id `{p}` in `{s}`")))
            };
            let arg1 = match parts[2] {
                "-" | "" | "null" => None,
                p => Some(num(p)?),
            };
            return Self::from_ids((num(parts[0])?, num(parts[1])?, arg1));
        }
        let parts: Vec<&str> = s.split(':').collect();
        let lookup = |names: &[&str], v: &str| {
            names
                .iter()
                .position(|n| *n == v)
                .map(|i| i as u32)
                .ok_or_else(|| RfdmError::InvalidPrompt(format!("unknown name `{v}` in `{s}`")))
        };
        let selectors = ["circle", "square", "triangle", "all"];
        let p = match parts.as_slice() {
            ["global_style", m] => Self::global_style(lookup(&STYLE_NAMES, m)?),
            ["local_style", sel, c] => Self {
                op: EditOp::LocalStyle,
                arg0: lookup(&selectors, sel)?,
                arg1: Some(lookup(&COLOR_NAMES, c)?),
            },
            ["remove", sel] => Self {
                op: EditOp::Remove,
                arg0: lookup(&selectors, sel)?,
                arg1: None,
            },
            _ => return Err(RfdmError::InvalidPrompt(format!("cannot parse prompt `{s}`"))),
        };
        p.validate()?;
        Ok(p)
    }
}

impl std::fmt::Display for PromptSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.op {
            EditOp::GlobalStyle => write!(f, "global_style:{}", STYLE_NAMES[self.arg0 as usize]),
            EditOp::LocalStyle => write!(
                f,
                "local_style:{}:{}",
                ShapeSelector::from_id(self.arg0).map_or("?", |s| s.name()),
                COLOR_NAMES[self.arg1.unwrap_or(0) as usize]
            ),
            EditOp::Remove => write!(
                f,
                "remove:{}",
                ShapeSelector::from_id(self.arg0).map_or("?", |s| s.name())
            ),
        }
    }
}
