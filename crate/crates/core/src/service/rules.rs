use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::gestures::GestureClass;

pub const DEFAULT_RULES: &str = include_str!("rules.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    #[default]
    None,
    MoveLeft,
    MoveRight,
    JumpLow,
    JumpHigh,
    ActionA,
}

impl Action {
    pub fn label(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::MoveLeft => "move-left",
            Self::MoveRight => "move-right",
            Self::JumpLow => "jump-low",
            Self::JumpHigh => "jump-high",
            Self::ActionA => "action-a",
        }
    }
}

/// What a tick decided, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmiAction {
    pub action: Action,
    /// Gesture that fired a gesture rule.
    pub gesture: Option<GestureClass>,
    /// Index of the matching rule.
    pub rule: Option<usize>,
    /// In [0, 1]; touch rules fire with 1.
    pub confidence: f64,
}

impl HmiAction {
    pub fn none() -> Self {
        Self {
            action: Action::None,
            gesture: None,
            rule: None,
            confidence: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trigger {
    Held,
    Release,
    Gesture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub action: Action,
    pub trigger: Trigger,
    #[serde(default = "one")]
    pub min_ticks: u64,
    pub max_ticks: Option<u64>,
    pub x: Option<[f64; 2]>,
    pub y: Option<[f64; 2]>,
    pub gesture: Option<GestureClass>,
    #[serde(default)]
    pub min_confidence: f64,
    #[serde(default)]
    pub cooldown_ticks: u64,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    pub version: u32,
    pub rule: Vec<Rule>,
}

/// A touch as the rules see it on one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TouchState {
    pub position: Point2,
    pub ticks: u64,
}

impl Rule {
    fn touch_matches(&self, t: &TouchState) -> bool {
        let within = |r: Option<[f64; 2]>, v: f64| r.is_none_or(|[lo, hi]| v >= lo && v <= hi);
        t.ticks >= self.min_ticks
            && self.max_ticks.is_none_or(|m| t.ticks <= m)
            && within(self.x, t.position.x)
            && within(self.y, t.position.y)
    }
}

impl RuleTable {
    pub fn bundled() -> Self {
        Self::parse(DEFAULT_RULES).expect("bundled rule table is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let t: Self = toml::from_str(text).map_err(|e| Error::Format {
            what: "rule table",
            detail: e.to_string(),
        })?;
        for (i, r) in t.rule.iter().enumerate() {
            if r.trigger == Trigger::Gesture && r.gesture.is_none() {
                return Err(Error::Config(format!("rule {i}: gesture trigger without a gesture")));
            }
            if !(0.0..=1.0).contains(&r.min_confidence) {
                return Err(Error::Config(format!("rule {i}: confidence outside [0, 1]")));
            }
        }
        Ok(t)
    }
}

/// Rule evaluation with per-rule cooldown memory.
#[derive(Debug, Clone)]
pub struct RuleEngine {
    pub table: RuleTable,
    last_fired: Vec<Option<u64>>,
}

impl RuleEngine {
    pub fn new(table: RuleTable) -> Self {
        let n = table.rule.len();
        Self {
            table,
            last_fired: vec![None; n],
        }
    }

    pub fn evaluate(
        &mut self,
        tick: u64,
        held: &[TouchState],
        released: &[TouchState],
        gesture: Option<(GestureClass, f64)>,
    ) -> HmiAction {
        for (i, r) in self.table.rule.iter().enumerate() {
            if let Some(last) = self.last_fired[i] {
                if tick < last + r.cooldown_ticks.max(1) {
                    continue;
                }
            }
            let hit = match r.trigger {
                Trigger::Held => held.iter().any(|t| r.touch_matches(t)).then_some((None, 1.0)),
                Trigger::Release => released.iter().any(|t| r.touch_matches(t)).then_some((None, 1.0)),
                Trigger::Gesture => gesture
                    .filter(|&(g, p)| Some(g) == r.gesture && p >= r.min_confidence)
                    .map(|(g, p)| (Some(g), p)),
            };
            if let Some((gesture, confidence)) = hit {
                self.last_fired[i] = Some(tick);
                return HmiAction {
                    action: r.action,
                    gesture,
                    rule: Some(i),
                    confidence,
                };
            }
        }
        HmiAction::none()
    }
}
