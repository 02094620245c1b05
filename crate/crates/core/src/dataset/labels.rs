use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Action performed with the tool. The discriminant is the canonical class
/// index used for one-hot encoding and confusion-matrix axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Push = 0,
    Pull = 1,
    LeftToRight = 2,
    RightToLeft = 3,
}

/// Tool used to move the object, in canonical class order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tool {
    Boomerang = 0,
    Ruler = 1,
    Slingshot = 2,
    Spatula = 3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraView {
    Left,
    Center,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initial,
    Final,
}

/// One of the six (camera, phase) image slots of a sample. Ordering is
/// cameras left, center, right, then phase initial, final.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ViewKey {
    pub camera: CameraView,
    pub phase: Phase,
}

pub const NUM_ACTIONS: usize = 4;
pub const NUM_TOOLS: usize = 4;
pub const NUM_JOINT: usize = NUM_TOOLS * NUM_ACTIONS;

macro_rules! label_enum_impl {
    ($ty:ident, [$($variant:ident => $name:literal),+ $(,)?]) => {
        impl $ty {
            pub const ALL: [$ty; 4] = [$($ty::$variant),+];

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(index: usize) -> Option<Self> {
                Self::ALL.get(index).copied()
            }

            pub fn name(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(Error::Config(format!(
                        "unknown {} `{}`",
                        stringify!($ty).to_lowercase(),
                        other
                    ))),
                }
            }
        }
    };
}

label_enum_impl!(Action, [
    Push => "push",
    Pull => "pull",
    LeftToRight => "left_to_right",
    RightToLeft => "right_to_left",
]);

label_enum_impl!(Tool, [
    Boomerang => "boomerang",
    Ruler => "ruler",
    Slingshot => "slingshot",
    Spatula => "spatula",
]);

impl CameraView {
    pub const ALL: [CameraView; 3] = [CameraView::Left, CameraView::Center, CameraView::Right];

    pub fn name(self) -> &'static str {
        match self {
            CameraView::Left => "left",
            CameraView::Center => "center",
            CameraView::Right => "right",
        }
    }
}

impl Phase {
    pub const ALL: [Phase; 2] = [Phase::Initial, Phase::Final];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Initial => "initial",
            Phase::Final => "final",
        }
    }
}

impl ViewKey {
    pub const ALL: [ViewKey; 6] = [
        ViewKey::new(CameraView::Left, Phase::Initial),
        ViewKey::new(CameraView::Left, Phase::Final),
        ViewKey::new(CameraView::Center, Phase::Initial),
        ViewKey::new(CameraView::Center, Phase::Final),
        ViewKey::new(CameraView::Right, Phase::Initial),
        ViewKey::new(CameraView::Right, Phase::Final),
    ];

    pub const fn new(camera: CameraView, phase: Phase) -> Self {
        ViewKey { camera, phase }
    }

    /// Manifest field name, e.g. `center_initial`.
    pub fn field_name(self) -> String {
        format!("{}_{}", self.camera.name(), self.phase.name())
    }

    pub fn parse_field(name: &str) -> Option<Self> {
        ViewKey::ALL.into_iter().find(|k| k.field_name() == name)
    }
}

impl fmt::Display for ViewKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.camera.name(), self.phase.name())
    }
}

/// One-hot vector for `action` at its canonical index.
pub fn encode_action(action: Action) -> [u8; NUM_ACTIONS] {
    let mut v = [0u8; NUM_ACTIONS];
    v[action.index()] = 1;
    v
}

/// Inverse of [`encode_action`]; `None` unless the vector is a valid one-hot.
pub fn decode_action(one_hot: &[u8]) -> Option<Action> {
    if one_hot.len() != NUM_ACTIONS || one_hot.iter().map(|&v| v as usize).sum::<usize>() != 1 {
        return None;
    }
    one_hot
        .iter()
        .position(|&v| v == 1)
        .and_then(Action::from_index)
}

/// Joint class index over all tool/action combinations: `tool * 4 + action`.
pub fn joint_index(tool: Tool, action: Action) -> usize {
    tool.index() * NUM_ACTIONS + action.index()
}

pub fn split_joint_index(joint: usize) -> (usize, usize) {
    (joint / NUM_ACTIONS, joint % NUM_ACTIONS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_is_canonical() {
        assert_eq!(encode_action(Action::Push), [1, 0, 0, 0]);
        assert_eq!(encode_action(Action::RightToLeft), [0, 0, 0, 1]);
        for a in Action::ALL {
            let v = encode_action(a);
            assert_eq!(v.iter().map(|&x| x as usize).sum::<usize>(), 1);
            assert_eq!(v.iter().position(|&x| x == 1), Some(a.index()));
            assert_eq!(decode_action(&v), Some(a));
        }
        assert_eq!(decode_action(&[1, 1, 0, 0]), None);
        assert_eq!(decode_action(&[0, 0, 0]), None);
    }

    #[test]
    fn joint_index_arithmetic() {
        assert_eq!(joint_index(Tool::Ruler, Action::Pull), 5);
        for t in Tool::ALL {
            for a in Action::ALL {
                assert_eq!(split_joint_index(joint_index(t, a)), (t.index(), a.index()));
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for a in Action::ALL {
            assert_eq!(a.name().parse::<Action>().unwrap(), a);
        }
        for t in Tool::ALL {
            assert_eq!(t.name().parse::<Tool>().unwrap(), t);
        }
        assert!("hammer".parse::<Tool>().is_err());
        for k in ViewKey::ALL {
            assert_eq!(ViewKey::parse_field(&k.field_name()), Some(k));
        }
        let mut sorted = ViewKey::ALL;
        sorted.sort();
        assert_eq!(sorted, ViewKey::ALL);
    }
}
