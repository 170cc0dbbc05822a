//! The 33-keypoint body topology and the Coco-17 evaluation subset.

use std::fmt;

use crate::error::{Error, Result};

pub const NUM_KEYPOINTS: usize = 33;

const NAMES: [&str; NUM_KEYPOINTS] = [
    "Nose",
    "Left eye inner",
    "Left eye",
    "Left eye outer",
    "Right eye inner",
    "Right eye",
    "Right eye outer",
    "Left ear",
    "Right ear",
    "Mouth left",
    "Mouth right",
    "Left shoulder",
    "Right shoulder",
    "Left elbow",
    "Right elbow",
    "Left wrist",
    "Right wrist",
    "Left pinky #1 knuckle",
    "Right pinky #1 knuckle",
    "Left index #1 knuckle",
    "Right index #1 knuckle",
    "Left thumb #2 knuckle",
    "Right thumb #2 knuckle",
    "Left hip",
    "Right hip",
    "Left knee",
    "Right knee",
    "Left ankle",
    "Right ankle",
    "Left heel",
    "Right heel",
    "Left foot index",
    "Right foot index",
];

/// Index of a body keypoint, `0..=32`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeypointId(u8);

impl KeypointId {
    pub const NOSE: Self = Self(0);
    pub const LEFT_EYE: Self = Self(2);
    pub const RIGHT_EYE: Self = Self(5);
    pub const LEFT_EAR: Self = Self(7);
    pub const RIGHT_EAR: Self = Self(8);
    pub const MOUTH_LEFT: Self = Self(9);
    pub const MOUTH_RIGHT: Self = Self(10);
    pub const LEFT_SHOULDER: Self = Self(11);
    pub const RIGHT_SHOULDER: Self = Self(12);
    pub const LEFT_ELBOW: Self = Self(13);
    pub const RIGHT_ELBOW: Self = Self(14);
    pub const LEFT_WRIST: Self = Self(15);
    pub const RIGHT_WRIST: Self = Self(16);
    pub const LEFT_HIP: Self = Self(23);
    pub const RIGHT_HIP: Self = Self(24);
    pub const LEFT_KNEE: Self = Self(25);
    pub const RIGHT_KNEE: Self = Self(26);
    pub const LEFT_ANKLE: Self = Self(27);
    pub const RIGHT_ANKLE: Self = Self(28);

    pub fn new(index: usize) -> Result<Self> {
        if index < NUM_KEYPOINTS {
            Ok(Self(index as u8))
        } else {
            Err(Error::InvalidKeypoint(index))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        NAMES[self.index()]
    }

    pub fn from_name(name: &str) -> Result<Self> {
        NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| Self(i as u8))
            .ok_or_else(|| Error::UnknownKeypointName(name.to_string()))
    }

    /// The same body part on the opposite side; the nose maps to itself.
    pub fn mirror(self) -> Self {
        let name = self.name();
        if let Some(rest) = name.strip_prefix("Left ") {
            Self::from_name(&format!("Right {rest}")).expect("topology is left/right symmetric")
        } else if let Some(rest) = name.strip_prefix("Right ") {
            Self::from_name(&format!("Left {rest}")).expect("topology is left/right symmetric")
        } else if name == "Mouth left" {
            Self::MOUTH_RIGHT
        } else if name == "Mouth right" {
            Self::MOUTH_LEFT
        } else {
            self
        }
    }

    pub fn all() -> impl Iterator<Item = KeypointId> {
        (0..NUM_KEYPOINTS as u8).map(KeypointId)
    }
}

impl fmt::Display for KeypointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Name of keypoint `index`.
pub fn keypoint_name(index: usize) -> Result<&'static str> {
    KeypointId::new(index).map(KeypointId::name)
}

/// A named, ordered selection of keypoints.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopologySubset {
    pub name: String,
    pub members: Vec<KeypointId>,
}

impl TopologySubset {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn full() -> Self {
        Self {
            name: "full-33".into(),
            members: KeypointId::all().collect(),
        }
    }
}

impl Default for TopologySubset {
    fn default() -> Self {
        coco17_subset()
    }
}

/// Coco keypoint names in canonical Coco order, each paired with the
/// matching keypoint of this topology. Coco's eyes map to the plain
/// "Left eye"/"Right eye" points.
pub const COCO17: [(&str, KeypointId); 17] = [
    ("nose", KeypointId::NOSE),
    ("left_eye", KeypointId::LEFT_EYE),
    ("right_eye", KeypointId::RIGHT_EYE),
    ("left_ear", KeypointId::LEFT_EAR),
    ("right_ear", KeypointId::RIGHT_EAR),
    ("left_shoulder", KeypointId::LEFT_SHOULDER),
    ("right_shoulder", KeypointId::RIGHT_SHOULDER),
    ("left_elbow", KeypointId::LEFT_ELBOW),
    ("right_elbow", KeypointId::RIGHT_ELBOW),
    ("left_wrist", KeypointId::LEFT_WRIST),
    ("right_wrist", KeypointId::RIGHT_WRIST),
    ("left_hip", KeypointId::LEFT_HIP),
    ("right_hip", KeypointId::RIGHT_HIP),
    ("left_knee", KeypointId::LEFT_KNEE),
    ("right_knee", KeypointId::RIGHT_KNEE),
    ("left_ankle", KeypointId::LEFT_ANKLE),
    ("right_ankle", KeypointId::RIGHT_ANKLE),
];

pub fn coco17_subset() -> TopologySubset {
    TopologySubset {
        name: "coco-17".into(),
        members: COCO17.iter().map(|(_, id)| *id).collect(),
    }
}

/// Non-normative skeleton edges for drawing: face contour, torso rectangle, limbs, hands and feet.
pub const SKELETON_EDGES: [(u8, u8); 35] = [
    // face
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 7),
    (0, 4),
    (4, 5),
    (5, 6),
    (6, 8),
    (9, 10),
    // torso
    (11, 12),
    (12, 24),
    (24, 23),
    (23, 11),
    // arms
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
    // hands
    (15, 17),
    (15, 19),
    (15, 21),
    (17, 19),
    (16, 18),
    (16, 20),
    (16, 22),
    (18, 20),
    // legs
    (23, 25),
    (25, 27),
    (24, 26),
    (26, 28),
    // feet
    (27, 29),
    (29, 31),
    (27, 31),
    (28, 30),
    (30, 32),
    (28, 32),
];

/// `index,name` CSV of the whole topology, header included.
pub fn topology_csv() -> String {
    let mut out = String::from("index,name\n");
    for id in KeypointId::all() {
        out.push_str(&format!("{},{}\n", id.index(), id.name()));
    }
    out
}
