use std::fmt;

use serde::{Deserialize, Serialize};

/// The rhetorical device a stage is about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    Hyperbole,
    Metaphor,
}

impl Device {
    pub const BOTH: [Device; 2] = [Device::Hyperbole, Device::Metaphor];

    /// The device whose analysis informs this one's decision.
    pub fn counterpart(self) -> Device {
        match self {
            Device::Hyperbole => Device::Metaphor,
            Device::Metaphor => Device::Hyperbole,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Device::Hyperbole => "hyperbole",
            Device::Metaphor => "metaphor",
        }
    }
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
