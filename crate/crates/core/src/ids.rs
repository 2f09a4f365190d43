//! Small shared identifier and time types.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Simulation time in ticks since epoch 0. The tick length in milliseconds is
/// set by the scenario (default 100 ms, so 600 ticks per minute).
pub type Tick = u64;

macro_rules! string_id {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(
    /// A device in the topology ("g0", "r3", "e1", "n17", ...).
    DeviceId
);
string_id!(
    /// A sensor kind such as "temperature" or "pm25".
    SensorKind
);
string_id!(
    /// An actuator kind such as "lane_sign".
    ActuatorKind
);
string_id!(
    /// Owner of submitted functions; plain opaque string, no identity system.
    UserId
);
string_id!(
    /// Identifier of a submitted function.
    FunctionId
);
