//! Zone-based pebble-bed core simulator.

pub mod calibration;
pub mod controls;
pub mod depletion;
pub mod grid;
pub mod inventory;
pub mod kernel;
pub mod state;

pub use controls::{ControlKind, ControlVector};
pub use grid::{GridSpec, ZoneGrid};
pub use inventory::{BurnupGroup, PebbleCount};
pub use kernel::{KernelConstants, MeshTally, TallyNoise};
pub use state::{compute_reactivity, CoreSim, CoreState, SimConfig, StepResult};
