//! Generator topologies, attention gate, discriminators and their pairing.

pub mod checkpoint;
mod discriminator;
mod gan;
mod gate;
mod generator;

pub use checkpoint::{Checkpoint, SavedModel};
pub use discriminator::{Discriminator, DiscriminatorDesign, DiscriminatorSpec};
pub use gan::{combined_network, GanModel};
pub use gate::{AttentionGate, GateOutput};
pub use generator::{
    check_input_size, Generator, GeneratorOutput, GeneratorSpec, Topology, DEPTH, SIZE_MULTIPLE,
};
