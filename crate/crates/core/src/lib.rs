//! Black-box adversarial attacks on video classifiers with drifting text
//! overlays ("bullet-screen comments").
//!
//! The pipeline renders text into per-frame occlusion regions ([`overlay`]),
//! scores candidates against a query-counting [`oracle`] ([`rewards`]), and
//! searches placements and transparencies with a recurrent policy ([`agent`])
//! or the baselines in [`search`]. [`orchestrator`] ties the pieces together.

pub mod agent;
pub mod cli;
pub mod oracle;
pub mod orchestrator;
pub mod overlay;
pub mod rewards;
pub mod saliency;
pub mod search;
pub mod tensor_io;
pub mod toy;
