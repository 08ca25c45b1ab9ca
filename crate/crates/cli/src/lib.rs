//! Pipeline library behind the `mulan` binary: run configuration, the
//! training loop, and the synth/train/embed/retrieve/eval commands.

pub mod commands;
pub mod config;
pub mod train;

pub use commands::{
    cmd_embed, cmd_eval, cmd_retrieve, cmd_synth, cmd_synth_with_dsp, cmd_train, load_model,
    EmbedModality, TaskKind,
};
pub use config::RunConfig;
