//! Synthetic data generators.

mod event;
mod planted;

pub use event::{
    synth_event, synth_regions, write_edges, write_region_table, write_traces, SynthError,
    SynthEvent, SynthSpec,
};
pub use planted::{cosine, match_topics, planted_phi, planted_topics, PlantedCorpus, PlantedSpec};
