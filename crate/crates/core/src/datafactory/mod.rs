//! Synthetic dataset generation from MIDI corpora.

pub mod annotate;
pub mod balance;
pub mod corpus;
pub mod manifest;
pub mod render;
pub mod schema;
pub mod splits;
pub mod toy_corpus;

pub use annotate::{beat_annotations, extract_annotations};
pub use balance::{balance_corpus, write_remapped_midi};
pub use corpus::{balance_dataset, build_dataset, list_midi, split_dataset, BuildConfig, RenderMode, MANIFEST_FILE};
pub use manifest::{filter_tracks, DatasetManifest, Fold, SwapLogEntry, TrackRecord};
pub use render::ExternalRenderer;
pub use schema::{default_swap_rules, map_gm_label, GmMap, LabelSchema, SchemaName, SwapRule};
pub use splits::{default_soundfont_groups, make_splits};
pub use toy_corpus::{generate_song, write_toy_corpus, ToyStyle};
