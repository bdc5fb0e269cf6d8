//! Shared domain types, the mapping table and session state.

mod entity;
mod mapping;
mod placeholder;
mod session;
mod store;

pub use entity::{normalize, BoundingBox, BoundsError, EntityType, EntityTypeError};
pub use mapping::{MappingEntry, MappingError, MappingTable};
pub use placeholder::{
    make_placeholder, make_salted_placeholder, scan_placeholders, Placeholder, PlaceholderError,
    PlaceholderMatch, SUFFIX_LEN,
};
pub use session::{
    Ablation, ConfigError, DateLocale, ModalityCounters, NumberLocale, PolicyConfig, ScreenSize,
    SessionConfig, SessionSnapshot, SessionState, SessionStats, Whitelist, SNAPSHOT_VERSION,
};
pub use store::{create_session, SessionStore, SharedSession};
