//! Trusted-side anonymization layers for GUI agents.
//!
//! The crate is organised by layer:
//!
//! * [`model`]: shared domain types, the session-scoped mapping table and the
//!   session store every other layer consults.
//! * [`detect`]: hybrid PII detection (external NER adapter + regex rules),
//!   XML structural exemption and instruction-driven whitelisting.
//! * [`transform`]: deterministic placeholders, Virtual UI synthesis over
//!   instruction / XML / OCR inputs, fuzzy OCR alignment and mask rendering.
//! * [`proxy`]: parsing, validation and resolution of agent commands, plus the
//!   device executor interface.
//! * [`gatekeeper`]: policy-checked bounded computation over raw values.
//!
//! Raw values live only inside [`model::SessionState`]. Anything a remote
//! agent may observe is produced by [`transform`] (Virtual UI, masked
//! instruction), [`proxy`] (action acknowledgements) or [`gatekeeper`]
//! (bounded results).

pub mod detect;
pub mod gatekeeper;
pub mod model;
pub mod proxy;
pub mod transform;

pub use detect::{DetectError, DetectorConfig, EntitySpan, NerAdapter, Source};
pub use model::{
    BoundingBox, EntityType, MappingTable, Placeholder, SessionConfig, SessionState, SessionStore,
};
pub use transform::{MaskRegion, OcrToken, TransformError, UiElement, VirtualUi};

/// Stable machine-readable error codes shared by the CLI and the HTTP service.
pub trait ErrorCode {
    fn code(&self) -> &'static str;
}
