//! Personalized music-emotion classification by committee active learning.
//!
//! A committee of boosted tree classifiers is pretrained on rated songs,
//! then adapted to one listener through a few rounds of consensus-entropy
//! querying. The personalized committee is audited by ranking unseen excerpts
//! on their probability of inducing Q2 (tension, anger, fear) and counting
//! how the top of that ranking splits across the two song sources.

pub mod active_loop;
pub mod analysis;
pub mod committee;
pub mod error;
pub mod features;
pub mod gbt;
pub mod io;
pub mod oracle;
pub mod simulate;
pub mod synth;
pub mod types;

pub use active_loop::{
    LabelSubmission, LoopConfig, PersonalizedModel, Session, SessionState, SessionStore, UserProfile, VoteIntent,
};
pub use analysis::{build_report, BiasReport, RankedExcerpt, ReportFormat};
pub use committee::{consensus_entropy, Committee, PretrainConfig, Pretrained};
pub use error::{Error, Result, Violation};
pub use features::{aggregate, apply_scaler, first_order_delta, fit_scaler, DescriptorMatrix, FeatureVector, Scaler};
pub use gbt::{train, BoostedEnsemble, TrainParams, TreeNode};
pub use oracle::{Alignment, OracleProfile};
pub use types::{
    quadrant_from_av, Annotation, AvRecord, Excerpt, ExcerptMetadata, Quadrant, SourceType, SourceTypeNames,
};
