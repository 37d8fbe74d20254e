//! Separation analysis, distance-based certification, small networks with
//! manual gradients, Linf attacks, empirical Lipschitz estimation and
//! robust training objectives.

pub mod attacks;
pub mod classifier;
pub mod data;
pub mod error;
pub mod lipschitz;
pub mod math;
pub mod nn;
pub mod report;
pub mod separation;
pub mod training;

pub use attacks::{adv_accuracy, clean_accuracy, AttackConfig, AttackKind, AttackOutcome};
pub use classifier::{Certificate, DistanceClassifier};
pub use data::{Dataset, Features};
pub use error::{Error, Result};
pub use lipschitz::{empirical_lipschitz, LipschitzConfig, LipschitzEstimate};
pub use math::{Metric, RandomStream};
pub use nn::{Activation, LayerSpec, Network};
pub use separation::{SeparationMode, SeparationRecord, SeparationReport};
pub use training::{EpochRecord, ExperimentReport, TrainConfig, TrainMethod};
