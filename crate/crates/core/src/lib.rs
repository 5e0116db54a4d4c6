pub mod diffvine;
pub mod error;
pub mod estimate;
pub mod io;
pub mod optim;
pub mod paircop;
pub mod seed;
pub mod simstudy;
pub mod special;
pub mod validate;
pub mod vinemodel;
pub mod vinestruct;

pub use error::{Error, Result};
pub use paircop::{FamilyTag, PairCopula, Side};
pub use vinestruct::{RVineStructure, StructureKind};
pub use vinemodel::{SampleMatrix, ThetaModel, ThetaModelSpec, VineModel};
