//! Fitted dual solutions built from policy traces, and their verification.

mod build;
mod verify;


use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{ItemId, RequestId};
use crate::pwl::PiecewiseLinear;
use crate::ratio::Ratio;

pub use build::{
    build_dual, common_global_charge, local_charge, partition_lr, unique_global_charge,
};
pub use verify::{verify, CertReport, Check, Witness};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualVariant {
    Single,
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalCase {
    Mature,
    Premature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChargeKind {
    Single,
    Local(LocalCase),
    UniqueGlobal,
    CommonGlobal,
}

impl ChargeKind {
    pub fn is_local(self) -> bool {
        matches!(self, ChargeKind::Local(_))
    }

    pub fn is_global(self) -> bool {
        matches!(self, ChargeKind::UniqueGlobal | ChargeKind::CommonGlobal)
    }
}

/// Which branch of the second step a dual assignment took.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentCase {
    /// Premature items of the previous service are charged locally.
    PrematureLocal,
    /// Surplus is charged through global charges.
    Global,
}

/// Interval in which a charge's β and γ may be nonzero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub lo: Ratio,
    pub lo_closed: bool,
    pub hi: Ratio,
    pub hi_closed: bool,
}

impl Window {
    pub fn contains(&self, t: &Ratio) -> bool {
        let above = if self.lo_closed {
            t >= &self.lo
        } else {
            t > &self.lo
        };
        let below = if self.hi_closed {
            t <= &self.hi
        } else {
            t < &self.hi
        };
        above && below
    }
}

/// Quantities a charge's case analysis was based on.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChargeContext {
    pub h_max: Ratio,
    pub b_max: Ratio,
    pub h_sum: Ratio,
    pub b_sum: Ratio,
    /// Surplus of the shared mature items (common global charges only).
    pub sb: Option<Ratio>,
    /// Budget left for the backlog side after holding (local charges, holding-side case).
    pub x: Option<Ratio>,
    pub nu: Ratio,
    /// Holding-side bound; zero when no holding phase feeds the charge.
    pub holding_budget: Ratio,
}

/// One charging step with its unweighted assignment and effective weight.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargeRecord {
    pub kind: ChargeKind,
    /// Dual assignment that performed the charge.
    pub assignment: usize,
    /// Service whose sets were charged.
    pub service: usize,
    pub item: Option<ItemId>,
    pub weight: Ratio,
    pub alpha: BTreeMap<RequestId, Ratio>,
    pub beta: BTreeMap<RequestId, PiecewiseLinear>,
    pub gamma: BTreeMap<ItemId, PiecewiseLinear>,
    pub window: Window,
    pub context: ChargeContext,
    /// Every request in the charge's backlog and holding sets.
    pub members: Vec<RequestId>,
    /// Value the unweighted α must sum to (exactly for local and single
    /// charges, at least for common global charges).
    pub target: Ratio,
    /// Latest-arriving request of a mature local charge and its cap.
    pub rho_star: Option<(RequestId, Ratio)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChargeCount {
    pub local: u32,
    pub global: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DualSolution {
    pub variant: DualVariant,
    pub alpha: BTreeMap<RequestId, Ratio>,
    pub beta: BTreeMap<RequestId, PiecewiseLinear>,
    pub gamma: BTreeMap<ItemId, PiecewiseLinear>,
    pub objective: Ratio,
    pub charges: BTreeMap<RequestId, ChargeCount>,
    /// α increase of each dual assignment, in service order.
    pub increase: Vec<Ratio>,
    pub cases: Vec<AssignmentCase>,
    pub log: Vec<ChargeRecord>,
}

impl DualSolution {
    pub fn alpha_of(&self, id: RequestId) -> Ratio {
        self.alpha.get(&id).cloned().unwrap_or_default()
    }

    pub fn beta_of(&self, id: RequestId) -> PiecewiseLinear {
        self.beta.get(&id).cloned().unwrap_or_default()
    }
}
