//! Online joint replenishment with holding and backlog costs: exact
//! policies, a brute-force offline optimum and a dual-fitting certifier.

pub mod accum;
pub mod cost;
pub mod dual;
pub mod error;
pub mod generators;
pub mod io;
pub mod model;
pub mod oracle;
pub mod policy_multi;
pub mod policy_single;
pub mod pwl;
pub mod ratio;

pub use cost::{delay_cost, evaluate_schedule, evaluate_services, CostBreakdown};
pub use error::{JrpError, Result};
pub use io::{parse_instance, serialize_instance};
pub use model::{
    Assignment, Extended, Instance, ItemId, Phase, PrematureContribution, Request, RequestId,
    Schedule, ServiceRecord,
};
pub use pwl::PiecewiseLinear;
pub use ratio::{r, Ratio};
