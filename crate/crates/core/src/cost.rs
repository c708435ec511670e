//! Delay costs and schedule evaluation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{JrpError, Result};
use crate::model::{Extended, Instance, Request, Schedule};
use crate::ratio::Ratio;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub service_cost: Ratio,
    pub item_cost: Ratio,
    pub backlog_cost: Ratio,
    pub holding_cost: Ratio,
    pub total: Ratio,
}

impl CostBreakdown {
    fn finish(mut self) -> Self {
        self.total = &self.service_cost + &self.item_cost + &self.backlog_cost + &self.holding_cost;
        self
    }

    fn absorb(&mut self, other: &CostBreakdown) {
        self.service_cost += &other.service_cost;
        self.item_cost += &other.item_cost;
        self.backlog_cost += &other.backlog_cost;
        self.holding_cost += &other.holding_cost;
        self.total += &other.total;
    }
}

/// Holding cost `h·(d−t)` when served early, backlog cost `b·(t−d)` when late.
pub fn delay_cost(instance: &Instance, request: &Request, t: &Ratio) -> Result<Ratio> {
    if t < &request.arrival {
        return Err(JrpError::InfeasibleAssignment {
            request: request.id,
            time: t.clone(),
            reason: "served before arrival",
        });
    }
    if t <= &request.deadline {
        return Ok(instance.hold_rate_of(request) * (&request.deadline - t));
    }
    match instance.backlog_rate_of(request) {
        Extended::Finite(b) => Ok(b * (t - &request.deadline)),
        Extended::Infinite => Err(JrpError::InfeasibleAssignment {
            request: request.id,
            time: t.clone(),
            reason: "served after a hard deadline",
        }),
    }
}

/// Cost of each service in order. Items are charged only when the service
/// satisfies at least one of their requests.
pub fn evaluate_services(instance: &Instance, schedule: &Schedule) -> Result<Vec<CostBreakdown>> {
    schedule.validate(instance)?;
    let mut per: Vec<CostBreakdown> = schedule
        .services
        .iter()
        .map(|_| CostBreakdown {
            service_cost: instance.root_cost.clone(),
            ..CostBreakdown::default()
        })
        .collect();
    let mut charged: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); per.len()];
    for req in &instance.requests {
        let a = &schedule.assignment[&req.id];
        let t = &schedule.services[a.service].time;
        let cost = delay_cost(instance, req, t)?;
        let slot = &mut per[a.service];
        if t <= &req.deadline {
            slot.holding_cost += cost;
        } else {
            slot.backlog_cost += cost;
        }
        if charged[a.service].insert(req.item) {
            slot.item_cost += instance.item_cost(req.item);
        }
    }
    Ok(per.into_iter().map(CostBreakdown::finish).collect())
}

pub fn evaluate_schedule(instance: &Instance, schedule: &Schedule) -> Result<CostBreakdown> {
    let mut total = CostBreakdown::default();
    for part in evaluate_services(instance, schedule)? {
        total.absorb(&part);
    }
    Ok(total)
}
