//! Instances, requests and schedules.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{JrpError, Result};
use crate::ratio::Ratio;

pub type RequestId = u64;
pub type ItemId = usize;

/// A rational or the tagged value `inf`. Finite values order below `inf`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Extended {
    Finite(Ratio),
    Infinite,
}

impl Extended {
    pub fn finite(&self) -> Option<&Ratio> {
        match self {
            Extended::Finite(r) => Some(r),
            Extended::Infinite => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Extended::Infinite)
    }
}

impl PartialOrd for Extended {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Extended {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Extended::Finite(a), Extended::Finite(b)) => a.cmp(b),
            (Extended::Finite(_), Extended::Infinite) => Ordering::Less,
            (Extended::Infinite, Extended::Finite(_)) => Ordering::Greater,
            (Extended::Infinite, Extended::Infinite) => Ordering::Equal,
        }
    }
}

impl fmt::Display for Extended {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extended::Finite(r) => write!(f, "{r}"),
            Extended::Infinite => f.write_str("inf"),
        }
    }
}

impl fmt::Debug for Extended {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Serialize for Extended {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Extended {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s.trim() == "inf" {
            Ok(Extended::Infinite)
        } else {
            s.parse()
                .map(Extended::Finite)
                .map_err(serde::de::Error::custom)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub item: ItemId,
    pub arrival: Ratio,
    pub deadline: Ratio,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hold_rate: Option<Ratio>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backlog_rate: Option<Ratio>,
}

impl Request {
    pub fn new(id: RequestId, item: ItemId, arrival: Ratio, deadline: Ratio) -> Self {
        Request {
            id,
            item,
            arrival,
            deadline,
            hold_rate: None,
            backlog_rate: None,
        }
    }

    pub fn with_rates(mut self, hold: Ratio, backlog: Ratio) -> Self {
        self.hold_rate = Some(hold);
        self.backlog_rate = Some(backlog);
        self
    }

    /// Order used by every holding scan: deadline, then id.
    pub fn deadline_key(&self) -> (&Ratio, RequestId) {
        (&self.deadline, self.id)
    }

    /// Order used by partitioning and charge distribution: arrival, then id.
    pub fn arrival_key(&self) -> (&Ratio, RequestId) {
        (&self.arrival, self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub root_cost: Ratio,
    pub item_costs: Vec<Ratio>,
    pub hold_rate: Ratio,
    pub backlog_rate: Extended,
    pub nonuniform: bool,
    pub requests: Vec<Request>,
}

impl Instance {
    pub fn item_count(&self) -> usize {
        self.item_costs.len()
    }

    /// Single-item service cost `c(r) + c(v)`.
    pub fn service_cost(&self) -> Ratio {
        let items: Ratio = self.item_costs.iter().sum();
        &self.root_cost + &items
    }

    pub fn item_cost(&self, item: ItemId) -> &Ratio {
        &self.item_costs[item]
    }

    pub fn hold_rate_of(&self, req: &Request) -> Ratio {
        match (&req.hold_rate, self.nonuniform) {
            (Some(h), true) => h.clone(),
            _ => self.hold_rate.clone(),
        }
    }

    pub fn backlog_rate_of(&self, req: &Request) -> Extended {
        match (&req.backlog_rate, self.nonuniform) {
            (Some(b), true) => Extended::Finite(b.clone()),
            _ => self.backlog_rate.clone(),
        }
    }

    /// Finite uniform backlog rate, or an error naming `what`.
    pub fn finite_backlog(&self, what: &str) -> Result<&Ratio> {
        self.backlog_rate
            .finite()
            .ok_or_else(|| JrpError::Usage(format!("{what} requires a finite backlog rate")))
    }

    pub fn request(&self, id: RequestId) -> Option<&Request> {
        self.requests.iter().find(|r| r.id == id)
    }

    pub fn request_index(&self) -> BTreeMap<RequestId, &Request> {
        self.requests.iter().map(|r| (r.id, r)).collect()
    }

    /// Checks every instance invariant. On failure returns the message and,
    /// when one request is at fault, its id.
    pub fn check(&self) -> std::result::Result<(), (Option<RequestId>, String)> {
        if self.item_costs.is_empty() {
            return Err((None, "instance has no items".into()));
        }
        if self.root_cost.is_negative() {
            return Err((None, "negative root cost".into()));
        }
        if let Some(i) = self.item_costs.iter().position(|c| !c.is_positive()) {
            return Err((None, format!("item cost of item {i} must be positive")));
        }
        if self.hold_rate.is_negative() {
            return Err((None, "negative hold rate".into()));
        }
        match &self.backlog_rate {
            Extended::Finite(b) if !b.is_positive() => {
                return Err((None, "backlog rate must be positive or inf".into()))
            }
            Extended::Infinite if self.item_count() != 1 => {
                return Err((None, "infinite backlog rate requires a single item".into()))
            }
            Extended::Infinite if self.nonuniform => {
                return Err((None, "infinite backlog rate cannot be nonuniform".into()))
            }
            _ => {}
        }
        let mut seen = BTreeSet::new();
        for req in &self.requests {
            let fail = |msg: String| Err((Some(req.id), msg));
            if !seen.insert(req.id) {
                return fail(format!("duplicate request id {}", req.id));
            }
            if req.item >= self.item_count() {
                return fail(format!("unknown item index {}", req.item));
            }
            if req.arrival.is_negative() {
                return fail("negative arrival".into());
            }
            if req.deadline < req.arrival {
                return fail("deadline before arrival".into());
            }
            let has_override = req.hold_rate.is_some() || req.backlog_rate.is_some();
            if has_override && !self.nonuniform {
                return fail("per-request rates require a nonuniform instance".into());
            }
            if req.hold_rate.as_ref().is_some_and(|h| h.is_negative())
                || req.backlog_rate.as_ref().is_some_and(|b| b.is_negative())
            {
                return fail("negative per-request rate".into());
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|(_, msg)| JrpError::InvalidInstance(msg))
    }

    /// Copy of the instance without the request `id`.
    pub fn without_request(&self, id: RequestId) -> Instance {
        let mut copy = self.clone();
        copy.requests.retain(|r| r.id != id);
        copy
    }
}

/// Which phase of a service satisfied a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    MatureBacklog,
    PrematureBacklog,
    LocalHolding,
    GlobalHolding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub service: usize,
    pub phase: Phase,
}

/// Requests of a premature item that bring it to maturity, with that time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrematureContribution {
    pub maturity: Ratio,
    pub requests: Vec<RequestId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub time: Ratio,
    pub mature_items: Vec<ItemId>,
    /// Premature items in inclusion order.
    pub premature_items: Vec<ItemId>,
    /// Premature items that still had an active request after the mature phase.
    pub items_with_active: Vec<ItemId>,
    /// Maturity time of the first premature item that did not fit the budget.
    pub excluded_maturity: Extended,
    pub mature_backlog_served: BTreeMap<ItemId, Vec<RequestId>>,
    pub premature_contributors: BTreeMap<ItemId, PrematureContribution>,
    pub local_holding_served: BTreeMap<ItemId, Vec<RequestId>>,
    pub global_holding_served: Vec<RequestId>,
}

impl ServiceRecord {
    pub fn new(time: Ratio) -> Self {
        ServiceRecord {
            time,
            mature_items: Vec::new(),
            premature_items: Vec::new(),
            items_with_active: Vec::new(),
            excluded_maturity: Extended::Infinite,
            mature_backlog_served: BTreeMap::new(),
            premature_contributors: BTreeMap::new(),
            local_holding_served: BTreeMap::new(),
            global_holding_served: Vec::new(),
        }
    }

    /// All items bought by this service.
    pub fn items(&self) -> BTreeSet<ItemId> {
        self.mature_items
            .iter()
            .chain(self.premature_items.iter())
            .copied()
            .collect()
    }

    pub fn includes(&self, item: ItemId) -> bool {
        self.mature_items.contains(&item) || self.premature_items.contains(&item)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Schedule {
    pub services: Vec<ServiceRecord>,
    pub assignment: BTreeMap<RequestId, Assignment>,
}

impl Schedule {
    pub fn assign(&mut self, id: RequestId, service: usize, phase: Phase) {
        self.assignment.insert(id, Assignment { service, phase });
    }

    pub fn served_in(&self, service: usize) -> impl Iterator<Item = RequestId> + '_ {
        self.assignment
            .iter()
            .filter(move |(_, a)| a.service == service)
            .map(|(id, _)| *id)
    }

    /// Structural checks against the instance: strictly increasing times,
    /// each request assigned exactly once at a time not before its arrival,
    /// and the served-request fields of each record agreeing with the
    /// assignment map.
    pub fn validate(&self, instance: &Instance) -> Result<()> {
        let bad = |m: String| Err(JrpError::Validation(m));
        for w in self.services.windows(2) {
            if w[0].time >= w[1].time {
                return bad(format!(
                    "service times not strictly increasing ({} then {})",
                    w[0].time, w[1].time
                ));
            }
        }
        let index = instance.request_index();
        for req in &instance.requests {
            let Some(a) = self.assignment.get(&req.id) else {
                return bad(format!("request {} is not assigned", req.id));
            };
            let Some(service) = self.services.get(a.service) else {
                return bad(format!(
                    "request {} assigned to missing service {}",
                    req.id, a.service
                ));
            };
            if service.time < req.arrival {
                return Err(JrpError::InfeasibleAssignment {
                    request: req.id,
                    time: service.time.clone(),
                    reason: "served before arrival",
                });
            }
        }
        if let Some(id) = self.assignment.keys().find(|id| !index.contains_key(id)) {
            return bad(format!("assignment names unknown request {id}"));
        }
        let mut listed: BTreeMap<RequestId, (usize, Phase)> = BTreeMap::new();
        for (i, s) in self.services.iter().enumerate() {
            let fields = s
                .mature_backlog_served
                .values()
                .flatten()
                .map(|id| (*id, Phase::MatureBacklog))
                .chain(
                    s.local_holding_served
                        .values()
                        .flatten()
                        .map(|id| (*id, Phase::LocalHolding)),
                )
                .chain(
                    s.global_holding_served
                        .iter()
                        .map(|id| (*id, Phase::GlobalHolding)),
                );
            for (id, phase) in fields {
                if listed.insert(id, (i, phase)).is_some() {
                    return bad(format!("request {id} listed in more than one served field"));
                }
                match self.assignment.get(&id) {
                    Some(a) if a.service == i && a.phase == phase => {}
                    _ => {
                        return bad(format!(
                            "request {id} listed in service {i} as {phase:?} but assigned elsewhere"
                        ))
                    }
                }
            }
            for item in &s.mature_items {
                let serves = self
                    .served_in(i)
                    .any(|id| index.get(&id).is_some_and(|r| r.item == *item));
                if !serves {
                    return bad(format!(
                        "item {item} charged in service {i} with no served request"
                    ));
                }
            }
        }
        for (id, a) in &self.assignment {
            if matches!(
                a.phase,
                Phase::MatureBacklog | Phase::LocalHolding | Phase::GlobalHolding
            ) && listed.get(id) != Some(&(a.service, a.phase))
            {
                return bad(format!("request {id} missing from its service record"));
            }
        }
        Ok(())
    }
}
