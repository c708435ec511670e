//! Single-item policy: serve when accumulated backlog reaches `s`, then
//! spend up to `s` on early holding.

use serde::{Deserialize, Serialize};

use crate::accum::first_reach;
use crate::error::{JrpError, Result};
use crate::model::{Extended, Instance, Phase, Request, Schedule, ServiceRecord};
use crate::ratio::Ratio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingleMode {
    /// Trigger when the backlog of overdue requests reaches `s`.
    Backlog,
    /// Hard deadlines: trigger at the earliest unsatisfied deadline.
    Deadline,
}

/// Arrived, unserved requests at time `now`, sorted by (deadline, id).
#[derive(Debug, Clone)]
pub struct ActiveSet {
    now: Ratio,
    requests: Vec<Request>,
}

impl ActiveSet {
    pub fn new(now: Ratio) -> Self {
        ActiveSet {
            now,
            requests: Vec::new(),
        }
    }

    pub fn now(&self) -> &Ratio {
        &self.now
    }

    pub fn advance(&mut self, now: Ratio) {
        debug_assert!(now >= self.now);
        self.now = now;
    }

    pub fn insert(&mut self, req: Request) {
        let pos = self
            .requests
            .partition_point(|r| r.deadline_key() < req.deadline_key());
        self.requests.insert(pos, req);
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn all(&self) -> &[Request] {
        &self.requests
    }

    fn boundary(&self) -> usize {
        self.requests.partition_point(|r| r.deadline < self.now)
    }

    /// Requests with deadline before `now`.
    pub fn overdue(&self) -> &[Request] {
        &self.requests[..self.boundary()]
    }

    /// Requests with deadline at or after `now`.
    pub fn pending(&self) -> &[Request] {
        &self.requests[self.boundary()..]
    }

    /// Removes and returns the requests with deadline `<= t`.
    fn take_due(&mut self, t: &Ratio) -> Vec<Request> {
        let k = self.requests.partition_point(|r| &r.deadline <= t);
        self.requests.drain(..k).collect()
    }

    fn remove_ids(&mut self, ids: &[u64]) {
        self.requests.retain(|r| !ids.contains(&r.id));
    }
}

/// First time at or after `from` and strictly before `horizon` at which the
/// backlog of the active requests reaches `budget`. Pending requests join the
/// accumulation at their deadlines.
pub fn next_backlog_trigger(
    instance: &Instance,
    active: &ActiveSet,
    from: &Ratio,
    budget: &Ratio,
    horizon: Option<&Ratio>,
) -> Option<Ratio> {
    let terms: Vec<(Ratio, Ratio)> = active
        .all()
        .iter()
        .filter_map(|r| match instance.backlog_rate_of(r) {
            Extended::Finite(b) => Some((r.deadline.clone(), b)),
            Extended::Infinite => None,
        })
        .collect();
    let t = first_reach(&terms, budget)?.max(from.clone());
    match horizon {
        Some(h) if &t >= h => None,
        _ => Some(t),
    }
}

/// Greedy holding scan in (deadline, id) order: include while the running
/// holding cost stays within `budget`, stop at the first request that would
/// exceed it.
pub(crate) fn holding_scan<'a>(
    instance: &Instance,
    candidates: impl IntoIterator<Item = &'a Request>,
    t: &Ratio,
    budget: &Ratio,
) -> Vec<u64> {
    let mut spent = Ratio::zero();
    let mut chosen = Vec::new();
    for req in candidates {
        let cost = instance.hold_rate_of(req) * (&req.deadline - t);
        let next = &spent + &cost;
        if &next > budget {
            break;
        }
        spent = next;
        chosen.push(req.id);
    }
    chosen
}

pub fn run_single_item(instance: &Instance, mode: SingleMode) -> Result<Schedule> {
    instance.validate()?;
    if instance.item_count() != 1 {
        return Err(JrpError::Usage(
            "the single-item policy needs exactly one item".into(),
        ));
    }
    match mode {
        SingleMode::Deadline if instance.nonuniform => {
            return Err(JrpError::Usage(
                "deadline mode does not support per-request rates".into(),
            ))
        }
        SingleMode::Deadline if !instance.backlog_rate.is_infinite() => {
            return Err(JrpError::Usage(
                "deadline mode needs an infinite backlog rate".into(),
            ))
        }
        SingleMode::Backlog if instance.backlog_rate.is_infinite() => {
            return Err(JrpError::Usage(
                "backlog mode needs a finite backlog rate".into(),
            ))
        }
        _ => {}
    }
    let s = instance.service_cost();
    let mut arrivals: Vec<&Request> = instance.requests.iter().collect();
    arrivals.sort_by(|a, b| a.arrival_key().cmp(&b.arrival_key()));

    let mut schedule = Schedule::default();
    let Some(first) = arrivals.first() else {
        return Ok(schedule);
    };
    let mut active = ActiveSet::new(first.arrival.clone());
    let mut next = 0;
    loop {
        while next < arrivals.len() && &arrivals[next].arrival <= active.now() {
            active.insert(arrivals[next].clone());
            next += 1;
        }
        let horizon = arrivals.get(next).map(|r| &r.arrival);
        if active.is_empty() {
            match horizon {
                Some(h) => {
                    active.advance(h.clone());
                    continue;
                }
                None => break,
            }
        }
        let trigger = match mode {
            SingleMode::Backlog => {
                next_backlog_trigger(instance, &active, active.now(), &s, horizon)
            }
            SingleMode::Deadline => {
                let due = active.all()[0].deadline.clone().max(active.now().clone());
                match horizon {
                    Some(h) if &due >= h => None,
                    _ => Some(due),
                }
            }
        };
        let Some(t) = trigger else {
            match horizon {
                Some(h) => {
                    active.advance(h.clone());
                    continue;
                }
                None => {
                    return Err(JrpError::InvalidInstance(
                        "some requests can never accumulate enough backlog to be served".into(),
                    ))
                }
            }
        };
        active.advance(t.clone());
        let index = schedule.services.len();
        let mut record = ServiceRecord::new(t.clone());
        record.mature_items.push(0);

        let backlog: Vec<u64> = active.take_due(&t).into_iter().map(|r| r.id).collect();
        let holding = holding_scan(instance, active.all(), &t, &s);
        active.remove_ids(&holding);

        for id in &backlog {
            schedule.assign(*id, index, Phase::MatureBacklog);
        }
        for id in &holding {
            schedule.assign(*id, index, Phase::LocalHolding);
        }
        if !backlog.is_empty() {
            record.mature_backlog_served.insert(0, backlog);
        }
        if !holding.is_empty() {
            record.local_holding_served.insert(0, holding);
        }
        schedule.services.push(record);
    }
    Ok(schedule)
}

/// Requests served in the backlog phase of service `i`.
pub fn backlog_set(schedule: &Schedule, i: usize) -> &[u64] {
    schedule.services[i]
        .mature_backlog_served
        .get(&0)
        .map_or(&[], Vec::as_slice)
}

/// Requests served in the holding phase of service `i`.
pub fn holding_set(schedule: &Schedule, i: usize) -> &[u64] {
    schedule.services[i]
        .local_holding_served
        .get(&0)
        .map_or(&[], Vec::as_slice)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{evaluate_schedule, evaluate_services};
    use crate::ratio::r;

    fn inst(s_item: Ratio, h: Ratio, b: Extended, reqs: &[(i64, i64)]) -> Instance {
        Instance {
            root_cost: Ratio::zero(),
            item_costs: vec![s_item],
            hold_rate: h,
            backlog_rate: b,
            nonuniform: false,
            requests: reqs
                .iter()
                .enumerate()
                .map(|(i, (a, d))| Request::new(i as u64, 0, r(*a, 1), r(*d, 1)))
                .collect(),
        }
    }

    fn unit(reqs: &[(i64, i64)]) -> Instance {
        inst(r(1, 1), r(1, 1), Extended::Finite(r(1, 1)), reqs)
    }

    fn times(s: &Schedule) -> Vec<Ratio> {
        s.services.iter().map(|x| x.time.clone()).collect()
    }

    #[test]
    fn trigger_examples() {
        let i = unit(&[(0, 0), (0, 0), (0, 2)]);
        let mut a = ActiveSet::new(r(0, 1));
        a.insert(i.requests[0].clone());
        assert_eq!(
            next_backlog_trigger(&i, &a, &r(0, 1), &r(1, 1), None),
            Some(r(1, 1))
        );
        a.insert(i.requests[1].clone());
        assert_eq!(
            next_backlog_trigger(&i, &a, &r(0, 1), &r(1, 1), None),
            Some(r(1, 2))
        );
        let mut c = ActiveSet::new(r(0, 1));
        c.insert(i.requests[0].clone());
        c.insert(i.requests[2].clone());
        assert_eq!(
            next_backlog_trigger(&i, &c, &r(0, 1), &r(3, 1), None),
            Some(r(5, 2))
        );
        assert_eq!(
            next_backlog_trigger(&i, &c, &r(0, 1), &r(3, 1), Some(&r(2, 1))),
            None
        );
    }

    #[test]
    fn active_set_partitions_at_now() {
        let i = unit(&[(0, 0), (0, 3), (0, 1)]);
        let mut a = ActiveSet::new(r(1, 1));
        for q in &i.requests {
            a.insert(q.clone());
        }
        assert_eq!(
            a.overdue().iter().map(|q| q.id).collect::<Vec<_>>(),
            vec![0]
        );
        assert_eq!(
            a.pending().iter().map(|q| q.id).collect::<Vec<_>>(),
            vec![2, 1]
        );
    }

    #[test]
    fn lone_request_waits_for_budget() {
        let i = unit(&[(0, 0)]);
        let s = run_single_item(&i, SingleMode::Backlog).unwrap();
        assert_eq!(times(&s), vec![r(1, 1)]);
        assert_eq!(evaluate_schedule(&i, &s).unwrap().total, r(2, 1));
    }

    #[test]
    fn far_request_is_not_held() {
        // Straight-line trace: backlog of the first request hits 1 at t=1;
        // holding the second would cost 9 > 1. It then waits until 10 + 1.
        let i = unit(&[(0, 0), (0, 10)]);
        let s = run_single_item(&i, SingleMode::Backlog).unwrap();
        assert_eq!(times(&s), vec![r(1, 1), r(11, 1)]);
        assert_eq!(backlog_set(&s, 0), &[0]);
        assert!(holding_set(&s, 0).is_empty());
        assert_eq!(backlog_set(&s, 1), &[1]);
        let hand = (r(1, 1) + r(1, 1)) + (r(1, 1) + r(1, 1));
        assert_eq!(evaluate_schedule(&i, &s).unwrap().total, hand);
    }

    #[test]
    fn arrival_at_trigger_is_visible() {
        // The second request arrives exactly at the trigger and is held.
        let i = unit(&[(0, 0), (1, 1)]);
        let s = run_single_item(&i, SingleMode::Backlog).unwrap();
        assert_eq!(times(&s), vec![r(1, 1)]);
        assert_eq!(backlog_set(&s, 0), &[0, 1]);
    }

    #[test]
    fn holding_budget_is_inclusive() {
        // Holding the second costs exactly s = 1 and is included; the third is not.
        let i = unit(&[(0, 0), (0, 2), (0, 3)]);
        let s = run_single_item(&i, SingleMode::Backlog).unwrap();
        assert_eq!(holding_set(&s, 0), &[1]);
    }

    #[test]
    fn deadline_mode_serves_at_deadlines() {
        let i = inst(
            r(1, 1),
            r(1, 1),
            Extended::Infinite,
            &[(0, 2), (0, 3), (0, 5)],
        );
        let s = run_single_item(&i, SingleMode::Deadline).unwrap();
        assert_eq!(times(&s), vec![r(2, 1), r(5, 1)]);
        assert_eq!(holding_set(&s, 0), &[1]);
        for part in evaluate_services(&i, &s).unwrap() {
            assert!(part.total <= r(2, 1));
        }
        assert!(run_single_item(&i, SingleMode::Backlog).is_err());
        assert!(run_single_item(&unit(&[(0, 0)]), SingleMode::Deadline).is_err());
    }

    #[test]
    fn rejects_multi_item() {
        let mut i = unit(&[(0, 0)]);
        i.item_costs.push(r(1, 1));
        assert!(matches!(
            run_single_item(&i, SingleMode::Backlog),
            Err(JrpError::Usage(_))
        ));
    }

    #[test]
    fn nonuniform_rates_drive_the_trigger() {
        let mut i = unit(&[(0, 0), (0, 0)]);
        i.nonuniform = true;
        i.requests[0] = i.requests[0].clone().with_rates(r(1, 1), r(3, 1));
        i.requests[1] = i.requests[1].clone().with_rates(r(1, 1), r(0, 1));
        let s = run_single_item(&i, SingleMode::Backlog).unwrap();
        assert_eq!(times(&s), vec![r(1, 3)]);
    }

    #[test]
    fn reruns_are_identical() {
        let i = unit(&[(0, 0), (0, 1), (1, 4), (2, 2), (3, 9)]);
        let a = serde_json::to_string(&run_single_item(&i, SingleMode::Backlog).unwrap()).unwrap();
        let b = serde_json::to_string(&run_single_item(&i, SingleMode::Backlog).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
