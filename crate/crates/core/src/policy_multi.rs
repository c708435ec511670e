//! Multi-item policy: serve when the surplus backlog of mature items reaches
//! the joint cost, then buy premature items and spend on holding.

use crate::accum::{accumulation_at, first_reach};
use crate::error::{JrpError, Result};
use crate::model::{
    Extended, Instance, ItemId, Phase, PrematureContribution, Request, Schedule, ServiceRecord,
};
use crate::policy_single::holding_scan;
use crate::ratio::Ratio;

/// Snapshot of one item at a given time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemState {
    pub item: ItemId,
    pub overdue: Vec<u64>,
    pub pending: Vec<u64>,
    pub backlog: Ratio,
    pub mature: bool,
    /// First time the item's current active set reaches its cost.
    pub onset: Option<Ratio>,
}

fn terms(requests: &[Request], b: &Ratio) -> Vec<(Ratio, Ratio)> {
    requests
        .iter()
        .map(|r| (r.deadline.clone(), b.clone()))
        .collect()
}

/// First time at which the backlog of `requests` reaches `item_cost`.
pub fn maturity_time(requests: &[Request], item_cost: &Ratio, b: &Ratio) -> Option<Ratio> {
    if requests.is_empty() || b.is_zero() {
        return None;
    }
    first_reach(&terms(requests, b), item_cost)
}

/// States of every item for the active sets `active[v]` at time `t`.
pub fn item_states(
    instance: &Instance,
    active: &[Vec<Request>],
    t: &Ratio,
) -> Result<Vec<ItemState>> {
    let b = instance.finite_backlog("the multi-item policy")?;
    Ok(active
        .iter()
        .enumerate()
        .map(|(v, reqs)| {
            let backlog = accumulation_at(&terms(reqs, b), t);
            let (overdue, pending): (Vec<&Request>, Vec<&Request>) =
                reqs.iter().partition(|r| &r.deadline < t);
            ItemState {
                item: v,
                overdue: overdue.iter().map(|r| r.id).collect(),
                pending: pending.iter().map(|r| r.id).collect(),
                mature: &backlog >= instance.item_cost(v),
                backlog,
                onset: maturity_time(reqs, instance.item_cost(v), b),
            }
        })
        .collect())
}

/// Surplus `Σ_v max(0, b_t(v) − c(v))` at time `t`.
fn surplus_at(item_terms: &[(Vec<(Ratio, Ratio)>, Ratio)], t: &Ratio) -> Ratio {
    item_terms
        .iter()
        .map(|(ts, c)| (accumulation_at(ts, t) - c).max(Ratio::zero()))
        .sum()
}

/// First time at or after `from` and strictly before `horizon` at which the
/// surplus backlog of mature items reaches `root_cost`. With a zero root
/// cost the trigger is the first maturity.
pub fn surplus_trigger(
    instance: &Instance,
    active: &[Vec<Request>],
    from: &Ratio,
    root_cost: &Ratio,
    horizon: Option<&Ratio>,
) -> Result<Option<Ratio>> {
    let b = instance.finite_backlog("the multi-item policy")?;
    let item_terms: Vec<(Vec<(Ratio, Ratio)>, Ratio)> = active
        .iter()
        .enumerate()
        .filter(|(_, reqs)| !reqs.is_empty())
        .map(|(v, reqs)| (terms(reqs, b), instance.item_cost(v).clone()))
        .collect();
    let onsets: Vec<Ratio> = item_terms
        .iter()
        .filter_map(|(ts, c)| first_reach(ts, c))
        .collect();
    let root = if root_cost.is_zero() {
        onsets.into_iter().min()
    } else {
        let mut points: Vec<Ratio> = item_terms
            .iter()
            .flat_map(|(ts, _)| ts.iter().map(|(d, _)| d.clone()))
            .chain(onsets)
            .collect();
        points.sort();
        points.dedup();
        let values: Vec<Ratio> = points.iter().map(|p| surplus_at(&item_terms, p)).collect();
        match values.iter().position(|v| v >= root_cost) {
            Some(0) => Some(points[0].clone()),
            Some(k) => {
                let (p0, p1) = (&points[k - 1], &points[k]);
                let (f0, f1) = (&values[k - 1], &values[k]);
                Some(p0 + &((root_cost - f0) * (p1 - p0) / (f1 - f0)))
            }
            None => points.last().and_then(|last| {
                let f = &values[values.len() - 1];
                let slope = surplus_at(&item_terms, &(last + &Ratio::one())) - f;
                slope
                    .is_positive()
                    .then(|| last + &((root_cost - f) / &slope))
            }),
        }
    };
    Ok(root
        .map(|t| t.max(from.clone()))
        .filter(|t| horizon.is_none_or(|h| t < h)))
}

pub fn run_multi_item(instance: &Instance) -> Result<Schedule> {
    instance.validate()?;
    if instance.nonuniform {
        return Err(JrpError::Usage(
            "per-request rates are only supported by the single-item policy".into(),
        ));
    }
    let b = instance.finite_backlog("the multi-item policy")?.clone();
    let n = instance.item_count();
    let mut arrivals: Vec<&Request> = instance.requests.iter().collect();
    arrivals.sort_by(|a, b| a.arrival_key().cmp(&b.arrival_key()));

    let mut schedule = Schedule::default();
    let Some(first) = arrivals.first() else {
        return Ok(schedule);
    };
    let mut now = first.arrival.clone();
    let mut active: Vec<Vec<Request>> = vec![Vec::new(); n];
    let mut next = 0;
    loop {
        while next < arrivals.len() && arrivals[next].arrival <= now {
            let r = arrivals[next];
            let list = &mut active[r.item];
            let pos = list.partition_point(|x| x.deadline_key() < r.deadline_key());
            list.insert(pos, r.clone());
            next += 1;
        }
        let horizon = arrivals.get(next).map(|r| &r.arrival);
        let idle = active.iter().all(Vec::is_empty);
        let trigger = if idle {
            None
        } else {
            surplus_trigger(instance, &active, &now, &instance.root_cost, horizon)?
        };
        let Some(t) = trigger else {
            match horizon {
                Some(h) => {
                    now = h.clone();
                    continue;
                }
                None if idle => break,
                None => {
                    return Err(JrpError::Internal(
                        "active requests never trigger a service".into(),
                    ))
                }
            }
        };
        now = t.clone();
        let index = schedule.services.len();
        let record = serve(instance, &b, &mut active, &t, index, &mut schedule)?;
        schedule.services.push(record);
    }
    Ok(schedule)
}

fn serve(
    instance: &Instance,
    b: &Ratio,
    active: &mut [Vec<Request>],
    t: &Ratio,
    index: usize,
    schedule: &mut Schedule,
) -> Result<ServiceRecord> {
    let mut record = ServiceRecord::new(t.clone());

    // Mature items: all strictly overdue requests are served.
    for (v, reqs) in active.iter_mut().enumerate() {
        let backlog = accumulation_at(&terms(reqs, b), t);
        if reqs.is_empty() || &backlog < instance.item_cost(v) {
            continue;
        }
        record.mature_items.push(v);
        let k = reqs.partition_point(|r| &r.deadline < t);
        let served: Vec<u64> = reqs.drain(..k).map(|r| r.id).collect();
        for id in &served {
            schedule.assign(*id, index, Phase::MatureBacklog);
        }
        record.mature_backlog_served.insert(v, served);
    }

    // Premature items, cheapest-to-mature first, within twice the joint cost.
    let mut candidates: Vec<(Ratio, ItemId)> = Vec::new();
    for (v, reqs) in active.iter().enumerate() {
        if record.mature_items.contains(&v) || reqs.is_empty() {
            continue;
        }
        record.items_with_active.push(v);
        let m = maturity_time(reqs, instance.item_cost(v), b)
            .ok_or_else(|| JrpError::Internal(format!("item {v} never matures")))?;
        candidates.push((m, v));
    }
    candidates.sort();
    let budget = &instance.root_cost * &Ratio::from_int(2);
    let mut spent = Ratio::zero();
    for (m, v) in candidates {
        let next = &spent + instance.item_cost(v);
        if next > budget {
            record.excluded_maturity = Extended::Finite(m);
            break;
        }
        spent = next;
        record.premature_items.push(v);
        let reqs = &mut active[v];
        let contributors: Vec<u64> = reqs
            .iter()
            .filter(|r| r.deadline < m)
            .map(|r| r.id)
            .collect();
        let k = reqs.partition_point(|r| &r.deadline <= t);
        for r in reqs.drain(..k) {
            schedule.assign(r.id, index, Phase::PrematureBacklog);
        }
        record.premature_contributors.insert(
            v,
            PrematureContribution {
                maturity: m,
                requests: contributors,
            },
        );
    }

    let included: Vec<ItemId> = record
        .mature_items
        .iter()
        .chain(record.premature_items.iter())
        .copied()
        .collect();

    // Local holding per included item.
    for &v in &included {
        let chosen = holding_scan(instance, &active[v], t, instance.item_cost(v));
        if chosen.is_empty() {
            continue;
        }
        active[v].retain(|r| !chosen.contains(&r.id));
        for id in &chosen {
            schedule.assign(*id, index, Phase::LocalHolding);
        }
        record.local_holding_served.insert(v, chosen);
    }

    // Global holding across included items.
    let mut pool: Vec<&Request> = included.iter().flat_map(|&v| active[v].iter()).collect();
    pool.sort_by(|a, b| a.deadline_key().cmp(&b.deadline_key()));
    let chosen = holding_scan(instance, pool, t, &instance.root_cost);
    for &v in &included {
        active[v].retain(|r| !chosen.contains(&r.id));
    }
    for id in &chosen {
        schedule.assign(*id, index, Phase::GlobalHolding);
    }
    record.global_holding_served = chosen;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{evaluate_schedule, evaluate_services};
    use crate::ratio::r;

    fn req(id: u64, item: usize, a: Ratio, d: Ratio) -> Request {
        Request::new(id, item, a, d)
    }

    fn instance(root: Ratio, items: Vec<Ratio>, reqs: Vec<Request>) -> Instance {
        Instance {
            root_cost: root,
            item_costs: items,
            hold_rate: r(1, 1),
            backlog_rate: Extended::Finite(r(1, 1)),
            nonuniform: false,
            requests: reqs,
        }
    }

    fn z() -> Ratio {
        Ratio::zero()
    }

    #[test]
    fn maturity_examples() {
        let b = r(1, 1);
        assert_eq!(
            maturity_time(&[req(0, 0, z(), z())], &r(1, 1), &b),
            Some(r(1, 1))
        );
        assert_eq!(
            maturity_time(
                &[req(0, 0, z(), z()), req(1, 0, z(), r(1, 1))],
                &r(3, 1),
                &b
            ),
            Some(r(2, 1))
        );
        assert_eq!(
            maturity_time(&[req(0, 0, z(), r(5, 1))], &r(2, 1), &b),
            Some(r(7, 1))
        );
        assert_eq!(maturity_time(&[], &r(2, 1), &b), None);
        assert_eq!(maturity_time(&[req(0, 0, z(), z())], &r(2, 1), &z()), None);
    }

    #[test]
    fn surplus_examples() {
        let one = instance(r(1, 1), vec![r(1, 1)], vec![req(0, 0, z(), z())]);
        let act = vec![one.requests.clone()];
        assert_eq!(
            surplus_trigger(&one, &act, &z(), &r(1, 1), None).unwrap(),
            Some(r(2, 1))
        );

        // Both items mature at 1; joint slope 2 after that.
        let two = instance(
            r(1, 1),
            vec![r(1, 1), r(1, 1)],
            vec![req(0, 0, z(), z()), req(1, 1, z(), z())],
        );
        let act = vec![vec![two.requests[0].clone()], vec![two.requests[1].clone()]];
        assert_eq!(
            surplus_trigger(&two, &act, &z(), &r(1, 1), None).unwrap(),
            Some(r(3, 2))
        );

        // Maturities 1 and 3/2.
        let stag = instance(
            r(1, 1),
            vec![r(1, 1), r(1, 1)],
            vec![req(0, 0, z(), z()), req(1, 1, z(), r(1, 2))],
        );
        let act = vec![
            vec![stag.requests[0].clone()],
            vec![stag.requests[1].clone()],
        ];
        assert_eq!(
            surplus_trigger(&stag, &act, &z(), &r(1, 1), None).unwrap(),
            Some(r(7, 4))
        );
        assert_eq!(
            surplus_trigger(&stag, &act, &z(), &r(1, 1), Some(&r(7, 4))).unwrap(),
            None
        );
    }

    #[test]
    fn zero_root_cost_triggers_at_maturity() {
        let i = instance(z(), vec![r(2, 1)], vec![req(0, 0, z(), r(1, 1))]);
        let s = run_multi_item(&i).unwrap();
        assert_eq!(s.services[0].time, r(3, 1));
    }

    #[test]
    fn single_item_run() {
        let i = instance(r(1, 1), vec![r(1, 1)], vec![req(0, 0, z(), z())]);
        let s = run_multi_item(&i).unwrap();
        assert_eq!(s.services.len(), 1);
        assert_eq!(s.services[0].time, r(2, 1));
        assert_eq!(evaluate_schedule(&i, &s).unwrap().total, r(4, 1));
    }

    #[test]
    fn two_mature_items() {
        let i = instance(
            r(1, 1),
            vec![r(1, 1), r(1, 1)],
            vec![req(0, 0, z(), z()), req(1, 1, z(), z())],
        );
        let s = run_multi_item(&i).unwrap();
        assert_eq!(s.services.len(), 1);
        assert_eq!(s.services[0].time, r(3, 2));
        assert_eq!(s.services[0].mature_items, vec![0, 1]);
        // Hand trace: 1 + (1 + 1) + 3/2 + 3/2.
        let total = evaluate_schedule(&i, &s).unwrap().total;
        assert_eq!(total, r(6, 1));
        assert!(total <= r(15, 1));
    }

    #[test]
    fn premature_item_is_bought() {
        let i = instance(
            r(1, 1),
            vec![r(1, 1), r(2, 1)],
            vec![req(0, 0, z(), z()), req(1, 1, z(), r(3, 2))],
        );
        let s = run_multi_item(&i).unwrap();
        assert_eq!(s.services.len(), 1);
        let rec = &s.services[0];
        assert_eq!(rec.time, r(2, 1));
        assert_eq!(rec.mature_items, vec![0]);
        assert_eq!(rec.premature_items, vec![1]);
        assert_eq!(rec.items_with_active, vec![1]);
        assert_eq!(rec.excluded_maturity, Extended::Infinite);
        assert_eq!(rec.premature_contributors[&1].maturity, r(7, 2));
        assert_eq!(s.assignment[&1].phase, Phase::PrematureBacklog);
        // Hand trace: 1 + 1 + 2 + backlog 2 + backlog 1/2.
        assert_eq!(evaluate_schedule(&i, &s).unwrap().total, r(13, 2));
    }

    #[test]
    fn premature_budget_excludes_and_records() {
        // Item 0 triggers at 2. Item 2 would mature at 5/2 and fits; item 1
        // would mature at 3 but its cost overflows the budget 2c(r).
        let i = instance(
            r(1, 1),
            vec![r(1, 1), r(2, 1), r(1, 1)],
            vec![
                req(0, 0, z(), z()),
                req(1, 1, z(), r(1, 1)),
                req(2, 2, z(), r(3, 2)),
            ],
        );
        let s = run_multi_item(&i).unwrap();
        let rec = &s.services[0];
        assert_eq!(rec.time, r(2, 1));
        assert_eq!(rec.mature_items, vec![0]);
        assert_eq!(rec.items_with_active, vec![1, 2]);
        assert_eq!(rec.premature_items, vec![2]);
        assert_eq!(rec.excluded_maturity, Extended::Finite(r(3, 1)));
        assert_eq!(rec.premature_contributors[&2].maturity, r(5, 2));
        assert_eq!(s.assignment[&2].phase, Phase::PrematureBacklog);
        assert_eq!(s.assignment[&1].service, 1);
    }

    #[test]
    fn deadline_at_trigger_goes_to_local_holding() {
        // Item 0 matures at 1 with request 0; request 1 is due exactly at the trigger.
        let i = instance(
            r(1, 1),
            vec![r(1, 1)],
            vec![req(0, 0, z(), z()), req(1, 0, z(), r(2, 1))],
        );
        let s = run_multi_item(&i).unwrap();
        assert_eq!(s.services[0].time, r(2, 1));
        assert_eq!(s.assignment[&1].phase, Phase::LocalHolding);
    }

    #[test]
    fn global_holding_after_local() {
        let i = instance(
            r(1, 1),
            vec![r(1, 1)],
            vec![
                req(0, 0, z(), z()),
                req(1, 0, z(), r(3, 1)),
                req(2, 0, z(), r(3, 1)),
                req(3, 0, z(), r(9, 1)),
            ],
        );
        let s = run_multi_item(&i).unwrap();
        let rec = &s.services[0];
        assert_eq!(rec.time, r(2, 1));
        assert_eq!(rec.local_holding_served[&0], vec![1]);
        assert_eq!(rec.global_holding_served, vec![2]);
        assert_eq!(s.assignment[&3].service, 1);
    }

    #[test]
    fn per_service_bounds_and_no_mature_item_left() {
        let reqs = vec![
            req(0, 0, z(), z()),
            req(1, 1, z(), r(1, 2)),
            req(2, 2, r(1, 1), r(3, 2)),
            req(3, 0, r(1, 1), r(5, 1)),
            req(4, 1, r(2, 1), r(2, 1)),
            req(5, 2, r(3, 1), r(7, 2)),
        ];
        let i = instance(r(3, 2), vec![r(1, 1), r(1, 2), r(2, 1)], reqs);
        let s = run_multi_item(&i).unwrap();
        let parts = evaluate_services(&i, &s).unwrap();
        for (rec, part) in s.services.iter().zip(&parts) {
            let c1: Ratio = rec.mature_items.iter().map(|v| i.item_cost(*v)).sum();
            assert!(part.total <= &c1 * &r(3, 1) + &i.root_cost * &r(9, 1));
        }
    }

    #[test]
    fn rejects_nonuniform() {
        let mut i = instance(r(1, 1), vec![r(1, 1)], vec![req(0, 0, z(), z())]);
        i.nonuniform = true;
        assert!(matches!(run_multi_item(&i), Err(JrpError::Usage(_))));
    }
}
