//! Exhaustive offline optimum over a finite grid of service times.
//!
//! Root times `S` are enumerated as bitmasks. Given `S`, items are independent:
//! each item picks a subset `T ⊆ S` of opening times, and each request goes to
//! its cheapest feasible opened time. The per-item minimum over submasks is a
//! subset-min transform, so the search is `O(n·m·2^m + |R|·2^m)`.

use std::cmp::Ordering;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::cost::{evaluate_schedule, CostBreakdown};
use crate::error::{JrpError, Result};
use crate::model::{Extended, Instance, Phase, Schedule, ServiceRecord};
use crate::ratio::Ratio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleLimits {
    pub max_candidate_times: usize,
    pub max_requests: usize,
}

impl OracleLimits {
    pub fn for_instance(instance: &Instance) -> Self {
        OracleLimits {
            max_candidate_times: if instance.item_count() == 1 { 20 } else { 8 },
            max_requests: 64,
        }
    }
}

/// Sorted distinct arrivals and deadlines.
pub fn candidate_times(instance: &Instance) -> Vec<Ratio> {
    let mut times: Vec<Ratio> = instance
        .requests
        .iter()
        .flat_map(|r| [r.arrival.clone(), r.deadline.clone()])
        .collect();
    times.sort();
    times.dedup();
    times
}

pub fn optimal_offline(
    instance: &Instance,
    limits: &OracleLimits,
) -> Result<(CostBreakdown, Schedule)> {
    optimal_on_grid(instance, &candidate_times(instance), limits)
}

/// Optimum restricted to service times drawn from `grid` (sorted, distinct).
pub fn optimal_on_grid(
    instance: &Instance,
    grid: &[Ratio],
    limits: &OracleLimits,
) -> Result<(CostBreakdown, Schedule)> {
    instance.validate()?;
    if grid.len() > limits.max_candidate_times.min(20) {
        return Err(JrpError::Capacity(format!(
            "{} candidate times exceed the limit of {}",
            grid.len(),
            limits.max_candidate_times
        )));
    }
    if instance.requests.len() > limits.max_requests {
        return Err(JrpError::Capacity(format!(
            "{} requests exceed the limit of {}",
            instance.requests.len(),
            limits.max_requests
        )));
    }
    if instance.requests.is_empty() {
        return Ok((CostBreakdown::default(), Schedule::default()));
    }
    let table = Table::build(instance, grid)?;
    let choice = match table.to_integers() {
        Some(int_table) => search(&int_table),
        None => search(&table),
    };
    let schedule = assemble(instance, grid, &table, &choice)?;
    let cost = evaluate_schedule(instance, &schedule)?;
    let expected = table.unscale(&choice.cost);
    if Extended::Finite(cost.total.clone()) != expected {
        return Err(JrpError::Internal(format!(
            "oracle schedule evaluates to {} but the search found {expected}",
            cost.total
        )));
    }
    Ok((cost, schedule))
}

trait Cost: Clone + Ord {
    fn inf() -> Self;
    fn plus(&self, other: &Self) -> Self;
    fn times(&self, k: u32) -> Self;
}

const INT_INF: i128 = i128::MAX / 4;

impl Cost for i128 {
    fn inf() -> Self {
        INT_INF
    }
    fn plus(&self, other: &Self) -> Self {
        if *self >= INT_INF || *other >= INT_INF {
            INT_INF
        } else {
            (self + other).min(INT_INF)
        }
    }
    fn times(&self, k: u32) -> Self {
        if *self >= INT_INF {
            INT_INF
        } else {
            self * k as i128
        }
    }
}

impl Cost for Extended {
    fn inf() -> Self {
        Extended::Infinite
    }
    fn plus(&self, other: &Self) -> Self {
        match (self, other) {
            (Extended::Finite(a), Extended::Finite(b)) => Extended::Finite(a + b),
            _ => Extended::Infinite,
        }
    }
    fn times(&self, k: u32) -> Self {
        match self {
            Extended::Finite(a) => Extended::Finite(a * &Ratio::from_int(k as i64)),
            Extended::Infinite => Extended::Infinite,
        }
    }
}

/// Scaled cost data for one instance on one grid.
struct Table<C> {
    m: usize,
    root: C,
    items: Vec<ItemTable<C>>,
    scale: Ratio,
}

struct ItemTable<C> {
    cost: C,
    requests: Vec<RequestRow<C>>,
}

struct RequestRow<C> {
    id: u64,
    /// Bits of grid times at or after the arrival.
    feasible: u32,
    /// Bits of grid times at or before the deadline.
    early: u32,
    at: Vec<C>,
}

impl<C: Cost> RequestRow<C> {
    /// Cheapest opened time in `mask`: the latest one not after the deadline
    /// or the earliest one after it. Ties prefer the earlier time.
    fn best(&self, mask: u32) -> Option<usize> {
        let allowed = mask & self.feasible;
        let before = allowed & self.early;
        let after = allowed & !self.early;
        let lo = (before != 0).then(|| 31 - before.leading_zeros() as usize);
        let hi = (after != 0).then(|| after.trailing_zeros() as usize);
        match (lo, hi) {
            (Some(l), Some(h)) => Some(if self.at[h] < self.at[l] { h } else { l }),
            (l, h) => l.or(h),
        }
    }

    fn best_cost(&self, mask: u32) -> C {
        self.best(mask).map_or_else(C::inf, |k| self.at[k].clone())
    }
}

fn lcm_of<'a>(values: impl Iterator<Item = &'a Ratio>) -> BigInt {
    values.fold(BigInt::one(), |acc, v| acc.lcm(v.denom()))
}

impl Table<Extended> {
    fn build(instance: &Instance, grid: &[Ratio]) -> Result<Self> {
        let m = grid.len();
        let time_scale = lcm_of(grid.iter());
        let mut rates: Vec<&Ratio> = vec![&instance.root_cost, &instance.hold_rate];
        rates.extend(instance.item_costs.iter());
        rates.extend(instance.backlog_rate.finite());
        for r in &instance.requests {
            rates.extend(r.hold_rate.iter());
            rates.extend(r.backlog_rate.iter());
        }
        let rate_scale = lcm_of(rates.into_iter());
        let scale = Ratio::from_bigs(time_scale * rate_scale, BigInt::one());
        let mut items: Vec<ItemTable<Extended>> = instance
            .item_costs
            .iter()
            .map(|c| ItemTable {
                cost: Extended::Finite(c * &scale),
                requests: Vec::new(),
            })
            .collect();
        for req in &instance.requests {
            let h = instance.hold_rate_of(req);
            let b = instance.backlog_rate_of(req);
            let mut row = RequestRow {
                id: req.id,
                feasible: 0,
                early: 0,
                at: Vec::with_capacity(m),
            };
            for (k, t) in grid.iter().enumerate() {
                if t >= &req.arrival {
                    row.feasible |= 1 << k;
                }
                if t <= &req.deadline {
                    row.early |= 1 << k;
                }
                let cost = if t < &req.arrival {
                    Extended::Infinite
                } else if t <= &req.deadline {
                    Extended::Finite(&h * &(&req.deadline - t) * &scale)
                } else {
                    match &b {
                        Extended::Finite(b) => Extended::Finite(b * &(t - &req.deadline) * &scale),
                        Extended::Infinite => Extended::Infinite,
                    }
                };
                row.at.push(cost);
            }
            items[req.item].requests.push(row);
        }
        Ok(Table {
            m,
            root: Extended::Finite(&instance.root_cost * &scale),
            items,
            scale,
        })
    }

    /// Integer copy when every scaled value is integral and sums stay far
    /// from overflow.
    fn to_integers(&self) -> Option<Table<i128>> {
        let terms = self
            .items
            .iter()
            .map(|i| i.requests.len() + self.m)
            .sum::<usize>()
            + self.m
            + 1;
        let bound = (1i128 << 100) / terms as i128;
        let conv = |c: &Extended| -> Option<i128> {
            match c {
                Extended::Infinite => Some(INT_INF),
                Extended::Finite(r) => {
                    if !r.denom().is_one() {
                        return None;
                    }
                    r.numer().to_i128().filter(|v| v.abs() < bound)
                }
            }
        };
        let items = self
            .items
            .iter()
            .map(|it| {
                Some(ItemTable {
                    cost: conv(&it.cost)?,
                    requests: it
                        .requests
                        .iter()
                        .map(|row| {
                            Some(RequestRow {
                                id: row.id,
                                feasible: row.feasible,
                                early: row.early,
                                at: row.at.iter().map(conv).collect::<Option<Vec<_>>>()?,
                            })
                        })
                        .collect::<Option<Vec<_>>>()?,
                })
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Table {
            m: self.m,
            root: conv(&self.root)?,
            items,
            scale: self.scale.clone(),
        })
    }

    fn unscale(&self, cost: &Extended) -> Extended {
        match cost {
            Extended::Finite(c) => Extended::Finite(c / &self.scale),
            Extended::Infinite => Extended::Infinite,
        }
    }
}

/// Lexicographic order of the sorted index lists encoded by two masks.
fn lex_cmp(mut a: u32, mut b: u32) -> Ordering {
    loop {
        match (a == 0, b == 0) {
            (true, true) => return Ordering::Equal,
            (true, false) => return Ordering::Less,
            (false, true) => return Ordering::Greater,
            _ => {}
        }
        let (x, y) = (a.trailing_zeros(), b.trailing_zeros());
        if x != y {
            return x.cmp(&y);
        }
        a &= a - 1;
        b &= b - 1;
    }
}

fn better<C: Ord>(a: (&C, u32), b: (&C, u32)) -> bool {
    a.0.cmp(b.0).then_with(|| lex_cmp(a.1, b.1)) == Ordering::Less
}

/// Chosen root mask, per-item opening masks and the optimum in table units
/// (always carried as a rational so both paths report alike).
struct Choice {
    #[cfg_attr(not(test), allow(dead_code))]
    root: u32,
    items: Vec<u32>,
    cost: Extended,
}

trait IntoExtended {
    fn into_extended(self) -> Extended;
}

impl IntoExtended for i128 {
    fn into_extended(self) -> Extended {
        if self >= INT_INF {
            Extended::Infinite
        } else {
            Extended::Finite(Ratio::from_bigs(BigInt::from(self), BigInt::one()))
        }
    }
}

impl IntoExtended for Extended {
    fn into_extended(self) -> Extended {
        self
    }
}

fn search<C: Cost + IntoExtended>(table: &Table<C>) -> Choice {
    let full = 1usize << table.m;
    // Per item: best (cost, mask) over submasks of every mask.
    let best_sub: Vec<(Vec<C>, Vec<u32>)> = table
        .items
        .iter()
        .map(|item| {
            let mut cost: Vec<C> = (0..full)
                .map(|t| {
                    let t = t as u32;
                    if t == 0 {
                        return if item.requests.is_empty() {
                            zero_like(&item.cost)
                        } else {
                            C::inf()
                        };
                    }
                    item.requests
                        .iter()
                        .fold(item.cost.times(t.count_ones()), |acc, row| {
                            acc.plus(&row.best_cost(t))
                        })
                })
                .collect();
            let mut arg: Vec<u32> = (0..full as u32).collect();
            for bit in 0..table.m {
                for s in 0..full {
                    if s & (1 << bit) != 0 {
                        let sub = s ^ (1 << bit);
                        if better((&cost[sub], arg[sub]), (&cost[s], arg[s])) {
                            cost[s] = cost[sub].clone();
                            arg[s] = arg[sub];
                        }
                    }
                }
            }
            (cost, arg)
        })
        .collect();
    let mut best: Option<(C, u32)> = None;
    for s in 1..full {
        let total = best_sub
            .iter()
            .fold(table.root.times((s as u32).count_ones()), |acc, (c, _)| {
                acc.plus(&c[s])
            });
        if best
            .as_ref()
            .is_none_or(|(bc, bs)| better((&total, s as u32), (bc, *bs)))
        {
            best = Some((total, s as u32));
        }
    }
    let (cost, root) = best.expect("grid is nonempty");
    Choice {
        root,
        items: best_sub.iter().map(|(_, arg)| arg[root as usize]).collect(),
        cost: cost.into_extended(),
    }
}

/// Zero of the cost type, derived from any finite value.
fn zero_like<C: Cost>(finite: &C) -> C {
    finite.times(0)
}

fn assemble(
    instance: &Instance,
    grid: &[Ratio],
    table: &Table<Extended>,
    choice: &Choice,
) -> Result<Schedule> {
    let mut per_time: Vec<ServiceRecord> =
        grid.iter().map(|t| ServiceRecord::new(t.clone())).collect();
    let mut picks: Vec<(u64, usize, usize)> = Vec::new();
    for (v, item) in table.items.iter().enumerate() {
        for row in &item.requests {
            let k = row.best(choice.items[v]).ok_or_else(|| {
                JrpError::Internal(format!("request {} has no feasible opened time", row.id))
            })?;
            picks.push((row.id, v, k));
        }
    }
    let index = instance.request_index();
    let mut used: Vec<bool> = vec![false; grid.len()];
    for (id, v, k) in &picks {
        used[*k] = true;
        let rec = &mut per_time[*k];
        if !rec.mature_items.contains(v) {
            rec.mature_items.push(*v);
        }
        let list = if grid[*k] > index[id].deadline {
            rec.mature_backlog_served.entry(*v).or_default()
        } else {
            rec.local_holding_served.entry(*v).or_default()
        };
        list.push(*id);
    }
    let mut schedule = Schedule::default();
    for (k, mut rec) in per_time.into_iter().enumerate() {
        if !used[k] {
            continue;
        }
        rec.mature_items.sort();
        let i = schedule.services.len();
        for ids in rec.mature_backlog_served.values_mut() {
            ids.sort();
            for id in ids.iter() {
                schedule.assign(*id, i, Phase::MatureBacklog);
            }
        }
        for ids in rec.local_holding_served.values_mut() {
            ids.sort();
            for id in ids.iter() {
                schedule.assign(*id, i, Phase::LocalHolding);
            }
        }
        schedule.services.push(rec);
    }
    Ok(schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Request;
    use crate::policy_multi::run_multi_item;
    use crate::policy_single::{run_single_item, SingleMode};
    use crate::ratio::r;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn inst(
        root: Ratio,
        items: Vec<Ratio>,
        b: Extended,
        reqs: Vec<(usize, Ratio, Ratio)>,
    ) -> Instance {
        Instance {
            root_cost: root,
            item_costs: items,
            hold_rate: r(1, 1),
            backlog_rate: b,
            nonuniform: false,
            requests: reqs
                .into_iter()
                .enumerate()
                .map(|(i, (v, a, d))| Request::new(i as u64, v, a, d))
                .collect(),
        }
    }

    fn opt(i: &Instance) -> Ratio {
        optimal_offline(i, &OracleLimits::for_instance(i))
            .unwrap()
            .0
            .total
    }

    /// Independent brute force: every map from requests to grid times.
    fn brute(i: &Instance, grid: &[Ratio]) -> Option<Ratio> {
        let n = i.requests.len();
        let m = grid.len();
        let mut best: Option<Ratio> = None;
        let mut choice = vec![0usize; n];
        loop {
            let mut ok = true;
            let mut total = Ratio::zero();
            let mut roots = BTreeSet::new();
            let mut opened = BTreeSet::new();
            for (req, &k) in i.requests.iter().zip(&choice) {
                match crate::cost::delay_cost(i, req, &grid[k]) {
                    Ok(c) => total += c,
                    Err(_) => ok = false,
                }
                roots.insert(k);
                opened.insert((k, req.item));
            }
            if ok {
                total += &i.root_cost * &Ratio::from_int(roots.len() as i64);
                for (_, v) in &opened {
                    total += i.item_cost(*v);
                }
                if best.as_ref().is_none_or(|b| &total < b) {
                    best = Some(total);
                }
            }
            let mut pos = 0;
            loop {
                if pos == n {
                    return best;
                }
                choice[pos] += 1;
                if choice[pos] < m {
                    break;
                }
                choice[pos] = 0;
                pos += 1;
            }
        }
    }

    #[test]
    fn candidate_examples() {
        let a = inst(
            r(0, 1),
            vec![r(1, 1)],
            Extended::Finite(r(1, 1)),
            vec![(0, r(0, 1), r(0, 1)), (0, r(0, 1), r(10, 1))],
        );
        assert_eq!(candidate_times(&a), vec![r(0, 1), r(10, 1)]);
        let b = inst(
            r(0, 1),
            vec![r(1, 1)],
            Extended::Finite(r(1, 1)),
            vec![(0, r(0, 1), r(1, 2)), (0, r(1, 2), r(1, 2))],
        );
        assert_eq!(candidate_times(&b), vec![r(0, 1), r(1, 2)]);
        let e = inst(r(0, 1), vec![r(1, 1)], Extended::Finite(r(1, 1)), vec![]);
        assert!(candidate_times(&e).is_empty());
        assert_eq!(opt(&e), Ratio::zero());
    }

    #[test]
    fn single_item_examples() {
        let one = inst(
            r(0, 1),
            vec![r(1, 1)],
            Extended::Finite(r(1, 1)),
            vec![(0, r(0, 1), r(0, 1))],
        );
        assert_eq!(opt(&one), r(1, 1));
        let two = inst(
            r(0, 1),
            vec![r(1, 1)],
            Extended::Finite(r(1, 1)),
            vec![(0, r(0, 1), r(0, 1)), (0, r(0, 1), r(10, 1))],
        );
        let (cost, sched) = optimal_offline(&two, &OracleLimits::for_instance(&two)).unwrap();
        assert_eq!(cost.total, r(2, 1));
        let times: Vec<_> = sched.services.iter().map(|s| s.time.clone()).collect();
        assert_eq!(times, vec![r(0, 1), r(10, 1)]);
    }

    #[test]
    fn premature_example() {
        let i = inst(
            r(1, 1),
            vec![r(1, 1), r(2, 1)],
            Extended::Finite(r(1, 1)),
            vec![(0, r(0, 1), r(0, 1)), (1, r(0, 1), r(3, 2))],
        );
        assert_eq!(opt(&i), r(5, 1));
        assert_eq!(brute(&i, &candidate_times(&i)), Some(r(5, 1)));
    }

    #[test]
    fn hard_deadlines_are_respected() {
        let i = inst(
            r(0, 1),
            vec![r(1, 1)],
            Extended::Infinite,
            vec![(0, r(0, 1), r(1, 1)), (0, r(2, 1), r(3, 1))],
        );
        assert_eq!(opt(&i), r(2, 1));
    }

    #[test]
    fn limits_abort_before_search() {
        let reqs = (0..5).map(|k| (0, r(2 * k, 1), r(2 * k + 1, 1))).collect();
        let i = inst(
            r(1, 1),
            vec![r(1, 1), r(1, 1)],
            Extended::Finite(r(1, 1)),
            reqs,
        );
        assert!(matches!(
            optimal_offline(&i, &OracleLimits::for_instance(&i)),
            Err(JrpError::Capacity(_))
        ));
    }

    #[test]
    fn lexicographic_tie_break() {
        // Zero root cost, one request: serving at 0 or 1 costs the same.
        let mut i = inst(
            r(0, 1),
            vec![r(1, 1)],
            Extended::Finite(r(1, 1)),
            vec![(0, r(0, 1), r(1, 1))],
        );
        i.hold_rate = Ratio::zero();
        let (_, s) = optimal_offline(&i, &OracleLimits::for_instance(&i)).unwrap();
        assert_eq!(s.services[0].time, r(0, 1));
    }

    #[test]
    fn rational_path_agrees_with_integer_path() {
        let i = inst(
            r(1, 3),
            vec![r(2, 7), r(5, 2)],
            Extended::Finite(r(3, 2)),
            vec![
                (0, r(0, 1), r(1, 2)),
                (1, r(1, 3), r(1, 1)),
                (1, r(0, 1), r(0, 1)),
            ],
        );
        let grid = candidate_times(&i);
        let table = Table::build(&i, &grid).unwrap();
        let slow = search(&table);
        let fast = search(&table.to_integers().unwrap());
        assert_eq!(slow.cost, fast.cost);
        assert_eq!(slow.root, fast.root);
        assert_eq!(slow.items, fast.items);
    }

    fn small_instance(items: usize) -> impl Strategy<Value = Instance> {
        let req = (0..items, 0i64..4, 0i64..3);
        (
            0i64..4,
            proptest::collection::vec(1i64..4, items),
            1i64..3,
            0i64..3,
            proptest::collection::vec(req, 1..5),
        )
            .prop_map(move |(root, costs, b, h, reqs)| {
                let mut i = inst(
                    r(root, 2),
                    costs.into_iter().map(|c| r(c, 2)).collect(),
                    Extended::Finite(r(b, 1)),
                    reqs.into_iter()
                        .map(|(v, a, len)| (v, r(a, 2), r(a + len, 2)))
                        .collect(),
                );
                i.hold_rate = r(h, 2);
                if i.item_count() == 1 && i.root_cost.is_zero() {
                    i.root_cost = r(1, 2);
                }
                i
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn matches_independent_brute_force(i in small_instance(2)) {
            let grid = candidate_times(&i);
            prop_assert_eq!(Some(opt(&i)), brute(&i, &grid));
        }

        #[test]
        fn never_above_policies(i in small_instance(2), j in small_instance(1)) {
            let alg = evaluate_schedule(&i, &run_multi_item(&i).unwrap()).unwrap().total;
            prop_assert!(opt(&i) <= alg);
            let alg1 = evaluate_schedule(&j, &run_single_item(&j, SingleMode::Backlog).unwrap()).unwrap().total;
            prop_assert!(opt(&j) <= alg1);
        }

        #[test]
        fn deleting_a_request_never_increases(i in small_instance(2), k in 0usize..8) {
            let id = i.requests[k % i.requests.len()].id;
            prop_assert!(opt(&i.without_request(id)) <= opt(&i));
        }

        #[test]
        fn grid_refinement_never_helps(i in small_instance(2)) {
            let grid = candidate_times(&i);
            prop_assume!(grid.len() <= 3);
            let mut fine = grid.clone();
            for w in grid.windows(2) {
                fine.push(w[0].midpoint(&w[1]));
            }
            fine.sort();
            let limits = OracleLimits { max_candidate_times: 8, max_requests: 64 };
            let refined = optimal_on_grid(&i, &fine, &limits).unwrap().0.total;
            prop_assert_eq!(refined, opt(&i));
        }
    }
}
