//! Named instances and seeded random instances.
//!
//! # Random stream
//!
//! `gen_random` draws every value from one SplitMix64 stream seeded with
//! `params.seed` (state initialised to the seed, each step adds
//! `0x9e3779b97f4a7c15` and applies the usual 30/27/31 mixer). Values are
//! derived from 64-bit outputs `u` as follows:
//!
//! - integer in `lo..=hi`: `lo + u mod (hi − lo + 1)`;
//! - rational in `[lo, hi]`: first a denominator `q = 1 + u mod max_den`,
//!   then an integer numerator `k` in `ceil(lo·q)..=floor(hi·q)`, giving
//!   `k/q`. When that numerator range is empty (a narrow range and a small
//!   `q`) the value is `lo` and no numerator is drawn.
//!
//! Draw order: `c(r)`, then `c(v)` for each item in index order, `h`, then
//! `b` unless backlog is forbidden. Then for each request id `0..n`: its
//! item, its arrival in `[0, horizon]`, its deadline in `[arrival, horizon]`.

use num_bigint::BigInt;
use num_integer::Integer;
use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{JrpError, Result};
use crate::model::{Extended, Instance, Request};
use crate::ratio::Ratio;

/// Closed range of rationals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Range {
    pub lo: Ratio,
    pub hi: Ratio,
}

impl Range {
    pub fn new(lo: Ratio, hi: Ratio) -> Self {
        Range { lo, hi }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomParams {
    pub seed: u64,
    pub items: usize,
    pub request_count: usize,
    pub time_horizon: Ratio,
    pub max_denominator: u64,
    pub root_cost: Range,
    pub item_cost: Range,
    pub hold_rate: Range,
    pub backlog_rate: Range,
    /// Forbid backlog (hard deadlines); `backlog_rate` is then unused.
    pub infinite_backlog: bool,
}

impl RandomParams {
    /// Small single-item instances with unit-scale costs.
    pub fn single(seed: u64, request_count: usize) -> Self {
        RandomParams {
            seed,
            items: 1,
            request_count,
            time_horizon: Ratio::from_int(8),
            max_denominator: 2,
            root_cost: Range::new(Ratio::zero(), Ratio::from_int(2)),
            item_cost: Range::new(Ratio::new(1, 2), Ratio::from_int(2)),
            hold_rate: Range::new(Ratio::zero(), Ratio::from_int(2)),
            backlog_rate: Range::new(Ratio::new(1, 2), Ratio::from_int(2)),
            infinite_backlog: false,
        }
    }

    /// Small multi-item instances.
    pub fn multi(seed: u64, items: usize, request_count: usize) -> Self {
        RandomParams {
            items,
            time_horizon: Ratio::from_int(3),
            ..RandomParams::single(seed, request_count)
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(JrpError::Usage(format!("random parameters: {m}")));
        let ranges = [
            &self.root_cost,
            &self.item_cost,
            &self.hold_rate,
            &self.backlog_rate,
        ];
        if self.items == 0 {
            return bad("at least one item is needed");
        }
        if self.max_denominator == 0 {
            return bad("max_denominator must be at least 1");
        }
        if self.time_horizon.is_negative() {
            return bad("negative time horizon");
        }
        if ranges.iter().any(|r| r.lo > r.hi) {
            return bad("empty cost range");
        }
        if self.root_cost.lo.is_negative() || self.hold_rate.lo.is_negative() {
            return bad("negative cost range");
        }
        if !self.item_cost.lo.is_positive() {
            return bad("item costs must be positive");
        }
        if !self.infinite_backlog && !self.backlog_rate.lo.is_positive() {
            return bad("backlog rates must be positive");
        }
        if self.infinite_backlog && self.items != 1 {
            return bad("hard deadlines are single-item only");
        }
        Ok(())
    }
}

struct Stream(SplitMix64);

impl Stream {
    fn int(&mut self, lo: &BigInt, hi: &BigInt) -> BigInt {
        let width: BigInt = hi - lo + 1;
        lo + BigInt::from(self.0.next_u64()).mod_floor(&width)
    }

    fn ratio(&mut self, lo: &Ratio, hi: &Ratio, max_den: u64) -> Ratio {
        let q = BigInt::from(1 + self.0.next_u64() % max_den);
        let scaled_lo = lo.numer() * &q;
        let scaled_hi = hi.numer() * &q;
        let k_lo = scaled_lo.div_ceil(lo.denom());
        let k_hi = scaled_hi.div_floor(hi.denom());
        if k_lo > k_hi {
            return lo.clone();
        }
        Ratio::from_bigs(self.int(&k_lo, &k_hi), q)
    }
}

/// Seed-deterministic instance; see the module docs for the stream.
pub fn gen_random(params: &RandomParams) -> Result<Instance> {
    params.check()?;
    let mut s = Stream(SplitMix64::seed_from_u64(params.seed));
    let den = params.max_denominator;
    let draw = |s: &mut Stream, r: &Range| s.ratio(&r.lo, &r.hi, den);
    let root_cost = draw(&mut s, &params.root_cost);
    let item_costs = (0..params.items)
        .map(|_| draw(&mut s, &params.item_cost))
        .collect();
    let hold_rate = draw(&mut s, &params.hold_rate);
    let backlog_rate = if params.infinite_backlog {
        Extended::Infinite
    } else {
        Extended::Finite(draw(&mut s, &params.backlog_rate))
    };
    let last_item = BigInt::from(params.items - 1);
    let horizon = &params.time_horizon;
    let requests = (0..params.request_count as u64)
        .map(|id| {
            let item = s.int(&BigInt::from(0), &last_item);
            let arrival = s.ratio(&Ratio::zero(), horizon, den);
            let deadline = s.ratio(&arrival, horizon, den);
            let item = usize::try_from(item).expect("item index fits");
            Request::new(id, item, arrival, deadline)
        })
        .collect();
    Ok(Instance {
        root_cost,
        item_costs,
        hold_rate,
        backlog_rate,
        nonuniform: false,
        requests,
    })
}

/// Single item, unit rates, all arrivals at zero: `s` deadlines at 0 and
/// `2s` at each of `2, 4, …, 2K`. Service cost `s` is split as
/// `c(r) = s − 1`, `c(v) = 1`.
pub fn gen_tight(s: u64, k: u64) -> Result<Instance> {
    if s == 0 || k == 0 {
        return Err(JrpError::Usage("gen_tight needs s, K >= 1".into()));
    }
    let s_i = i64::try_from(s).map_err(|_| JrpError::Usage("s is too large".into()))?;
    let mut requests = Vec::new();
    let mut push = |d: Ratio, n: u64| {
        for _ in 0..n {
            let id = requests.len() as u64;
            requests.push(Request::new(id, 0, Ratio::zero(), d.clone()));
        }
    };
    push(Ratio::zero(), s);
    for j in 1..=k {
        push(Ratio::from_int(2 * j as i64), 2 * s);
    }
    Ok(Instance {
        root_cost: Ratio::from_int(s_i - 1),
        item_costs: vec![Ratio::one()],
        hold_rate: Ratio::one(),
        backlog_rate: Extended::Finite(Ratio::one()),
        nonuniform: false,
        requests,
    })
}

/// Single item with per-request rates, `s = 1` split evenly, all arrivals
/// at zero. Requests `0..=N` have deadline `i + 1/2`, holding rate `1/N²`
/// and backlog rate 2; then for each `i` in `1..=N` a group of `N³`
/// requests with deadline `i + 1/10`, holding rate `10/N³` and no backlog
/// cost.
pub fn gen_pathological(n: u64) -> Result<Instance> {
    if n < 2 {
        return Err(JrpError::Usage("gen_pathological needs N >= 2".into()));
    }
    let n_i = i64::try_from(n).map_err(|_| JrpError::Usage("N is too large".into()))?;
    let n2 = Ratio::from_int(n_i * n_i);
    let n3 = n_i
        .checked_pow(3)
        .ok_or_else(|| JrpError::Usage("N is too large".into()))?;
    let mut requests = Vec::new();
    for i in 0..=n_i {
        let d = Ratio::from_int(i) + Ratio::new(1, 2);
        requests.push(
            Request::new(requests.len() as u64, 0, Ratio::zero(), d)
                .with_rates(n2.recip(), Ratio::from_int(2)),
        );
    }
    let group_hold = Ratio::new(10, n3);
    for i in 1..=n_i {
        let d = Ratio::from_int(i) + Ratio::new(1, 10);
        for _ in 0..n3 {
            requests.push(
                Request::new(requests.len() as u64, 0, Ratio::zero(), d.clone())
                    .with_rates(group_hold.clone(), Ratio::zero()),
            );
        }
    }
    Ok(Instance {
        root_cost: Ratio::new(1, 2),
        item_costs: vec![Ratio::new(1, 2)],
        hold_rate: Ratio::one(),
        backlog_rate: Extended::Finite(Ratio::one()),
        nonuniform: true,
        requests,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::{evaluate_schedule, evaluate_services};
    use crate::io::{parse_instance, serialize_instance};
    use crate::model::{Phase, Schedule, ServiceRecord};
    use crate::policy_multi::run_multi_item;
    use crate::policy_single::{run_single_item, SingleMode};
    use crate::ratio::r;
    use proptest::prelude::*;

    #[test]
    fn tight_counts() {
        let i = gen_tight(2, 1).unwrap();
        assert_eq!(
            i.requests.iter().filter(|q| q.deadline.is_zero()).count(),
            2
        );
        assert_eq!(
            i.requests.iter().filter(|q| q.deadline == r(2, 1)).count(),
            4
        );
        assert_eq!(i.service_cost(), r(2, 1));
        assert_eq!(gen_tight(1, 1).unwrap().root_cost, Ratio::zero());
        assert!(gen_tight(0, 1).is_err());
    }

    #[test]
    fn tight_policy_pays_three_s_while_groups_remain() {
        let i = gen_tight(2, 3).unwrap();
        let s = run_single_item(&i, SingleMode::Backlog).unwrap();
        let per = evaluate_services(&i, &s).unwrap();
        let full: Vec<Ratio> = per.iter().take(3).map(|b| b.total.clone()).collect();
        assert_eq!(full, vec![r(6, 1); 3]);
        assert_eq!(
            (
                per[0].service_cost.clone() + per[0].item_cost.clone(),
                per[0].backlog_cost.clone(),
                per[0].holding_cost.clone()
            ),
            (r(2, 1), r(2, 1), r(2, 1))
        );
    }

    /// Serves every request at its own deadline, one service per distinct
    /// deadline.
    fn at_deadlines(i: &Instance) -> Schedule {
        let mut times: Vec<Ratio> = i.requests.iter().map(|q| q.deadline.clone()).collect();
        times.sort();
        times.dedup();
        let mut s = Schedule::default();
        for t in &times {
            let mut rec = ServiceRecord::new(t.clone());
            let ids: Vec<u64> = i
                .requests
                .iter()
                .filter(|q| &q.deadline == t)
                .map(|q| q.id)
                .collect();
            rec.mature_items.push(0);
            rec.local_holding_served.insert(0, ids.clone());
            for id in ids {
                s.assign(id, s.services.len(), Phase::LocalHolding);
            }
            s.services.push(rec);
        }
        s
    }

    #[test]
    fn tight_offline_pays_s_per_service() {
        for (s, k) in [(1, 1), (2, 3), (3, 5)] {
            let i = gen_tight(s, k).unwrap();
            let cost = evaluate_schedule(&i, &at_deadlines(&i)).unwrap().total;
            assert_eq!(cost, Ratio::from_int(((k + 1) * s) as i64));
        }
    }

    #[test]
    fn pathological_counts_and_rates() {
        let i = gen_pathological(4).unwrap();
        assert_eq!(i.requests.len(), 5 + 4 * 64);
        let rho: Vec<&Request> = i.requests.iter().take(5).collect();
        assert!(rho
            .iter()
            .enumerate()
            .all(|(k, q)| q.deadline == Ratio::from_int(k as i64) + r(1, 2)
                && q.hold_rate == Some(r(1, 16))
                && q.backlog_rate == Some(r(2, 1))));
        let group: Vec<&Request> = i.requests.iter().skip(5).collect();
        assert!(group.iter().enumerate().all(|(k, q)| q.deadline
            == Ratio::from_int(k as i64 / 64 + 1) + r(1, 10)
            && q.hold_rate == Some(r(10, 64))
            && q.backlog_rate == Some(Ratio::zero())));
        assert!(i.requests.iter().all(|q| q.arrival.is_zero()));
        assert_eq!(i.service_cost(), Ratio::one());
        assert!(gen_pathological(1).is_err());
    }

    #[test]
    fn pathological_first_service_at_one() {
        let i = gen_pathological(4).unwrap();
        let s = run_single_item(&i, SingleMode::Backlog).unwrap();
        assert_eq!(s.services[0].time, Ratio::one());
    }

    #[test]
    fn pathological_two_service_schedule_cost() {
        let n = 4i64;
        let i = gen_pathological(n as u64).unwrap();
        let mut s = Schedule::default();
        for (k, t) in [Ratio::zero(), Ratio::from_int(n + 1)]
            .into_iter()
            .enumerate()
        {
            let mut rec = ServiceRecord::new(t);
            let ids: Vec<u64> = i
                .requests
                .iter()
                .filter(|q| (q.id as i64 <= n) == (k == 0))
                .map(|q| q.id)
                .collect();
            rec.mature_items.push(0);
            rec.local_holding_served.insert(0, ids.clone());
            for id in ids {
                s.assign(id, k, Phase::LocalHolding);
            }
            s.services.push(rec);
        }
        let expect: Ratio = Ratio::from_int(2)
            + (0..=n)
                .map(|k| (Ratio::from_int(k) + r(1, 2)) / Ratio::from_int(n * n))
                .sum::<Ratio>();
        assert_eq!(evaluate_schedule(&i, &s).unwrap().total, expect);
    }

    #[test]
    fn random_is_seed_deterministic() {
        let p = RandomParams::multi(7, 3, 12);
        let a = serialize_instance(&gen_random(&p).unwrap());
        let b = serialize_instance(&gen_random(&p).unwrap());
        assert_eq!(a, b);
        let other = serialize_instance(&gen_random(&RandomParams { seed: 8, ..p }).unwrap());
        assert_ne!(a, other);
    }

    #[test]
    fn random_stream_is_splitmix64() {
        // Reference outputs for seed 0.
        let mut s = SplitMix64::seed_from_u64(0);
        assert_eq!(s.next_u64(), 0xe220a8397b1dcdaf);
        assert_eq!(s.next_u64(), 0x6e789e6aa1b965f4);
    }

    #[test]
    fn random_empty_request_list() {
        let i = gen_random(&RandomParams::multi(1, 2, 0)).unwrap();
        assert!(i.requests.is_empty());
        assert!(run_multi_item(&i).unwrap().services.is_empty());
        let one = gen_random(&RandomParams::single(1, 0)).unwrap();
        assert!(run_single_item(&one, SingleMode::Backlog)
            .unwrap()
            .services
            .is_empty());
    }

    #[test]
    fn random_rejects_bad_params() {
        let p = RandomParams::single(0, 3);
        assert!(gen_random(&RandomParams {
            items: 0,
            ..p.clone()
        })
        .is_err());
        assert!(gen_random(&RandomParams {
            max_denominator: 0,
            ..p.clone()
        })
        .is_err());
        let empty = Range::new(r(2, 1), r(1, 1));
        assert!(gen_random(&RandomParams {
            item_cost: empty,
            ..p.clone()
        })
        .is_err());
        assert!(gen_random(&RandomParams {
            infinite_backlog: true,
            items: 2,
            ..p
        })
        .is_err());
    }

    proptest! {
        #[test]
        fn random_instances_are_valid(seed in any::<u64>(), items in 1usize..4, n in 0usize..20, den in 1u64..5, inf in any::<bool>()) {
            let p = RandomParams {
                max_denominator: den,
                infinite_backlog: inf && items == 1,
                ..RandomParams::multi(seed, items, n)
            };
            let i = gen_random(&p).unwrap();
            prop_assert!(i.validate().is_ok());
            prop_assert_eq!(i.requests.len(), n);
            for q in &i.requests {
                prop_assert!(q.arrival <= q.deadline && q.deadline <= p.time_horizon);
                prop_assert!(*q.arrival.denom() <= BigInt::from(den));
                prop_assert!(*q.deadline.denom() <= BigInt::from(den));
            }
            prop_assert_eq!(parse_instance(&serialize_instance(&i)).unwrap(), i);
        }
    }
}
