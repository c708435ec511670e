//! Dual construction. Every charge is computed unweighted, logged, and then
//! added to the running solution at its weight.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{JrpError, Result};
use crate::model::{Extended, Instance, ItemId, Request, RequestId, Schedule, ServiceRecord};
use crate::policy_single::{backlog_set, holding_set};
use crate::pwl::PiecewiseLinear;
use crate::ratio::Ratio;

use super::{
    AssignmentCase, ChargeContext, ChargeCount, ChargeKind, ChargeRecord, DualSolution,
    DualVariant, LocalCase, Window,
};

pub(super) struct Ctx<'a> {
    pub instance: &'a Instance,
    pub schedule: &'a Schedule,
    reqs: BTreeMap<RequestId, &'a Request>,
    pub h: Ratio,
    pub b: Ratio,
}

impl<'a> Ctx<'a> {
    pub fn new(instance: &'a Instance, schedule: &'a Schedule) -> Result<Self> {
        if instance.nonuniform {
            return Err(JrpError::Usage(
                "the fitted dual needs uniform holding and backlog rates".into(),
            ));
        }
        let b = instance.finite_backlog("the fitted dual")?.clone();
        Ok(Ctx {
            instance,
            schedule,
            reqs: instance.request_index(),
            h: instance.hold_rate.clone(),
            b,
        })
    }

    pub fn req(&self, id: RequestId) -> Result<&'a Request> {
        self.reqs
            .get(&id)
            .copied()
            .ok_or_else(|| JrpError::TraceCorruption(format!("unknown request {id} in trace")))
    }

    fn reqs_of(&self, ids: &[RequestId]) -> Result<Vec<&'a Request>> {
        ids.iter().map(|&id| self.req(id)).collect()
    }

    fn record(&self, i: usize) -> Result<&'a ServiceRecord> {
        self.schedule
            .services
            .get(i)
            .ok_or_else(|| JrpError::TraceCorruption(format!("no service {i}")))
    }

    fn time(&self, i: usize) -> &'a Ratio {
        &self.schedule.services[i].time
    }

    /// Time of the service before `i`, zero for the first.
    fn prev_time(&self, i: usize) -> Ratio {
        if i == 0 {
            Ratio::zero()
        } else {
            self.time(i - 1).clone()
        }
    }

    fn backlog(&self, r: &Request, t: &Ratio) -> Ratio {
        &self.b * &(t - &r.deadline)
    }

    fn holding(&self, r: &Request, t: &Ratio) -> Ratio {
        &self.h * &(&r.deadline - t)
    }

    /// β equal to α on `(max(a, d − α/h), d + α/b)`, closed at the arrival
    /// when the arrival is the binding end.
    fn plateau(&self, r: &Request, alpha: &Ratio) -> PiecewiseLinear {
        if alpha.is_zero() {
            return PiecewiseLinear::zero();
        }
        let hi = &r.deadline + &(alpha / &self.b);
        let (lo, lo_closed) = if self.h.is_zero() {
            (r.arrival.clone(), true)
        } else {
            let foot = &r.deadline - &(alpha / &self.h);
            if r.arrival > foot {
                (r.arrival.clone(), true)
            } else {
                (foot, false)
            }
        };
        PiecewiseLinear::plateau(lo, lo_closed, hi, false, alpha.clone())
    }

    /// β = max(0, α − h(d − t)) on `[a, d]` and max(0, α − b(t − d)) after.
    fn tent(&self, r: &Request, alpha: &Ratio) -> PiecewiseLinear {
        if alpha.is_zero() {
            return PiecewiseLinear::zero();
        }
        let d = &r.deadline;
        let lo = if self.h.is_zero() {
            r.arrival.clone()
        } else {
            (d - &(alpha / &self.h)).max(r.arrival.clone())
        };
        let rise = PiecewiseLinear::piece(
            lo.clone(),
            true,
            d.clone(),
            true,
            alpha - &self.holding(r, &lo),
            self.h.clone(),
        );
        let fall = PiecewiseLinear::piece(
            d.clone(),
            false,
            d + &(alpha / &self.b),
            false,
            alpha.clone(),
            -&self.b,
        );
        rise.add(&fall)
    }

    /// Last service before `i` that buys `item`.
    fn last_including(&self, item: ItemId, i: usize) -> Option<usize> {
        (0..i)
            .rev()
            .find(|&j| self.schedule.services[j].includes(item))
    }
}

fn sorted_by_arrival(mut v: Vec<&Request>) -> Vec<&Request> {
    v.sort_by(|x, y| x.arrival_key().cmp(&y.arrival_key()));
    v
}

fn latest_deadline<'a>(v: &[&'a Request]) -> Option<&'a Request> {
    v.iter()
        .copied()
        .max_by(|x, y| x.deadline_key().cmp(&y.deadline_key()))
}

fn earliest_deadline<'a>(v: &[&'a Request]) -> Option<&'a Request> {
    v.iter()
        .copied()
        .min_by(|x, y| x.deadline_key().cmp(&y.deadline_key()))
}

fn member_list(groups: &[&[&Request]]) -> Vec<RequestId> {
    let set: BTreeSet<RequestId> = groups.iter().flat_map(|g| g.iter().map(|r| r.id)).collect();
    set.into_iter().collect()
}

fn partition_in(
    ctx: &Ctx,
    record: &ServiceRecord,
    item: ItemId,
) -> Result<(Vec<RequestId>, Vec<RequestId>)> {
    if !record.mature_items.contains(&item) {
        return Err(JrpError::TraceCorruption(format!(
            "item {item} is not mature at time {}",
            record.time
        )));
    }
    let served = record.mature_backlog_served.get(&item).ok_or_else(|| {
        JrpError::TraceCorruption(format!("mature item {item} has no backlog record"))
    })?;
    let order = sorted_by_arrival(ctx.reqs_of(served)?);
    let cost = ctx.instance.item_cost(item);
    let mut sum = Ratio::zero();
    for (k, r) in order.iter().enumerate() {
        sum += ctx.backlog(r, &record.time);
        if &sum >= cost {
            let ids: Vec<RequestId> = order.iter().map(|r| r.id).collect();
            let from = if &sum == cost { k + 1 } else { k };
            return Ok((ids[..=k].to_vec(), ids[from..].to_vec()));
        }
    }
    Err(JrpError::TraceCorruption(format!(
        "backlog of mature item {item} at time {} is {sum}, below its cost {cost}",
        record.time
    )))
}

/// Splits the mature-phase backlog of `item` into the arrival-order prefix
/// that first reaches c(v) and the suffix carrying the surplus. The two
/// share one request when the prefix overshoots.
pub fn partition_lr(
    instance: &Instance,
    record: &ServiceRecord,
    item: ItemId,
) -> Result<(Vec<RequestId>, Vec<RequestId>)> {
    let schedule = Schedule::default();
    let ctx = Ctx::new(instance, &schedule)?;
    partition_in(&ctx, record, item)
}

fn local_in(ctx: &Ctx, item: ItemId, i: usize, case: LocalCase) -> Result<ChargeRecord> {
    let record = ctx.record(i)?;
    let cost = ctx.instance.item_cost(item).clone();
    let prev = ctx.last_including(item, i);
    let t_prev = prev.map_or_else(Ratio::zero, |l| ctx.time(l).clone());
    let h_ids: &[RequestId] = prev
        .and_then(|l| ctx.schedule.services[l].local_holding_served.get(&item))
        .map_or(&[], Vec::as_slice);
    let hold = ctx.reqs_of(h_ids)?;

    let (b_ids, t_star) = match case {
        LocalCase::Mature => (partition_in(ctx, record, item)?.0, record.time.clone()),
        LocalCase::Premature => {
            let c = record.premature_contributors.get(&item).ok_or_else(|| {
                JrpError::TraceCorruption(format!(
                    "premature item {item} of service {i} has no contributors"
                ))
            })?;
            (c.requests.clone(), c.maturity.clone())
        }
    };
    let back = sorted_by_arrival(ctx.reqs_of(&b_ids)?);
    let Some(rho_star) = back.last().copied() else {
        return Err(JrpError::TraceCorruption(format!(
            "empty backlog set for item {item} in service {i}"
        )));
    };

    let b_sum: Ratio = back.iter().map(|r| ctx.backlog(r, &t_star)).sum();
    if b_sum < cost {
        return Err(JrpError::TraceCorruption(format!(
            "backlog {b_sum} of item {item} at {t_star} is below its cost {cost}"
        )));
    }
    let h_sum: Ratio = hold.iter().map(|r| ctx.holding(r, &t_prev)).sum();
    let h_max = latest_deadline(&hold).map_or_else(Ratio::zero, |r| ctx.holding(r, &t_prev));
    let early: Vec<&Request> = back
        .iter()
        .copied()
        .filter(|r| r.arrival <= t_prev)
        .collect();
    let b_max = earliest_deadline(&early).map_or_else(Ratio::zero, |r| ctx.backlog(r, &t_star));
    let others: Ratio = back[..back.len() - 1]
        .iter()
        .map(|r| ctx.backlog(r, &t_star))
        .sum();

    let mut alpha = BTreeMap::new();
    let mut x_ctx = None;
    if h_max > b_max {
        for r in &hold {
            alpha.insert(r.id, Ratio::zero());
        }
        for r in &back[..back.len() - 1] {
            alpha.insert(r.id, ctx.backlog(r, &t_star));
        }
        let rest = &cost - &others;
        if rest.is_negative() {
            return Err(JrpError::CertifierInvariant(format!(
                "negative remainder {rest} on request {}",
                rho_star.id
            )));
        }
        alpha.insert(rho_star.id, rest);
    } else {
        for r in &hold {
            alpha.insert(r.id, ctx.holding(r, &t_prev));
        }
        let x = &cost - &h_sum;
        let mut left = x.clone();
        for r in &back {
            let a = left.clone().min(ctx.backlog(r, &t_star));
            left -= &a;
            alpha.insert(r.id, a);
        }
        x_ctx = Some(x);
    }

    let all: Vec<&Request> = hold.iter().chain(back.iter()).copied().collect();
    let beta = all
        .iter()
        .map(|r| (r.id, ctx.plateau(r, &alpha[&r.id])))
        .filter(|(_, f)| !f.is_zero())
        .collect();
    let rho_cap = (case == LocalCase::Mature).then(|| (rho_star.id, &cost - &others));
    Ok(ChargeRecord {
        kind: ChargeKind::Local(case),
        assignment: i,
        service: i,
        item: Some(item),
        weight: Ratio::new(1, 4),
        alpha,
        beta,
        gamma: BTreeMap::new(),
        window: Window {
            lo: t_prev,
            lo_closed: prev.is_none(),
            hi: t_star,
            hi_closed: false,
        },
        context: ChargeContext {
            h_max,
            b_max,
            h_sum,
            b_sum,
            sb: None,
            x: x_ctx,
            nu: Ratio::one(),
            holding_budget: cost.clone(),
        },
        members: member_list(&[&hold, &back]),
        target: cost,
        rho_star: rho_cap,
    })
}

/// Unweighted local charge of `item` for service `service` (0-based), paid
/// from the item's backlog set and the local holding of the last earlier
/// service that bought it.
pub fn local_charge(
    instance: &Instance,
    schedule: &Schedule,
    item: ItemId,
    service: usize,
    case: LocalCase,
) -> Result<ChargeRecord> {
    local_in(&Ctx::new(instance, schedule)?, item, service, case)
}

fn unique_in(ctx: &Ctx, id: RequestId, i: usize, current: &Ratio) -> Result<ChargeRecord> {
    let r = ctx.req(id)?;
    let t = ctx.time(i);
    let full = ctx.backlog(r, t);
    let delta = &full - current;
    if delta.is_negative() {
        return Err(JrpError::CertifierInvariant(format!(
            "request {id} already holds α = {current} above its backlog {full}"
        )));
    }
    let f = PiecewiseLinear::plateau(r.arrival.clone(), true, t.clone(), true, delta.clone());
    let mut beta = BTreeMap::new();
    let mut gamma = BTreeMap::new();
    if !f.is_zero() {
        gamma.insert(r.item, f.clone());
        beta.insert(id, f);
    }
    Ok(ChargeRecord {
        kind: ChargeKind::UniqueGlobal,
        assignment: i,
        service: i,
        item: Some(r.item),
        weight: Ratio::one(),
        alpha: BTreeMap::from([(id, delta.clone())]),
        beta,
        gamma,
        window: Window {
            lo: ctx.prev_time(i),
            lo_closed: i == 0,
            hi: t.clone(),
            hi_closed: true,
        },
        context: ChargeContext {
            nu: Ratio::one(),
            ..ChargeContext::default()
        },
        members: vec![id],
        target: delta,
        rho_star: None,
    })
}

/// Raises α of request `id` to its backlog at service `service`, given its
/// current value, with β and γ carrying the increase from arrival to the
/// service time.
pub fn unique_global_charge(
    instance: &Instance,
    schedule: &Schedule,
    id: RequestId,
    service: usize,
    current: &Ratio,
) -> Result<ChargeRecord> {
    unique_in(&Ctx::new(instance, schedule)?, id, service, current)
}

fn common_in(ctx: &Ctx, i: usize) -> Result<ChargeRecord> {
    if i == 0 {
        return Err(JrpError::Internal(
            "the two-sided global charge needs a previous service".into(),
        ));
    }
    let record = ctx.record(i)?;
    let before = ctx.record(i - 1)?;
    let t = &record.time;
    let t_prev = &before.time;
    let root = ctx.instance.root_cost.clone();
    let prev_items = before.items();

    let mut sb = Ratio::zero();
    let mut b_ids = Vec::new();
    for &v in record
        .mature_items
        .iter()
        .filter(|v| prev_items.contains(v))
    {
        let served = record
            .mature_backlog_served
            .get(&v)
            .map_or(&[][..], Vec::as_slice);
        let total: Ratio = ctx.reqs_of(served)?.iter().map(|r| ctx.backlog(r, t)).sum();
        sb += total - ctx.instance.item_cost(v);
        b_ids.extend(partition_in(ctx, record, v)?.1);
    }
    if sb.is_negative() {
        return Err(JrpError::TraceCorruption(format!(
            "negative shared surplus {sb} at service {i}"
        )));
    }
    let back = sorted_by_arrival(ctx.reqs_of(&b_ids)?);
    if back.is_empty() {
        return Err(JrpError::Internal(format!(
            "no shared surplus requests at service {i}"
        )));
    }
    let hold = ctx.reqs_of(&before.global_holding_served)?;

    let b_sum: Ratio = back.iter().map(|r| ctx.backlog(r, t)).sum();
    let h_sum: Ratio = hold.iter().map(|r| ctx.holding(r, t_prev)).sum();
    let h_max = latest_deadline(&hold).map_or_else(Ratio::zero, |r| ctx.holding(r, t_prev));
    let early: Vec<&Request> = back
        .iter()
        .copied()
        .filter(|r| &r.arrival <= t_prev)
        .collect();
    let b_max = earliest_deadline(&early).map_or_else(Ratio::zero, |r| ctx.backlog(r, t));

    let share = |num: Ratio| {
        if b_sum.is_zero() || !num.is_positive() {
            Ratio::zero()
        } else {
            num / &b_sum
        }
    };
    let mut alpha = BTreeMap::new();
    let factor = if h_max > b_max {
        for r in &hold {
            alpha.insert(r.id, Ratio::zero());
        }
        share(sb.clone())
    } else {
        for r in &hold {
            alpha.insert(r.id, ctx.holding(r, t_prev));
        }
        share(&sb - &h_sum)
    };
    for r in &back {
        alpha.insert(r.id, ctx.backlog(r, t) * &factor);
    }

    let all: Vec<&Request> = hold.iter().chain(back.iter()).copied().collect();
    let mut beta = BTreeMap::new();
    let mut per_item: BTreeMap<ItemId, Vec<PiecewiseLinear>> = BTreeMap::new();
    for r in &all {
        let f = ctx.plateau(r, &alpha[&r.id]);
        if f.is_zero() {
            continue;
        }
        per_item.entry(r.item).or_default().push(f.clone());
        beta.insert(r.id, f);
    }
    let gamma = per_item
        .into_iter()
        .map(|(v, fs)| (v, crate::pwl::sum_all(&fs)))
        .collect();
    Ok(ChargeRecord {
        kind: ChargeKind::CommonGlobal,
        assignment: i,
        service: i,
        item: None,
        weight: Ratio::new(1, 2),
        alpha,
        beta,
        gamma,
        window: Window {
            lo: t_prev.clone(),
            lo_closed: false,
            hi: t.clone(),
            hi_closed: false,
        },
        context: ChargeContext {
            h_max,
            b_max,
            h_sum,
            b_sum,
            sb: Some(sb.clone()),
            x: None,
            nu: Ratio::one(),
            holding_budget: root,
        },
        members: member_list(&[&hold, &back]),
        target: sb,
        rho_star: None,
    })
}

/// Unweighted two-sided global charge for service `service` (0-based, at
/// least 1): surplus requests of items bought by both this and the previous
/// service, together with that service's global holding.
pub fn common_global_charge(
    instance: &Instance,
    schedule: &Schedule,
    service: usize,
) -> Result<ChargeRecord> {
    common_in(&Ctx::new(instance, schedule)?, service)
}

struct Builder {
    sol: DualSolution,
}

impl Builder {
    fn new(variant: DualVariant) -> Self {
        Builder {
            sol: DualSolution {
                variant,
                alpha: BTreeMap::new(),
                beta: BTreeMap::new(),
                gamma: BTreeMap::new(),
                objective: Ratio::zero(),
                charges: BTreeMap::new(),
                increase: Vec::new(),
                cases: Vec::new(),
                log: Vec::new(),
            },
        }
    }

    /// Adds `rec` at its recorded weight and returns the α increase.
    fn apply(&mut self, rec: ChargeRecord) -> Ratio {
        let w = rec.weight.clone();
        let mut added = Ratio::zero();
        for (id, a) in &rec.alpha {
            let d = a * &w;
            added += &d;
            *self.sol.alpha.entry(*id).or_default() += d;
        }
        for (id, f) in &rec.beta {
            self.sol
                .beta
                .entry(*id)
                .or_default()
                .add_assign(&f.scale(&w));
        }
        for (v, f) in &rec.gamma {
            self.sol
                .gamma
                .entry(*v)
                .or_default()
                .add_assign(&f.scale(&w));
        }
        for id in &rec.members {
            let c = self.sol.charges.entry(*id).or_default();
            match rec.kind {
                ChargeKind::Single | ChargeKind::Local(_) => c.local += 1,
                ChargeKind::UniqueGlobal | ChargeKind::CommonGlobal => c.global += 1,
            }
        }
        self.sol.log.push(rec);
        added
    }

    fn finish(mut self) -> Result<DualSolution> {
        self.sol.alpha.retain(|_, a| !a.is_zero());
        self.sol.beta.retain(|_, f| !f.is_zero());
        self.sol.gamma.retain(|_, f| !f.is_zero());
        self.sol.objective = self.sol.alpha.values().sum();
        if let Some((id, c)) = self
            .sol
            .charges
            .iter()
            .find(|(_, c)| c.local > 2 || c.global > 1)
        {
            let ChargeCount { local, global } = c;
            return Err(JrpError::CertifierInvariant(format!(
                "request {id} charged {local} times locally and {global} times globally"
            )));
        }
        Ok(self.sol)
    }
}

fn single_charge(ctx: &Ctx, i: usize) -> Result<ChargeRecord> {
    let s = ctx.instance.service_cost();
    let t = ctx.time(i);
    let t_prev = ctx.prev_time(i);
    let back = sorted_by_arrival(ctx.reqs_of(backlog_set(ctx.schedule, i))?);
    let hold = if i == 0 {
        Vec::new()
    } else {
        ctx.reqs_of(holding_set(ctx.schedule, i - 1))?
    };
    let b_sum: Ratio = back.iter().map(|r| ctx.backlog(r, t)).sum();
    let h_sum: Ratio = hold.iter().map(|r| ctx.holding(r, &t_prev)).sum();
    let h_max = latest_deadline(&hold).map_or_else(Ratio::zero, |r| ctx.holding(r, &t_prev));
    let early: Vec<&Request> = back
        .iter()
        .copied()
        .filter(|r| r.arrival <= t_prev)
        .collect();
    let b_max = earliest_deadline(&early).map_or_else(Ratio::zero, |r| ctx.backlog(r, t));

    let mut alpha = BTreeMap::new();
    if h_max > b_max {
        for r in &hold {
            alpha.insert(r.id, Ratio::zero());
        }
        for r in &back {
            alpha.insert(r.id, ctx.backlog(r, t));
        }
    } else {
        for r in &hold {
            alpha.insert(r.id, ctx.holding(r, &t_prev));
        }
        let factor = (&s - &h_sum) / &s;
        for r in &back {
            alpha.insert(r.id, ctx.backlog(r, t) * &factor);
        }
    }
    let all: Vec<&Request> = hold.iter().chain(back.iter()).copied().collect();
    let beta = all
        .iter()
        .map(|r| (r.id, ctx.tent(r, &alpha[&r.id])))
        .filter(|(_, f)| !f.is_zero())
        .collect();
    Ok(ChargeRecord {
        kind: ChargeKind::Single,
        assignment: i,
        service: i,
        item: Some(0),
        weight: Ratio::one(),
        alpha,
        beta,
        gamma: BTreeMap::new(),
        window: Window {
            lo: t_prev,
            lo_closed: i == 0,
            hi: t.clone(),
            hi_closed: true,
        },
        context: ChargeContext {
            h_max,
            b_max,
            h_sum,
            b_sum,
            sb: None,
            x: None,
            nu: Ratio::one(),
            holding_budget: s.clone(),
        },
        members: member_list(&[&hold, &back]),
        target: s,
        rho_star: None,
    })
}

fn build_single(ctx: &Ctx) -> Result<DualSolution> {
    if ctx.instance.item_count() != 1 {
        return Err(JrpError::Usage(
            "the single-item dual needs a single-item instance".into(),
        ));
    }
    let mut out = Builder::new(DualVariant::Single);
    for i in 0..ctx.schedule.services.len() {
        let rec = single_charge(ctx, i)?;
        let added = out.apply(rec);
        out.sol.increase.push(added);
    }
    out.finish()
}

/// Whether the second step of assignment `i` charges the previous
/// service's premature items locally.
fn premature_case(ctx: &Ctx, i: usize) -> bool {
    if i == 0 {
        return false;
    }
    let before = &ctx.schedule.services[i - 1];
    !before.items_with_active.is_empty()
        && Extended::Finite(ctx.time(i).clone()) > before.excluded_maturity
}

fn build_multi(ctx: &Ctx) -> Result<DualSolution> {
    let mut out = Builder::new(DualVariant::Multi);
    let root = &ctx.instance.root_cost;
    for i in 0..ctx.schedule.services.len() {
        let record = ctx.record(i)?;
        let mut added = Ratio::zero();
        for &v in &record.mature_items {
            added += out.apply(local_in(ctx, v, i, LocalCase::Mature)?);
        }
        if premature_case(ctx, i) {
            for &v in &ctx.schedule.services[i - 1].premature_items {
                let mut rec = local_in(ctx, v, i - 1, LocalCase::Premature)?;
                rec.assignment = i;
                added += out.apply(rec);
            }
            out.sol.cases.push(AssignmentCase::PrematureLocal);
        } else {
            let prev_items = if i == 0 {
                BTreeSet::new()
            } else {
                ctx.schedule.services[i - 1].items()
            };
            let mut step = Vec::new();
            let mut shared = false;
            for &v in &record.mature_items {
                if prev_items.contains(&v) {
                    shared |= !partition_in(ctx, record, v)?.1.is_empty();
                    continue;
                }
                for id in partition_in(ctx, record, v)?.1 {
                    let current = out.sol.alpha.get(&id).cloned().unwrap_or_default();
                    step.push(unique_in(ctx, id, i, &current)?);
                }
            }
            if shared {
                step.push(common_in(ctx, i)?);
            }
            let raw: Ratio = step
                .iter()
                .map(|rec| rec.alpha.values().sum::<Ratio>() * &rec.weight)
                .sum();
            let nu = if &raw > root {
                root / &raw
            } else {
                Ratio::one()
            };
            for mut rec in step {
                rec.weight = &rec.weight * &nu;
                rec.context.nu = nu.clone();
                added += out.apply(rec);
            }
            out.sol.cases.push(AssignmentCase::Global);
        }
        out.sol.increase.push(added);
    }
    out.finish()
}

/// Fitted dual for a trace of the matching policy on `instance`.
pub fn build_dual(
    instance: &Instance,
    schedule: &Schedule,
    variant: DualVariant,
) -> Result<DualSolution> {
    let ctx = Ctx::new(instance, schedule)?;
    match variant {
        DualVariant::Single => build_single(&ctx),
        DualVariant::Multi => build_multi(&ctx),
    }
}
