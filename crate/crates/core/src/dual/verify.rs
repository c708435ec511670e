//! Exact feasibility and bound checks for a fitted dual.
//!
//! Every quantity checked is piecewise linear in time, so its supremum over
//! an interval is attained as a point value or a one-sided limit at a knot.
//! Probes cover each knot (value, left and right limit) and the midpoint of
//! every pair of consecutive knots.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cost::evaluate_services;
use crate::model::{Extended, Instance, ItemId, RequestId, Schedule};
use crate::pwl::{sum_all, PiecewiseLinear};
use crate::ratio::Ratio;

use super::{ChargeKind, DualSolution, DualVariant, Window};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Witness {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<Ratio>,
    /// `at`, `left` or `right`: a point value or a one-sided limit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub side: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub request: Option<RequestId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub item: Option<ItemId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub service: Option<usize>,
    pub lhs: Ratio,
    pub rhs: Ratio,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertReport {
    pub variant: DualVariant,
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

impl CertReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    At,
    Right,
}

impl Side {
    fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::At => "at",
            Side::Right => "right",
        }
    }
}

fn probe(f: &PiecewiseLinear, t: &Ratio, side: Side) -> Ratio {
    match side {
        Side::Left => f.left_limit(t),
        Side::At => f.eval(t),
        Side::Right => f.right_limit(t),
    }
}

/// Probe points in time order: each time's left limit, value and right
/// limit, with midpoints between consecutive times.
fn probes(times: &[Ratio]) -> Vec<(Ratio, Side)> {
    let mut out = Vec::with_capacity(times.len() * 4);
    for (k, t) in times.iter().enumerate() {
        out.push((t.clone(), Side::Left));
        out.push((t.clone(), Side::At));
        out.push((t.clone(), Side::Right));
        if let Some(next) = times.get(k + 1) {
            out.push((t.midpoint(next), Side::At));
        }
    }
    out
}

fn knot_times(f: &PiecewiseLinear) -> Vec<Ratio> {
    f.breakpoints().cloned().collect()
}

/// First probe at which `f` exceeds `cap`.
fn first_above(f: &PiecewiseLinear, cap: &Ratio) -> Option<(Ratio, Side, Ratio)> {
    probes(&knot_times(f))
        .into_iter()
        .map(|(t, s)| {
            let v = probe(f, &t, s);
            (t, s, v)
        })
        .find(|(_, _, v)| v > cap)
}

#[derive(Default)]
struct Collector {
    checks: Vec<Check>,
}

impl Collector {
    fn push(&mut self, name: &str, witness: Option<Witness>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed: witness.is_none(),
            witness,
        });
    }

    /// Records `name` as failed at the first violation produced by `items`.
    fn first<I: IntoIterator<Item = Option<Witness>>>(&mut self, name: &str, items: I) {
        let w = items.into_iter().flatten().next();
        self.push(name, w);
    }
}

fn at_point(t: Ratio, side: Side, lhs: Ratio, rhs: Ratio) -> Witness {
    Witness {
        time: Some(t),
        side: Some(side.name().to_string()),
        lhs,
        rhs,
        ..Witness::default()
    }
}

fn scalar(lhs: Ratio, rhs: Ratio) -> Witness {
    Witness {
        lhs,
        rhs,
        ..Witness::default()
    }
}

/// `lhs <= rhs`, else a scalar witness.
fn le(lhs: Ratio, rhs: Ratio) -> Option<Witness> {
    (lhs > rhs).then(|| scalar(lhs, rhs))
}

fn outside(w: &Window, t: &Ratio, side: Side) -> bool {
    match side {
        Side::At => !w.contains(t),
        Side::Right => t < &w.lo || t >= &w.hi,
        Side::Left => t <= &w.lo || t > &w.hi,
    }
}

/// First probe at which `f` is nonzero outside `w`. The window ends are
/// probed too, since a piece may cross them between knots.
fn leaks(f: &PiecewiseLinear, w: &Window) -> Option<(Ratio, Side, Ratio)> {
    let mut times = knot_times(f);
    times.push(w.lo.clone());
    times.push(w.hi.clone());
    times.sort();
    times.dedup();
    times.into_iter().find_map(|t| {
        [Side::Left, Side::At, Side::Right]
            .into_iter()
            .filter(|&s| outside(w, &t, s))
            .map(|s| (s, probe(f, &t, s)))
            .find(|(_, v)| !v.is_zero())
            .map(|(s, v)| (t.clone(), s, v))
    })
}

fn holding_violation(
    alpha: &Ratio,
    beta: &PiecewiseLinear,
    h: &Ratio,
    a: &Ratio,
    d: &Ratio,
) -> Option<Witness> {
    let mut times: Vec<Ratio> = knot_times(beta)
        .into_iter()
        .filter(|t| t > a && t < d)
        .collect();
    times.push(a.clone());
    times.push(d.clone());
    times.sort();
    times.dedup();
    probes(&times)
        .into_iter()
        .filter(|(t, s)| match s {
            Side::Left => t > a,
            Side::Right => t < d,
            Side::At => true,
        })
        .find_map(|(t, s)| {
            let lhs = alpha - &probe(beta, &t, s);
            let rhs = h * &(d - &t);
            (lhs > rhs).then(|| at_point(t, s, lhs, rhs))
        })
}

fn backlog_violation(
    alpha: &Ratio,
    beta: &PiecewiseLinear,
    b: &Ratio,
    d: &Ratio,
) -> Option<Witness> {
    let mut times: Vec<Ratio> = knot_times(beta).into_iter().filter(|t| t > d).collect();
    let last = times.last().cloned().unwrap_or_else(|| d.clone());
    times.push(d.clone());
    times.push(last + Ratio::one());
    times.sort();
    times.dedup();
    probes(&times)
        .into_iter()
        .filter(|(t, s)| t > d || (t == d && *s == Side::Right))
        .find_map(|(t, s)| {
            let lhs = alpha - &probe(beta, &t, s);
            let rhs = b * &(&t - d);
            (lhs > rhs).then(|| at_point(t, s, lhs, rhs))
        })
}

/// Checks `dual` against the constraints of the matching dual program and
/// the quantitative bounds of the analysis. `opt`, when given, adds the weak
/// duality check.
pub fn verify(
    instance: &Instance,
    schedule: &Schedule,
    dual: &DualSolution,
    opt: Option<&Ratio>,
) -> CertReport {
    let mut c = Collector::default();
    let reqs = instance.request_index();
    let zero = PiecewiseLinear::zero();
    let beta_of = |id: &RequestId| dual.beta.get(id).unwrap_or(&zero);
    let sum_alpha: Ratio = dual.alpha.values().sum();

    c.push(
        "dual.objective",
        (dual.objective != sum_alpha).then(|| scalar(dual.objective.clone(), sum_alpha.clone())),
    );

    c.first(
        "dual.beta_nonnegative",
        dual.beta.iter().map(|(id, f)| {
            first_above(&f.scale(&-Ratio::one()), &Ratio::zero()).map(|(t, s, v)| Witness {
                request: Some(*id),
                ..at_point(t, s, -v, Ratio::zero())
            })
        }),
    );

    c.first(
        "dual.beta_before_arrival",
        dual.beta.iter().map(|(id, f)| {
            let a = reqs.get(id).map(|r| &r.arrival)?;
            let (first, _) = f.support_hull()?;
            (first < a).then(|| Witness {
                request: Some(*id),
                ..at_point(
                    first.clone(),
                    Side::At,
                    f.right_limit(first).max(f.eval(first)),
                    Ratio::zero(),
                )
            })
        }),
    );

    match dual.variant {
        DualVariant::Single => {
            let s = instance.service_cost();
            let total = sum_all(dual.beta.values());
            c.push(
                "dual.beta_cap",
                first_above(&total, &s).map(|(t, side, v)| at_point(t, side, v, s.clone())),
            );
        }
        DualVariant::Multi => {
            let mut per_item: BTreeMap<ItemId, Vec<PiecewiseLinear>> = BTreeMap::new();
            for (id, f) in &dual.beta {
                if let Some(r) = reqs.get(id) {
                    per_item.entry(r.item).or_default().push(f.clone());
                }
            }
            for (v, g) in &dual.gamma {
                per_item
                    .entry(*v)
                    .or_default()
                    .push(g.scale(&-Ratio::one()));
            }
            c.first(
                "dual.beta_cap",
                per_item.iter().map(|(v, fs)| {
                    let cap = instance.item_costs.get(*v).cloned().unwrap_or_default();
                    first_above(&sum_all(fs), &cap).map(|(t, s, val)| Witness {
                        item: Some(*v),
                        ..at_point(t, s, val, cap.clone())
                    })
                }),
            );
            c.first(
                "dual.gamma_nonnegative",
                dual.gamma.iter().map(|(v, g)| {
                    first_above(&g.scale(&-Ratio::one()), &Ratio::zero()).map(|(t, s, val)| {
                        Witness {
                            item: Some(*v),
                            ..at_point(t, s, -val, Ratio::zero())
                        }
                    })
                }),
            );
            let root = instance.root_cost.clone();
            c.push(
                "dual.gamma_cap",
                first_above(&sum_all(dual.gamma.values()), &root)
                    .map(|(t, s, v)| at_point(t, s, v, root.clone())),
            );
        }
    }

    let involved: Vec<RequestId> = dual
        .alpha
        .keys()
        .chain(dual.beta.keys())
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    c.first(
        "dual.holding",
        involved.iter().map(|id| {
            let r = reqs.get(id)?;
            let alpha = dual.alpha_of(*id);
            holding_violation(
                &alpha,
                beta_of(id),
                &instance.hold_rate_of(r),
                &r.arrival,
                &r.deadline,
            )
            .map(|w| Witness {
                request: Some(*id),
                ..w
            })
        }),
    );
    c.first(
        "dual.backlog",
        involved.iter().map(|id| {
            let r = reqs.get(id)?;
            let alpha = dual.alpha_of(*id);
            let b = match instance.backlog_rate_of(r) {
                Extended::Finite(b) => b,
                Extended::Infinite => return None,
            };
            backlog_violation(&alpha, beta_of(id), &b, &r.deadline).map(|w| Witness {
                request: Some(*id),
                ..w
            })
        }),
    );

    c.push(
        "dual.unknown_requests",
        involved
            .iter()
            .find(|id| !reqs.contains_key(id))
            .map(|id| Witness {
                request: Some(*id),
                ..scalar(Ratio::zero(), Ratio::zero())
            }),
    );

    c.first(
        "window.support",
        dual.log.iter().map(|rec| {
            let from_beta = rec.beta.iter().find_map(|(id, f)| {
                leaks(f, &rec.window).map(|(t, s, v)| Witness {
                    request: Some(*id),
                    service: Some(rec.service),
                    ..at_point(t, s, v, Ratio::zero())
                })
            });
            from_beta.or_else(|| {
                rec.gamma.iter().find_map(|(v, g)| {
                    leaks(g, &rec.window).map(|(t, s, val)| Witness {
                        item: Some(*v),
                        service: Some(rec.service),
                        ..at_point(t, s, val, Ratio::zero())
                    })
                })
            })
        }),
    );

    c.first(
        "bound.charge_counts",
        dual.charges.iter().map(|(id, n)| {
            (n.local > 2 || n.global > 1).then(|| Witness {
                request: Some(*id),
                ..scalar(
                    Ratio::from_int(i64::from(n.local.max(n.global))),
                    Ratio::from_int(if n.local > 2 { 2 } else { 1 }),
                )
            })
        }),
    );

    let services = evaluate_services(instance, schedule);
    c.push(
        "schedule.valid",
        services
            .is_err()
            .then(|| scalar(Ratio::zero(), Ratio::zero())),
    );
    let services = services.unwrap_or_default();
    let alg_total: Ratio = services.iter().map(|s| s.total.clone()).sum();

    match dual.variant {
        DualVariant::Single => {
            single_bounds(&mut c, instance, schedule, dual, &services, &alg_total)
        }
        DualVariant::Multi => multi_bounds(&mut c, instance, schedule, dual, &services, &alg_total),
    }

    if let Some(opt) = opt {
        c.push("weak_duality", le(sum_alpha, opt.clone()));
    }

    let all_pass = c.checks.iter().all(|k| k.passed);
    CertReport {
        variant: dual.variant,
        checks: c.checks,
        all_pass,
    }
}

fn per_service<I: IntoIterator<Item = (usize, Option<Witness>)>>(
    items: I,
) -> impl Iterator<Item = Option<Witness>> {
    items.into_iter().map(|(i, w)| {
        w.map(|w| Witness {
            service: Some(i),
            ..w
        })
    })
}

fn single_bounds(
    c: &mut Collector,
    instance: &Instance,
    schedule: &Schedule,
    dual: &DualSolution,
    services: &[crate::cost::CostBreakdown],
    alg_total: &Ratio,
) {
    let s = instance.service_cost();
    let n = Ratio::from_int(schedule.services.len() as i64);
    let ns = &n * &s;
    c.push(
        "bound.objective_ns",
        (dual.objective != ns).then(|| scalar(dual.objective.clone(), ns.clone())),
    );
    c.first(
        "bound.service_alpha",
        per_service(
            dual.increase
                .iter()
                .enumerate()
                .map(|(i, a)| (i, (a != &s).then(|| scalar(a.clone(), s.clone())))),
        ),
    );
    let three = Ratio::from_int(3);
    c.first(
        "bound.service_cost",
        per_service(
            services
                .iter()
                .enumerate()
                .map(|(i, b)| (i, le(b.total.clone(), &three * &s))),
        ),
    );
    c.push(
        "bound.alg_vs_dual",
        le(alg_total.clone(), &three * &dual.objective),
    );
}

fn multi_bounds(
    c: &mut Collector,
    instance: &Instance,
    schedule: &Schedule,
    dual: &DualSolution,
    services: &[crate::cost::CostBreakdown],
    alg_total: &Ratio,
) {
    let root = &instance.root_cost;
    let mature_cost = |i: usize| -> Ratio {
        schedule.services[i]
            .mature_items
            .iter()
            .map(|&v| instance.item_costs[v].clone())
            .sum()
    };

    c.first(
        "bound.alpha_per_service",
        per_service((0..schedule.services.len()).map(|i| {
            let need = (mature_cost(i) * Ratio::new(1, 4)).max(root * &Ratio::new(1, 2));
            let got = dual.increase.get(i).cloned().unwrap_or_default();
            (i, (got < need).then(|| scalar(got, need)))
        })),
    );
    c.first(
        "bound.service_cost",
        per_service(services.iter().enumerate().map(|(i, b)| {
            let cap = mature_cost(i) * Ratio::from_int(3) + root * &Ratio::from_int(9);
            (i, le(b.total.clone(), cap))
        })),
    );
    c.push(
        "bound.alg_vs_dual",
        le(alg_total.clone(), &dual.objective * &Ratio::from_int(30)),
    );

    // Weighted local β per item, before any global charge is added.
    let mut local: BTreeMap<ItemId, Vec<PiecewiseLinear>> = BTreeMap::new();
    for rec in dual.log.iter().filter(|r| r.kind.is_local()) {
        if let Some(v) = rec.item {
            for f in rec.beta.values() {
                local.entry(v).or_default().push(f.scale(&rec.weight));
            }
        }
    }
    c.first(
        "bound.local_overlap",
        local.iter().map(|(v, fs)| {
            let cap = &instance.item_costs[*v] * &Ratio::new(1, 2);
            first_above(&sum_all(fs), &cap).map(|(t, s, val)| Witness {
                item: Some(*v),
                ..at_point(t, s, val, cap.clone())
            })
        }),
    );

    let reqs = instance.request_index();
    c.first(
        "bound.unique_arrival",
        dual.log
            .iter()
            .filter(|r| r.kind == ChargeKind::UniqueGlobal && r.service > 0)
            .flat_map(|rec| {
                let prev = &schedule.services[rec.service - 1].time;
                rec.members.iter().map(move |id| (rec.service, *id, prev))
            })
            .map(|(i, id, prev)| {
                let a = &reqs.get(&id)?.arrival;
                (a <= prev).then(|| Witness {
                    request: Some(id),
                    service: Some(i),
                    ..scalar(a.clone(), prev.clone())
                })
            }),
    );

    let with_service = |rec: &super::ChargeRecord, w: Option<Witness>| {
        w.map(|w| Witness {
            service: Some(rec.service),
            item: rec.item,
            ..w
        })
    };
    c.first(
        "bound.local_sum",
        dual.log.iter().filter(|r| r.kind.is_local()).map(|rec| {
            let s: Ratio = rec.alpha.values().sum();
            with_service(
                rec,
                (s != rec.target).then(|| scalar(s, rec.target.clone())),
            )
        }),
    );
    c.first(
        "bound.rho_star",
        dual.log.iter().map(|rec| {
            let (id, cap) = rec.rho_star.as_ref()?;
            let a = rec.alpha.get(id).cloned().unwrap_or_default();
            with_service(rec, le(a, cap.clone())).map(|w| Witness {
                request: Some(*id),
                ..w
            })
        }),
    );
    c.first(
        "bound.common_sum",
        dual.log
            .iter()
            .filter(|r| r.kind == ChargeKind::CommonGlobal)
            .map(|rec| {
                let s: Ratio = rec.alpha.values().sum();
                with_service(rec, (s < rec.target).then(|| scalar(s, rec.target.clone())))
            }),
    );
    c.first(
        "bound.context",
        dual.log.iter().map(|rec| {
            let k = &rec.context;
            let w = le(k.h_sum.clone(), k.holding_budget.clone())
                .or_else(|| le(k.nu.clone(), Ratio::one()))
                .or_else(|| (!k.nu.is_positive()).then(|| scalar(k.nu.clone(), Ratio::zero())))
                .or_else(|| {
                    let sb = k.sb.as_ref()?;
                    le(sb.clone(), root.clone()).or_else(|| le(sb.clone(), k.b_sum.clone()))
                });
            with_service(rec, w)
        }),
    );
}
