//! Piecewise-linear functions of time with exact jumps.
//!
//! A function is stored as a strictly increasing list of knots. Each knot
//! carries the exact value at its own time and the linear piece on the open
//! interval up to the next knot, so left limits, right limits and point
//! values are all distinguished. The function is zero before the first knot
//! and after the last one.

use serde::{Deserialize, Serialize};

use crate::ratio::Ratio;

/// Linear piece on an open interval: `start + slope * (t - left_end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Segment {
    /// Right limit at the left end of the interval.
    pub start: Ratio,
    pub slope: Ratio,
}

impl Segment {
    fn zero() -> Self {
        Segment::default()
    }

    fn is_zero(&self) -> bool {
        self.start.is_zero() && self.slope.is_zero()
    }

    fn at_offset(&self, dt: &Ratio) -> Ratio {
        &self.start + &(&self.slope * dt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Knot {
    pub at: Ratio,
    pub value: Ratio,
    pub after: Segment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct PiecewiseLinear {
    knots: Vec<Knot>,
}

impl PiecewiseLinear {
    pub fn zero() -> Self {
        PiecewiseLinear { knots: Vec::new() }
    }

    /// A single linear piece over `lo..hi` with the given endpoint closure,
    /// taking value `start` at `lo` and rising with `slope`.
    pub fn piece(
        lo: Ratio,
        lo_closed: bool,
        hi: Ratio,
        hi_closed: bool,
        start: Ratio,
        slope: Ratio,
    ) -> Self {
        assert!(lo <= hi, "piece with lo > hi");
        if lo == hi {
            if !(lo_closed && hi_closed) || start.is_zero() {
                return Self::zero();
            }
            return Self::normalized(vec![Knot {
                at: lo,
                value: start,
                after: Segment::zero(),
            }]);
        }
        let end_value = &start + &(&slope * &(&hi - &lo));
        let knots = vec![
            Knot {
                at: lo,
                value: if lo_closed {
                    start.clone()
                } else {
                    Ratio::zero()
                },
                after: Segment { start, slope },
            },
            Knot {
                at: hi,
                value: if hi_closed { end_value } else { Ratio::zero() },
                after: Segment::zero(),
            },
        ];
        Self::normalized(knots)
    }

    /// Constant `height` on the interval `lo..hi` with the given closure.
    pub fn plateau(lo: Ratio, lo_closed: bool, hi: Ratio, hi_closed: bool, height: Ratio) -> Self {
        Self::piece(lo, lo_closed, hi, hi_closed, height, Ratio::zero())
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    pub fn is_zero(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = &Ratio> {
        self.knots.iter().map(|k| &k.at)
    }

    /// Closed hull `[first knot, last knot]` of the support, if nonzero.
    pub fn support_hull(&self) -> Option<(&Ratio, &Ratio)> {
        match (self.knots.first(), self.knots.last()) {
            (Some(f), Some(l)) => Some((&f.at, &l.at)),
            _ => None,
        }
    }

    /// Index of the last knot with `at <= t`.
    fn floor_index(&self, t: &Ratio) -> Option<usize> {
        let idx = self.knots.partition_point(|k| &k.at <= t);
        idx.checked_sub(1)
    }

    /// Index of the last knot with `at < t`.
    fn strict_floor_index(&self, t: &Ratio) -> Option<usize> {
        let idx = self.knots.partition_point(|k| &k.at < t);
        idx.checked_sub(1)
    }

    pub fn eval(&self, t: &Ratio) -> Ratio {
        match self.floor_index(t) {
            None => Ratio::zero(),
            Some(i) => {
                let k = &self.knots[i];
                if &k.at == t {
                    k.value.clone()
                } else {
                    k.after.at_offset(&(t - &k.at))
                }
            }
        }
    }

    pub fn right_limit(&self, t: &Ratio) -> Ratio {
        match self.floor_index(t) {
            None => Ratio::zero(),
            Some(i) => {
                let k = &self.knots[i];
                k.after.at_offset(&(t - &k.at))
            }
        }
    }

    pub fn left_limit(&self, t: &Ratio) -> Ratio {
        match self.strict_floor_index(t) {
            None => Ratio::zero(),
            Some(i) => {
                let k = &self.knots[i];
                k.after.at_offset(&(t - &k.at))
            }
        }
    }

    fn segment_after(&self, t: &Ratio) -> Segment {
        match self.floor_index(t) {
            None => Segment::zero(),
            Some(i) => {
                let k = &self.knots[i];
                Segment {
                    start: k.after.at_offset(&(t - &k.at)),
                    slope: k.after.slope.clone(),
                }
            }
        }
    }

    pub fn add(&self, other: &PiecewiseLinear) -> PiecewiseLinear {
        if other.is_zero() {
            return self.clone();
        }
        if self.is_zero() {
            return other.clone();
        }
        let mut times: Vec<&Ratio> = self.breakpoints().chain(other.breakpoints()).collect();
        times.sort();
        times.dedup();
        let knots = times
            .into_iter()
            .map(|t| {
                let a = self.segment_after(t);
                let b = other.segment_after(t);
                Knot {
                    at: t.clone(),
                    value: self.eval(t) + other.eval(t),
                    after: Segment {
                        start: a.start + b.start,
                        slope: a.slope + b.slope,
                    },
                }
            })
            .collect();
        Self::normalized(knots)
    }

    pub fn add_assign(&mut self, other: &PiecewiseLinear) {
        *self = self.add(other);
    }

    pub fn scale(&self, factor: &Ratio) -> PiecewiseLinear {
        if factor.is_zero() {
            return Self::zero();
        }
        let knots = self
            .knots
            .iter()
            .map(|k| Knot {
                at: k.at.clone(),
                value: &k.value * factor,
                after: Segment {
                    start: &k.after.start * factor,
                    slope: &k.after.slope * factor,
                },
            })
            .collect();
        Self::normalized(knots)
    }

    /// Every point value, right limit and left limit at a knot is `>= 0`.
    /// For piecewise-linear data this is equivalent to nonnegativity everywhere.
    pub fn is_nonnegative(&self) -> bool {
        self.knots.iter().enumerate().all(|(i, k)| {
            if k.value.is_negative() || k.after.start.is_negative() {
                return false;
            }
            match self.knots.get(i + 1) {
                Some(next) => !k.after.at_offset(&(&next.at - &k.at)).is_negative(),
                None => true,
            }
        })
    }

    fn normalized(mut knots: Vec<Knot>) -> Self {
        loop {
            let before = knots.len();
            // Leading knot that is zero at and after itself.
            while knots
                .first()
                .is_some_and(|k| k.value.is_zero() && k.after.is_zero())
            {
                knots.remove(0);
            }
            // Trailing knot that is zero with a zero piece before it.
            while knots.len() >= 2 {
                let n = knots.len();
                if knots[n - 1].value.is_zero() && knots[n - 2].after.is_zero() {
                    knots.pop();
                } else {
                    break;
                }
            }
            if knots.len() == 1 && knots[0].value.is_zero() && knots[0].after.is_zero() {
                knots.clear();
            }
            // Interior knots where the function is continuous and collinear.
            let mut i = 1;
            while i + 1 < knots.len() {
                let prev = &knots[i - 1];
                let k = &knots[i];
                let left = prev.after.at_offset(&(&k.at - &prev.at));
                if k.value == left && k.after.start == left && k.after.slope == prev.after.slope {
                    knots.remove(i);
                } else {
                    i += 1;
                }
            }
            if knots.len() == before {
                break;
            }
        }
        PiecewiseLinear { knots }
    }
}

/// Sum of many functions, added pairwise so the merge cost stays near-linear.
pub fn sum_all<'a, I: IntoIterator<Item = &'a PiecewiseLinear>>(fs: I) -> PiecewiseLinear {
    let mut layer: Vec<PiecewiseLinear> =
        fs.into_iter().filter(|f| !f.is_zero()).cloned().collect();
    while layer.len() > 1 {
        layer = layer
            .chunks(2)
            .map(|pair| match pair {
                [a, b] => a.add(b),
                [a] => a.clone(),
                _ => unreachable!(),
            })
            .collect();
    }
    layer.pop().unwrap_or_default()
}
