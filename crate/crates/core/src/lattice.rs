//! Integer lattice geometry: points of ℤ^ν, normalized time points, the boxes
//! `Δ_N(s, t)` and a few point-set utilities.
//!
//! Every iteration in this module is lexicographic (first coordinate slowest),
//! so streamed statistics are reproducible run to run.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Slack used when snapping `N·s` and `N·t` to integers before rounding, so
/// that `100 * 0.29` still counts as 29.
pub const SNAP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LatticePoint(Vec<i64>);

impl LatticePoint {
    pub fn new(coords: Vec<i64>) -> Self {
        assert!(!coords.is_empty(), "lattice dimension must be at least 1");
        LatticePoint(coords)
    }

    pub fn zero(nu: usize) -> Self {
        Self::new(vec![0; nu])
    }

    /// `c·e_axis`.
    pub fn axis(nu: usize, axis: usize, c: i64) -> Self {
        let mut v = vec![0; nu];
        v[axis] = c;
        Self::new(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn into_coords(self) -> Vec<i64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm_of(&self.0)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.0.iter().all(|&c| c >= 0)
    }

    pub fn sub(&self, other: &LatticePoint) -> LatticePoint {
        debug_assert_eq!(self.dim(), other.dim());
        LatticePoint(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &LatticePoint) -> LatticePoint {
        debug_assert_eq!(self.dim(), other.dim());
        LatticePoint(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, factor: i64) -> LatticePoint {
        LatticePoint(self.0.iter().map(|c| c * factor).collect())
    }
}

impl From<Vec<i64>> for LatticePoint {
    fn from(v: Vec<i64>) -> Self {
        LatticePoint::new(v)
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, c) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Euclidean length of an integer vector.
pub fn norm_of(coords: &[i64]) -> f64 {
    coords
        .iter()
        .map(|&c| {
            let c = c as f64;
            c * c
        })
        .sum::<f64>()
        .sqrt()
}

/// Euclidean norm of a lattice point.
pub fn norm(n: &LatticePoint) -> f64 {
    n.norm()
}

/// A point of `[0,1]^ν`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimePoint(Vec<f64>);

impl TimePoint {
    pub fn new(t: Vec<f64>) -> Result<Self> {
        if t.is_empty() {
            return Err(validation("time point must have at least one coordinate"));
        }
        if let Some(bad) = t.iter().find(|&&x| !(0.0..=1.0).contains(&x)) {
            return Err(validation(format!("time coordinate {bad} outside [0,1]")));
        }
        Ok(TimePoint(t))
    }

    /// `(v, …, v)` in dimension `nu`.
    pub fn uniform(nu: usize, v: f64) -> Result<Self> {
        Self::new(vec![v; nu])
    }

    pub fn ones(nu: usize) -> Self {
        TimePoint(vec![1.0; nu])
    }

    pub fn zeros(nu: usize) -> Self {
        TimePoint(vec![0.0; nu])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    /// `t / i`, componentwise.
    pub fn divided(&self, i: usize) -> TimePoint {
        TimePoint(self.0.iter().map(|x| x / i as f64).collect())
    }

    /// `∏_l min(s_l, t_l)`.
    pub fn min_product(&self, other: &TimePoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.min(*b))
            .product()
    }

    pub fn product(&self) -> f64 {
        self.0.iter().product()
    }

    pub fn le(&self, other: &TimePoint) -> bool {
        self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }
}

impl TryFrom<Vec<f64>> for TimePoint {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        TimePoint::new(v)
    }
}

impl From<TimePoint> for Vec<f64> {
    fn from(t: TimePoint) -> Self {
        t.0
    }
}

/// Inclusive integer range per axis.
pub type AxisRanges = Vec<(i64, i64)>;

/// `Δ_N(s, t) = {n : N s_l ≤ n_l ≤ N t_l ∀ l}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    n: u64,
    s: TimePoint,
    t: TimePoint,
}

impl BoxRegion {
    pub fn new(n: u64, s: TimePoint, t: TimePoint) -> Result<Self> {
        if n == 0 {
            return Err(validation("box scale N must be positive"));
        }
        if s.dim() != t.dim() {
            return Err(validation(format!(
                "box corners have different dimensions ({} vs {})",
                s.dim(),
                t.dim()
            )));
        }
        if let Some(l) = (0..s.dim()).find(|&l| s.0[l] > t.0[l]) {
            return Err(validation(format!(
                "malformed box: s_{} = {} exceeds t_{} = {}",
                l + 1,
                s.0[l],
                l + 1,
                t.0[l]
            )));
        }
        Ok(BoxRegion { n, s, t })
    }

    /// `Δ_N(t) = Δ_N(0, t)`.
    pub fn from_origin(n: u64, t: TimePoint) -> Self {
        let s = TimePoint::zeros(t.dim());
        BoxRegion { n, s, t }
    }

    pub fn scale(&self) -> u64 {
        self.n
    }

    pub fn lower(&self) -> &TimePoint {
        &self.s
    }

    pub fn upper(&self) -> &TimePoint {
        &self.t
    }

    pub fn dim(&self) -> usize {
        self.t.dim()
    }

    /// Integer extent `⌈N s_l⌉ ..= ⌊N t_l⌋` per axis (possibly empty).
    pub fn ranges(&self) -> AxisRanges {
        let n = self.n as f64;
        self.s
            .0
            .iter()
            .zip(&self.t.0)
            .map(|(&s, &t)| ((n * s - SNAP).ceil() as i64, (n * t + SNAP).floor() as i64))
            .collect()
    }

    pub fn len(&self) -> usize {
        ranges_len(&self.ranges())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, p: &[i64]) -> bool {
        self.ranges()
            .iter()
            .zip(p)
            .all(|(&(lo, hi), &c)| lo <= c && c <= hi)
    }

    pub fn points(&self) -> BoxPoints {
        BoxPoints::new(self.ranges())
    }
}

/// Number of points in a product of inclusive ranges.
pub fn ranges_len(ranges: &[(i64, i64)]) -> usize {
    ranges
        .iter()
        .map(|&(lo, hi)| if hi < lo { 0 } else { (hi - lo + 1) as usize })
        .product()
}

/// Lexicographic stream of the points of a box.
pub fn box_points(b: &BoxRegion) -> BoxPoints {
    b.points()
}

/// Lexicographic iterator over a product of inclusive ranges.
#[derive(Clone, Debug)]
pub struct BoxPoints {
    ranges: AxisRanges,
    next: Option<Vec<i64>>,
}

impl BoxPoints {
    pub fn new(ranges: AxisRanges) -> Self {
        let next = if ranges.iter().any(|&(lo, hi)| hi < lo) {
            None
        } else {
            Some(ranges.iter().map(|&(lo, _)| lo).collect())
        };
        BoxPoints { ranges, next }
    }
}

impl Iterator for BoxPoints {
    type Item = LatticePoint;

    fn next(&mut self) -> Option<LatticePoint> {
        let cur = self.next.take()?;
        let mut nxt = cur.clone();
        let mut axis = nxt.len();
        loop {
            if axis == 0 {
                break;
            }
            axis -= 1;
            if nxt[axis] < self.ranges[axis].1 {
                nxt[axis] += 1;
                self.next = Some(nxt);
                break;
            }
            nxt[axis] = self.ranges[axis].0;
        }
        Some(LatticePoint(cur))
    }
}

/// Visits every point of a product of inclusive ranges in lexicographic order
/// without allocating per point.
pub fn for_each_point(ranges: &[(i64, i64)], mut f: impl FnMut(&[i64])) {
    if ranges.is_empty() || ranges.iter().any(|&(lo, hi)| hi < lo) {
        return;
    }
    let mut cur: Vec<i64> = ranges.iter().map(|&(lo, _)| lo).collect();
    loop {
        f(&cur);
        let mut axis = cur.len();
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            if cur[axis] < ranges[axis].1 {
                cur[axis] += 1;
                break;
            }
            cur[axis] = ranges[axis].0;
        }
    }
}

/// `inf_{n∈Γ, ñ∈Δ} |n − ñ|`.
pub fn set_distance(gamma: &[LatticePoint], delta: &[LatticePoint]) -> Result<f64> {
    if gamma.is_empty() || delta.is_empty() {
        return Err(validation("set_distance needs two nonempty sets"));
    }
    let mut best = f64::INFINITY;
    for a in gamma {
        for b in delta {
            if a.dim() != b.dim() {
                return Err(validation("points of different dimensions"));
            }
            best = best.min(a.sub(b).norm());
        }
    }
    Ok(best)
}

/// `U_r(n) = {ñ : |n − ñ| ≤ r}`, lexicographic.
pub fn ball(center: &LatticePoint, r: f64) -> Vec<LatticePoint> {
    assert!(r >= 0.0, "ball radius must be nonnegative");
    let reach = r.floor() as i64;
    let r2 = r * r + SNAP;
    let ranges: AxisRanges = center
        .coords()
        .iter()
        .map(|&c| (c - reach, c + reach))
        .collect();
    let mut out = Vec::new();
    for_each_point(&ranges, |p| {
        let d2: i64 = p
            .iter()
            .zip(center.coords())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if (d2 as f64) <= r2 {
            out.push(LatticePoint(p.to_vec()));
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tp(v: &[f64]) -> TimePoint {
        TimePoint::new(v.to_vec()).unwrap()
    }

    #[test]
    fn unit_square_has_121_points() {
        let b = BoxRegion::new(10, tp(&[0.0, 0.0]), tp(&[1.0, 1.0])).unwrap();
        assert_eq!(b.points().count(), 121);
        assert_eq!(b.len(), 121);
    }

    #[test]
    fn offset_box_count() {
        let b = BoxRegion::new(8, tp(&[0.25, 0.0]), tp(&[0.75, 0.5])).unwrap();
        assert_eq!(b.ranges(), vec![(2, 6), (0, 4)]);
        assert_eq!(b.points().count(), 25);
    }

    #[test]
    fn degenerate_box_is_origin() {
        let b = BoxRegion::new(2, tp(&[0.0]), tp(&[0.0])).unwrap();
        let pts: Vec<_> = b.points().collect();
        assert_eq!(pts, vec![LatticePoint::new(vec![0])]);
    }

    #[test]
    fn malformed_box_rejected() {
        let err = BoxRegion::new(4, tp(&[0.5, 0.0]), tp(&[0.25, 1.0])).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn snapping_handles_decimal_times() {
        let b = BoxRegion::from_origin(100, tp(&[0.29]));
        assert_eq!(b.ranges(), vec![(0, 29)]);
        let b = BoxRegion::new(10, tp(&[0.7]), tp(&[0.7])).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn lexicographic_order() {
        let pts: Vec<_> = BoxPoints::new(vec![(0, 1), (0, 1)]).collect();
        let want: Vec<LatticePoint> = [[0, 0], [0, 1], [1, 0], [1, 1]]
            .iter()
            .map(|p| LatticePoint::new(p.to_vec()))
            .collect();
        assert_eq!(pts, want);
    }

    #[test]
    fn norms() {
        assert_eq!(LatticePoint::new(vec![3, 4]).norm(), 5.0);
        assert_eq!(LatticePoint::zero(3).norm(), 0.0);
        assert!((LatticePoint::new(vec![1, 1]).norm() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn distances() {
        let p = |v: &[i64]| LatticePoint::new(v.to_vec());
        assert_eq!(set_distance(&[p(&[0, 0])], &[p(&[3, 4])]).unwrap(), 5.0);
        assert_eq!(
            set_distance(&[p(&[1, 1]), p(&[2, 2])], &[p(&[2, 2]), p(&[9, 9])]).unwrap(),
            0.0
        );
        assert_eq!(set_distance(&[p(&[0])], &[p(&[-2]), p(&[7])]).unwrap(), 2.0);
        assert!(set_distance(&[], &[p(&[1])]).is_err());
    }

    #[test]
    fn balls() {
        let p = |v: &[i64]| LatticePoint::new(v.to_vec());
        let b: Vec<_> = ball(&p(&[0]), 2.0);
        assert_eq!(b, (-2..=2).map(|c| p(&[c])).collect::<Vec<_>>());
        let b = ball(&p(&[0, 0]), 1.0);
        assert_eq!(
            b,
            vec![p(&[-1, 0]), p(&[0, -1]), p(&[0, 0]), p(&[0, 1]), p(&[1, 0])]
        );
        assert_eq!(ball(&p(&[5, -3]), 0.0), vec![p(&[5, -3])]);
    }
}
