//! Realized values of set-valued control functions and extremization over them.
//!
//! Every set is closed. Sets are decomposed into convex pieces (boxes, possibly
//! clipped by one half-plane) and the extremum over a union is the max/min over
//! the pieces.

use serde::Serialize;
use thiserror::Error;

use crate::num::linspace;

/// Slack used when testing half-plane membership of computed boundary points.
const CLIP_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SetError {
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("empty set: {0}")]
    Empty(String),
    #[error("dimension mismatch: set has dimension {expected}, point has {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite objective value {value} at {point:?}")]
    NonFinite { point: Vec<f64>, value: f64 },
    #[error("unbounded set: supply a monotone hint or a truncation bound")]
    Unbounded,
    #[error("unsupported set expression: {0}")]
    Unsupported(String),
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
}

/// Closed interval; one endpoint may be infinite (half-line).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, SetError> {
        let bad = lo.is_nan()
            || hi.is_nan()
            || lo > hi
            || (lo.is_infinite() && hi.is_infinite())
            || lo == f64::INFINITY
            || hi == f64::NEG_INFINITY;
        if bad {
            return Err(SetError::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn point(v: f64) -> Result<Self, SetError> {
        Self::new(v, v)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Cartesian product of intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxSet {
    dims: Vec<Interval>,
}

impl BoxSet {
    pub fn new(dims: Vec<Interval>) -> Result<Self, SetError> {
        if dims.is_empty() {
            return Err(SetError::Empty("box with no dimensions".into()));
        }
        Ok(Self { dims })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            dims: vec![Interval { lo: 0.0, hi: 1.0 }; dim.max(1)],
        }
    }

    pub fn dims(&self) -> &[Interval] {
        &self.dims
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.dims.iter().zip(p).all(|(iv, &x)| iv.contains(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    Ge,
    Le,
}

/// `{v ∈ base : a0 + a1·v1 + a2·v2 (≥ | ≤) 0}` for a two-dimensional base box.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HalfPlaneClip {
    base: BoxSet,
    coeffs: [f64; 3],
    sense: Sense,
}

impl HalfPlaneClip {
    pub fn new(base: BoxSet, coeffs: [f64; 3], sense: Sense) -> Result<Self, SetError> {
        if base.dims.len() != 2 || base.dims.iter().any(|d| !d.is_bounded()) {
            return Err(SetError::Unsupported(
                "half-plane clip needs a bounded two-dimensional base".into(),
            ));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(SetError::Unsupported("non-finite half-plane coefficients".into()));
        }
        let clip = Self { base, coeffs, sense };
        let [x, y] = [clip.base.dims[0], clip.base.dims[1]];
        let corners = [(x.lo, y.lo), (x.lo, y.hi), (x.hi, y.lo), (x.hi, y.hi)];
        if !corners.iter().any(|&(a, b)| clip.holds(a, b)) {
            return Err(SetError::Empty(format!("half-plane {coeffs:?} misses the base box")));
        }
        Ok(clip)
    }

    pub fn unit_square(coeffs: [f64; 3], sense: Sense) -> Result<Self, SetError> {
        Self::new(BoxSet::unit(2), coeffs, sense)
    }

    pub fn base(&self) -> &BoxSet {
        &self.base
    }

    pub fn coeffs(&self) -> [f64; 3] {
        self.coeffs
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    fn holds(&self, v1: f64, v2: f64) -> bool {
        let s = self.coeffs[0] + self.coeffs[1] * v1 + self.coeffs[2] * v2;
        match self.sense {
            Sense::Ge => s >= -CLIP_EPS,
            Sense::Le => s <= CLIP_EPS,
        }
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.base.contains(p) && self.holds(p[0], p[1])
    }
}

/// `∪_k (region_k × {tag_k})`; the tag is the last coordinate of a point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaggedUnion {
    parts: Vec<(SetExpr, i64)>,
    labels: Vec<i64>,
}

impl TaggedUnion {
    pub fn new(parts: Vec<(SetExpr, i64)>, labels: Vec<i64>) -> Result<Self, SetError> {
        if parts.is_empty() {
            return Err(SetError::Empty("tagged union with no parts".into()));
        }
        let dim = parts[0].0.dim();
        for (region, tag) in &parts {
            if region.dim() != dim {
                return Err(SetError::Dimension {
                    expected: dim,
                    got: region.dim(),
                });
            }
            if !labels.contains(tag) {
                return Err(SetError::Unsupported(format!("tag {tag} not in label set {labels:?}")));
            }
        }
        Ok(Self { parts, labels })
    }

    pub fn parts(&self) -> &[(SetExpr, i64)] {
        &self.parts
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }
}

/// Finite set of integer label tuples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FiniteSet {
    elements: Vec<Vec<i64>>,
}

impl FiniteSet {
    pub fn new(elements: Vec<Vec<i64>>) -> Result<Self, SetError> {
        if elements.is_empty() {
            return Err(SetError::Empty("finite set with no elements".into()));
        }
        let arity = elements[0].len();
        if arity == 0 {
            return Err(SetError::Unsupported("zero-arity labels".into()));
        }
        for (i, e) in elements.iter().enumerate() {
            if e.len() != arity {
                return Err(SetError::Dimension {
                    expected: arity,
                    got: e.len(),
                });
            }
            if elements[..i].contains(e) {
                return Err(SetError::Unsupported(format!("duplicate element {e:?}")));
            }
        }
        Ok(Self { elements })
    }

    pub fn elements(&self) -> &[Vec<i64>] {
        &self.elements
    }

    pub fn contains_label(&self, label: &[i64]) -> bool {
        self.elements.iter().any(|e| e.as_slice() == label)
    }
}

/// Realized value of a set-valued control function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum SetExpr {
    Interval(Interval),
    Box(BoxSet),
    HalfPlane(HalfPlaneClip),
    Tagged(TaggedUnion),
    Finite(FiniteSet),
    Product(Vec<SetExpr>),
    /// Untagged union of sets of equal dimension.
    Union(Vec<SetExpr>),
}

impl SetExpr {
    pub fn interval(lo: f64, hi: f64) -> Result<Self, SetError> {
        Ok(Self::Interval(Interval::new(lo, hi)?))
    }

    pub fn boxed(bounds: &[(f64, f64)]) -> Result<Self, SetError> {
        let dims = bounds
            .iter()
            .map(|&(lo, hi)| Interval::new(lo, hi))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::Box(BoxSet::new(dims)?))
    }

    /// Degenerate box at `p`.
    pub fn point(p: &[f64]) -> Result<Self, SetError> {
        let bounds: Vec<(f64, f64)> = p.iter().map(|&x| (x, x)).collect();
        Self::boxed(&bounds)
    }

    pub fn product(parts: Vec<SetExpr>) -> Result<Self, SetError> {
        if parts.is_empty() {
            return Err(SetError::Empty("product with no factors".into()));
        }
        Ok(Self::Product(parts))
    }

    pub fn union(parts: Vec<SetExpr>) -> Result<Self, SetError> {
        if parts.is_empty() {
            return Err(SetError::Empty("union with no parts".into()));
        }
        let dim = parts[0].dim();
        if let Some(p) = parts.iter().find(|p| p.dim() != dim) {
            return Err(SetError::Dimension {
                expected: dim,
                got: p.dim(),
            });
        }
        Ok(Self::Union(parts))
    }

    pub fn dim(&self) -> usize {
        match self {
            SetExpr::Interval(_) => 1,
            SetExpr::Box(b) => b.dims.len(),
            SetExpr::HalfPlane(_) => 2,
            SetExpr::Tagged(t) => t.parts[0].0.dim() + 1,
            SetExpr::Finite(f) => f.elements[0].len(),
            SetExpr::Product(ps) => ps.iter().map(SetExpr::dim).sum(),
            SetExpr::Union(ps) => ps[0].dim(),
        }
    }

    /// True when the set is a single point.
    pub fn is_singleton(&self) -> bool {
        match self.pieces() {
            Ok(pieces) => {
                let first = &pieces[0];
                first.lo == first.hi && pieces.iter().all(|p| p.lo == first.lo && p.hi == first.hi)
            }
            Err(_) => false,
        }
    }

    pub fn contains(&self, point: &[f64]) -> Result<bool, SetError> {
        if point.len() != self.dim() {
            return Err(SetError::Dimension {
                expected: self.dim(),
                got: point.len(),
            });
        }
        Ok(self.contains_unchecked(point))
    }

    fn contains_unchecked(&self, p: &[f64]) -> bool {
        match self {
            SetExpr::Interval(iv) => iv.contains(p[0]),
            SetExpr::Box(b) => b.contains(p),
            SetExpr::HalfPlane(h) => h.contains(p),
            SetExpr::Tagged(t) => {
                let (head, tag) = p.split_at(p.len() - 1);
                t.parts
                    .iter()
                    .any(|(region, k)| *k as f64 == tag[0] && region.contains_unchecked(head))
            }
            SetExpr::Finite(f) => f
                .elements
                .iter()
                .any(|e| e.iter().zip(p).all(|(&a, &b)| a as f64 == b)),
            SetExpr::Product(ps) => {
                let mut offset = 0;
                ps.iter().all(|part| {
                    let d = part.dim();
                    let ok = part.contains_unchecked(&p[offset..offset + d]);
                    offset += d;
                    ok
                })
            }
            SetExpr::Union(ps) => ps.iter().any(|part| part.contains_unchecked(p)),
        }
    }

    fn pieces(&self) -> Result<Vec<Piece>, SetError> {
        match self {
            SetExpr::Interval(iv) => Ok(vec![Piece::from_bounds(vec![iv.lo], vec![iv.hi])]),
            SetExpr::Box(b) => Ok(vec![Piece::from_bounds(
                b.dims.iter().map(|d| d.lo).collect(),
                b.dims.iter().map(|d| d.hi).collect(),
            )]),
            SetExpr::HalfPlane(h) => {
                let mut piece = Piece::from_bounds(
                    h.base.dims.iter().map(|d| d.lo).collect(),
                    h.base.dims.iter().map(|d| d.hi).collect(),
                );
                piece.clip = Some(Clip {
                    i: 0,
                    j: 1,
                    a: h.coeffs,
                    sense: h.sense,
                });
                Ok(vec![piece])
            }
            SetExpr::Tagged(t) => {
                let mut out = Vec::new();
                for (region, tag) in &t.parts {
                    for mut piece in region.pieces()? {
                        piece.lo.push(*tag as f64);
                        piece.hi.push(*tag as f64);
                        out.push(piece);
                    }
                }
                Ok(out)
            }
            SetExpr::Finite(f) => Ok(f
                .elements
                .iter()
                .map(|e| {
                    let p: Vec<f64> = e.iter().map(|&x| x as f64).collect();
                    Piece::from_bounds(p.clone(), p)
                })
                .collect()),
            SetExpr::Product(ps) => {
                let mut acc = vec![Piece::from_bounds(Vec::new(), Vec::new())];
                for part in ps {
                    let factor = part.pieces()?;
                    let mut next = Vec::with_capacity(acc.len() * factor.len());
                    for a in &acc {
                        for b in &factor {
                            next.push(a.concat(b)?);
                        }
                    }
                    acc = next;
                }
                Ok(acc)
            }
            SetExpr::Union(ps) => {
                let mut out = Vec::new();
                for part in ps {
                    out.extend(part.pieces()?);
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Clip {
    i: usize,
    j: usize,
    a: [f64; 3],
    sense: Sense,
}

impl Clip {
    /// Feasible range of coordinate `r` when coordinate `c` equals `cv`.
    fn column(&self, c: usize, cv: f64, lo_r: f64, hi_r: f64) -> Option<(f64, f64)> {
        let (ac, ar) = if c == self.i {
            (self.a[1], self.a[2])
        } else {
            (self.a[2], self.a[1])
        };
        let rest = self.a[0] + ac * cv;
        if ar == 0.0 {
            let ok = match self.sense {
                Sense::Ge => rest >= -CLIP_EPS,
                Sense::Le => rest <= CLIP_EPS,
            };
            return ok.then_some((lo_r, hi_r));
        }
        let bound = -rest / ar;
        let lower = matches!((self.sense, ar > 0.0), (Sense::Ge, true) | (Sense::Le, false));
        let (lo, hi) = if lower {
            (lo_r.max(bound), hi_r)
        } else {
            (lo_r, hi_r.min(bound))
        };
        if lo <= hi {
            Some((lo, hi))
        } else if lo - hi <= 1e-12 {
            // the line grazes the base edge; keep the edge point, which is inside the base
            let v = if lower { hi } else { lo };
            Some((v, v))
        } else {
            None
        }
    }

    /// Vertices of the clipped rectangle.
    fn polygon(&self, lo: &[f64], hi: &[f64]) -> Vec<[f64; 2]> {
        let (i, j) = (self.i, self.j);
        let holds = |x: f64, y: f64| {
            let s = self.a[0] + self.a[1] * x + self.a[2] * y;
            match self.sense {
                Sense::Ge => s >= -CLIP_EPS,
                Sense::Le => s <= CLIP_EPS,
            }
        };
        let mut out = Vec::new();
        for &x in &[lo[i], hi[i]] {
            for &y in &[lo[j], hi[j]] {
                if holds(x, y) {
                    out.push([x, y]);
                }
            }
        }
        let [a0, a1, a2] = self.a;
        if a2 != 0.0 {
            for &x in &[lo[i], hi[i]] {
                let y = -(a0 + a1 * x) / a2;
                if y >= lo[j] && y <= hi[j] {
                    out.push([x, y]);
                }
            }
        }
        if a1 != 0.0 {
            for &y in &[lo[j], hi[j]] {
                let x = -(a0 + a2 * y) / a1;
                if x >= lo[i] && x <= hi[i] {
                    out.push([x, y]);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Piece {
    lo: Vec<f64>,
    hi: Vec<f64>,
    clip: Option<Clip>,
}

impl Piece {
    fn from_bounds(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Self { lo, hi, clip: None }
    }

    fn concat(&self, other: &Piece) -> Result<Piece, SetError> {
        if self.clip.is_some() && other.clip.is_some() {
            return Err(SetError::Unsupported("product of two half-plane clips".into()));
        }
        let offset = self.lo.len();
        let clip = self.clip.clone().or_else(|| {
            other.clip.as_ref().map(|c| Clip {
                i: c.i + offset,
                j: c.j + offset,
                a: c.a,
                sense: c.sense,
            })
        });
        let mut lo = self.lo.clone();
        lo.extend_from_slice(&other.lo);
        let mut hi = self.hi.clone();
        hi.extend_from_slice(&other.hi);
        Ok(Piece { lo, hi, clip })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    Sup,
    Inf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Monotone {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone)]
pub struct ExtremizeOptions {
    /// Per-coordinate monotonicity of the objective; missing entries mean unknown.
    pub hints: Vec<Option<Monotone>>,
    pub tol: f64,
    /// Magnitude used in place of infinite endpoints.
    pub truncation: Option<f64>,
    /// Grid points per searched dimension.
    pub resolution: usize,
}

impl Default for ExtremizeOptions {
    fn default() -> Self {
        Self {
            hints: Vec::new(),
            tol: 1e-8,
            truncation: None,
            resolution: 64,
        }
    }
}

impl ExtremizeOptions {
    pub fn with_hints(hints: Vec<Option<Monotone>>) -> Self {
        Self {
            hints,
            ..Self::default()
        }
    }

    pub fn all(dir: Monotone, dim: usize) -> Self {
        Self::with_hints(vec![Some(dir); dim])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extremum {
    pub value: f64,
    pub point: Vec<f64>,
    /// The optimum sits on a truncated (originally infinite) endpoint.
    pub at_truncation: bool,
}

/// Supremum or infimum of `f` over `s`.
pub fn extremize<F>(s: &SetExpr, f: &F, mode: Mode, opts: &ExtremizeOptions) -> Result<Extremum, SetError>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    if !(opts.tol > 0.0) {
        return Err(SetError::Tolerance(opts.tol));
    }
    let sign = match mode {
        Mode::Sup => 1.0,
        Mode::Inf => -1.0,
    };
    let dim = s.dim();
    let push: Vec<Option<bool>> = (0..dim)
        .map(|k| {
            opts.hints.get(k).copied().flatten().map(|m| {
                matches!((m, mode), (Monotone::Increasing, Mode::Sup) | (Monotone::Decreasing, Mode::Inf))
            })
        })
        .collect();
    let g = |x: &[f64]| -> Result<f64, SetError> {
        let v = f(x);
        if v.is_finite() {
            Ok(sign * v)
        } else {
            Err(SetError::NonFinite {
                point: x.to_vec(),
                value: v,
            })
        }
    };
    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    for piece in s.pieces()? {
        let cand = solve_piece(&piece, &g, &push, opts)?;
        if best.as_ref().is_none_or(|b| cand.0 > b.0) {
            best = Some(cand);
        }
    }
    let (value, point, at_truncation) = best.expect("pieces are nonempty");
    Ok(Extremum {
        value: sign * value,
        point,
        at_truncation,
    })
}

#[derive(Debug, Clone, Copy)]
enum Var {
    Coord(usize),
    /// Row coordinate of the clip, parametrized as a fraction of its column range.
    RowFraction,
}

struct Layout {
    lo: Vec<f64>,
    hi: Vec<f64>,
    push: Vec<Option<bool>>,
    clip: Option<(Clip, usize, usize)>,
    vars: Vec<Var>,
    ranges: Vec<(f64, f64)>,
    extra: Vec<Vec<f64>>,
    /// Which endpoints (lower, upper) were originally infinite.
    truncated: Vec<(bool, bool)>,
}

impl Layout {
    fn embed(&self, u: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.lo.len())
            .map(|k| match self.push[k] {
                Some(true) => self.hi[k],
                Some(false) => self.lo[k],
                None => self.lo[k],
            })
            .collect();
        let mut frac = None;
        for (var, &val) in self.vars.iter().zip(u) {
            match *var {
                Var::Coord(k) => x[k] = val,
                Var::RowFraction => frac = Some(val),
            }
        }
        if let Some((clip, c, r)) = &self.clip {
            let (a, b) = clip
                .column(*c, x[*c], self.lo[*r], self.hi[*r])
                .unwrap_or((self.lo[*r], self.lo[*r]));
            x[*r] = match (frac, self.push[*r]) {
                (Some(t), _) => a + t * (b - a),
                (None, Some(true)) => b,
                (None, _) => a,
            };
        }
        x
    }
}

fn layout(piece: &Piece, push: &[Option<bool>], opts: &ExtremizeOptions) -> Result<Layout, SetError> {
    let d = piece.lo.len();
    let mut lo = piece.lo.clone();
    let mut hi = piece.hi.clone();
    let mut push: Vec<Option<bool>> = (0..d).map(|k| push.get(k).copied().flatten()).collect();
    let mut truncated = vec![(false, false); d];
    for k in 0..d {
        if lo[k].is_infinite() || hi[k].is_infinite() {
            if let Some(t) = opts.truncation {
                truncated[k] = (lo[k].is_infinite(), hi[k].is_infinite());
                if lo[k].is_infinite() {
                    lo[k] = (-t).min(hi[k]);
                }
                if hi[k].is_infinite() {
                    hi[k] = t.max(lo[k]);
                }
            } else if push[k].is_none() {
                return Err(SetError::Unbounded);
            }
        }
        if lo[k] == hi[k] {
            push[k] = None;
        }
    }

    let mut clip = None;
    if let Some(c) = &piece.clip {
        let (i, j) = (c.i, c.j);
        match (lo[i] == hi[i], lo[j] == hi[j]) {
            (true, true) => {}
            (true, false) => {
                let (a, b) = c
                    .column(i, lo[i], lo[j], hi[j])
                    .ok_or_else(|| SetError::Empty("clipped column is empty".into()))?;
                lo[j] = a;
                hi[j] = b;
            }
            (false, true) => {
                let (a, b) = c
                    .column(j, lo[j], lo[i], hi[i])
                    .ok_or_else(|| SetError::Empty("clipped column is empty".into()))?;
                lo[i] = a;
                hi[i] = b;
            }
            (false, false) => {
                let (col, row) = match (push[i].is_some(), push[j].is_some()) {
                    (true, false) => (j, i),
                    _ => (i, j),
                };
                push[col] = None;
                clip = Some((c.clone(), col, row));
            }
        }
    }

    let mut vars = Vec::new();
    let mut ranges = Vec::new();
    let mut extra = Vec::new();
    for k in 0..d {
        if lo[k] == hi[k] || push[k].is_some() {
            continue;
        }
        if let Some((c, col, row)) = &clip {
            if k == *row {
                continue;
            }
            if k == *col {
                let poly = c.polygon(&lo, &hi);
                if poly.is_empty() {
                    return Err(SetError::Empty("clipped rectangle is empty".into()));
                }
                let idx = if *col == c.i { 0 } else { 1 };
                let cs: Vec<f64> = poly.iter().map(|v| v[idx]).collect();
                let cmin = cs.iter().copied().fold(f64::INFINITY, f64::min);
                let cmax = cs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                vars.push(Var::Coord(k));
                ranges.push((cmin, cmax));
                extra.push(cs);
                continue;
            }
        }
        vars.push(Var::Coord(k));
        ranges.push((lo[k], hi[k]));
        extra.push(Vec::new());
    }
    if let Some((_, _, row)) = &clip {
        if push[*row].is_none() {
            vars.push(Var::RowFraction);
            ranges.push((0.0, 1.0));
            extra.push(Vec::new());
        }
    }
    Ok(Layout {
        lo,
        hi,
        push,
        clip,
        vars,
        ranges,
        extra,
        truncated,
    })
}

fn grid_values(range: (f64, f64), extra: &[f64], resolution: usize) -> Vec<f64> {
    let mut vals = if range.0 == range.1 {
        vec![range.0]
    } else {
        linspace(range.0, range.1, resolution.max(2))
    };
    vals.extend(extra.iter().copied().filter(|v| *v >= range.0 && *v <= range.1));
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals.dedup();
    vals
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for prefix in &out {
            for &v in axis {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

fn golden_max<G>(phi: &G, mut a: f64, mut b: f64, tol: f64) -> Result<(f64, f64), SetError>
where
    G: Fn(f64) -> Result<f64, SetError>,
{
    const R: f64 = 0.618_033_988_749_894_9;
    let mut best = (a, phi(a)?);
    let fb = phi(b)?;
    if fb > best.1 {
        best = (b, fb);
    }
    let mut x1 = b - R * (b - a);
    let mut x2 = a + R * (b - a);
    let mut f1 = phi(x1)?;
    let mut f2 = phi(x2)?;
    while b - a > tol {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - R * (b - a);
            f1 = phi(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + R * (b - a);
            f2 = phi(x2)?;
        }
    }
    for (x, fx) in [(x1, f1), (x2, f2)] {
        if fx > best.1 {
            best = (x, fx);
        }
    }
    Ok(best)
}

fn solve_piece<G>(
    piece: &Piece,
    g: &G,
    push: &[Option<bool>],
    opts: &ExtremizeOptions,
) -> Result<(f64, Vec<f64>, bool), SetError>
where
    G: Fn(&[f64]) -> Result<f64, SetError>,
{
    let lay = layout(piece, push, opts)?;
    let finish = |x: Vec<f64>, v: f64| {
        let at_trunc = (0..x.len()).any(|k| {
            let (tl, th) = lay.truncated[k];
            (tl && x[k] == lay.lo[k]) || (th && x[k] == lay.hi[k])
        });
        (v, x, at_trunc)
    };
    if lay.vars.is_empty() {
        let x = lay.embed(&[]);
        let v = g(&x)?;
        return Ok(finish(x, v));
    }

    let res = opts.resolution.max(2);
    let axes: Vec<Vec<f64>> = lay
        .ranges
        .iter()
        .zip(&lay.extra)
        .map(|(&r, e)| grid_values(r, e, res))
        .collect();
    let mut scored = Vec::new();
    for u in cartesian(&axes) {
        let v = g(&lay.embed(&u))?;
        scored.push((v, u));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let steps: Vec<f64> = lay
        .ranges
        .iter()
        .map(|&(a, b)| (b - a) / (res - 1) as f64)
        .collect();
    let mut best = scored[0].clone();
    for (v0, u0) in scored.iter().take(4) {
        let mut u = u0.clone();
        let mut val = *v0;
        for _ in 0..60 {
            let before = val;
            for k in 0..u.len() {
                let (rlo, rhi) = lay.ranges[k];
                if rlo == rhi {
                    continue;
                }
                let a = (u[k] - steps[k]).max(rlo);
                let b = (u[k] + steps[k]).min(rhi);
                let line = |t: f64| {
                    let mut w = u.clone();
                    w[k] = t;
                    g(&lay.embed(&w))
                };
                let (t, ft) = golden_max(&line, a, b, opts.tol)?;
                if ft > val {
                    val = ft;
                    u[k] = t;
                }
            }
            if val - before <= opts.tol * 1e-3 {
                break;
            }
        }
        if val > best.0 {
            best = (val, u);
        }
    }
    let x = lay.embed(&best.1);
    Ok(finish(x, best.0))
}

/// Deterministic lattice of member points, including the vertices of each piece.
pub fn sample_grid(s: &SetExpr, resolution: usize) -> Result<Vec<Vec<f64>>, SetError> {
    let res = resolution.max(2);
    let mut out = Vec::new();
    for piece in s.pieces()? {
        if piece.lo.iter().chain(&piece.hi).any(|v| v.is_infinite()) {
            return Err(SetError::Unbounded);
        }
        let d = piece.lo.len();
        let axis = |k: usize| -> Vec<f64> {
            if piece.lo[k] == piece.hi[k] {
                vec![piece.lo[k]]
            } else {
                linspace(piece.lo[k], piece.hi[k], res)
            }
        };
        match &piece.clip {
            None => {
                let axes: Vec<Vec<f64>> = (0..d).map(axis).collect();
                out.extend(cartesian(&axes));
            }
            Some(clip) => {
                let (c, r) = (clip.i, clip.j);
                let poly = clip.polygon(&piece.lo, &piece.hi);
                let cs: Vec<f64> = poly.iter().map(|v| v[0]).collect();
                let cmin = cs.iter().copied().fold(f64::INFINITY, f64::min);
                let cmax = cs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let cvals = grid_values((cmin, cmax), &cs, res);
                let mut plane = Vec::new();
                for &cv in &cvals {
                    if let Some((a, b)) = clip.column(c, cv, piece.lo[r], piece.hi[r]) {
                        let rows = if a == b { vec![a] } else { linspace(a, b, res) };
                        for rv in rows {
                            plane.push((cv, rv));
                        }
                    }
                }
                let others: Vec<usize> = (0..d).filter(|&k| k != c && k != r).collect();
                let axes: Vec<Vec<f64>> = others.iter().map(|&k| axis(k)).collect();
                for rest in cartesian(&axes) {
                    for &(cv, rv) in &plane {
                        let mut p = vec![0.0; d];
                        p[c] = cv;
                        p[r] = rv;
                        for (&k, &v) in others.iter().zip(&rest) {
                            p[k] = v;
                        }
                        out.push(p);
                    }
                }
            }
        }
    }
    Ok(out)
}
