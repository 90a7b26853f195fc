//! Bottom and surface profiles, fluid domains and the cavity enclosed between
//! two bottoms.
//!
//! Everything here is a pure function of its inputs. Profiles are evaluated on
//! the horizontal interval `[0, L]`; the interval length is carried by the
//! containing [`FluidDomain`] or [`CavityDescription`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::composite_gauss;

/// One raised-cosine lobe `sign * amplitude * cos^2(pi (x - center) / (2 halfwidth))`
/// supported on `|x - center| < halfwidth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lobe {
    pub amplitude: f64,
    pub center: f64,
    pub halfwidth: f64,
    #[serde(default = "unit_sign")]
    pub sign: f64,
}

fn unit_sign() -> f64 {
    1.0
}

impl Lobe {
    fn value(&self, x: f64) -> f64 {
        let t = (x - self.center) / self.halfwidth;
        if t.abs() >= 1.0 {
            return 0.0;
        }
        let c = (0.5 * std::f64::consts::PI * t).cos();
        self.sign * self.amplitude * c * c
    }

    fn slope(&self, x: f64) -> f64 {
        let t = (x - self.center) / self.halfwidth;
        if t.abs() >= 1.0 {
            return 0.0;
        }
        let k = std::f64::consts::PI / (2.0 * self.halfwidth);
        -self.sign * self.amplitude * k * (std::f64::consts::PI * t).sin()
    }

    fn validate(&self) -> Result<()> {
        if !(self.amplitude.is_finite() && self.center.is_finite() && self.halfwidth.is_finite()) {
            return Err(Error::config("bump parameters must be finite"));
        }
        if self.amplitude < 0.0 {
            return Err(Error::config(format!(
                "bump amplitude must be nonnegative (got {}); use sign = -1 for depressions",
                self.amplitude
            )));
        }
        if self.halfwidth <= 0.0 {
            return Err(Error::config(format!(
                "bump halfwidth must be positive (got {})",
                self.halfwidth
            )));
        }
        if self.sign != 1.0 && self.sign != -1.0 {
            return Err(Error::config(format!("bump sign must be +1 or -1 (got {})", self.sign)));
        }
        Ok(())
    }
}

/// A bottom `b(x)` or surface `zeta(x)` profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    Flat {
        level: f64,
    },
    Bump {
        #[serde(default)]
        base: f64,
        amplitude: f64,
        center: f64,
        halfwidth: f64,
        #[serde(default = "unit_sign")]
        sign: f64,
    },
    /// Several raised-cosine lobes on a common base level.
    MultiBump {
        #[serde(default)]
        base: f64,
        lobes: Vec<Lobe>,
    },
    /// Piecewise-linear interpolation of `(x, y)` knots with strictly
    /// increasing `x`.
    PiecewiseLinear {
        knots: Vec<(f64, f64)>,
    },
}

impl Profile {
    pub fn flat(level: f64) -> Self {
        Profile::Flat { level }
    }

    /// Raised-cosine bump of the given amplitude on a zero base.
    pub fn bump(amplitude: f64, center: f64, halfwidth: f64) -> Self {
        Profile::Bump { base: 0.0, amplitude, center, halfwidth, sign: 1.0 }
    }

    /// Symmetric tent of height `height` over `[center - halfwidth, center + halfwidth]`.
    pub fn tent(height: f64, center: f64, halfwidth: f64, width: f64) -> Self {
        Profile::PiecewiseLinear {
            knots: vec![
                (0.0, 0.0),
                (center - halfwidth, 0.0),
                (center, height),
                (center + halfwidth, 0.0),
                (width, 0.0),
            ],
        }
    }

    fn lobe(&self) -> Option<(f64, Lobe)> {
        match *self {
            Profile::Bump { base, amplitude, center, halfwidth, sign } => {
                Some((base, Lobe { amplitude, center, halfwidth, sign }))
            }
            _ => None,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            Profile::Flat { level } => *level,
            Profile::Bump { .. } => {
                let (base, lobe) = self.lobe().unwrap();
                base + lobe.value(x)
            }
            Profile::MultiBump { base, lobes } => base + lobes.iter().map(|l| l.value(x)).sum::<f64>(),
            Profile::PiecewiseLinear { knots } => {
                let k = segment_index(knots, x);
                let (x0, y0) = knots[k];
                let (x1, y1) = knots[k + 1];
                if x <= x0 {
                    return y0;
                }
                if x >= x1 {
                    return y1;
                }
                let t = (x - x0) / (x1 - x0);
                y0 + t * (y1 - y0)
            }
        }
    }

    /// Derivative `d/dx`; at a piecewise-linear knot the right-hand slope
    /// (left-hand at the last knot).
    pub fn slope(&self, x: f64) -> f64 {
        match self {
            Profile::Flat { .. } => 0.0,
            Profile::Bump { .. } => self.lobe().unwrap().1.slope(x),
            Profile::MultiBump { lobes, .. } => lobes.iter().map(|l| l.slope(x)).sum(),
            Profile::PiecewiseLinear { knots } => {
                let k = segment_index(knots, x);
                let (x0, y0) = knots[k];
                let (x1, y1) = knots[k + 1];
                if x < x0 || x > x1 {
                    return 0.0;
                }
                (y1 - y0) / (x1 - x0)
            }
        }
    }

    /// Abscissae in `(0, width)` where the profile is not smooth.
    pub fn breakpoints(&self, width: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut push_lobe = |l: &Lobe| {
            for x in [l.center - l.halfwidth, l.center + l.halfwidth] {
                if x > 0.0 && x < width {
                    out.push(x);
                }
            }
        };
        match self {
            Profile::Flat { .. } => {}
            Profile::Bump { .. } => push_lobe(&self.lobe().unwrap().1),
            Profile::MultiBump { lobes, .. } => lobes.iter().for_each(push_lobe),
            Profile::PiecewiseLinear { knots } => {
                out.extend(knots.iter().map(|k| k.0).filter(|&x| x > 0.0 && x < width));
            }
        }
        out
    }

    pub fn is_flat(&self) -> bool {
        match self {
            Profile::Flat { .. } => true,
            Profile::Bump { amplitude, .. } => *amplitude == 0.0,
            Profile::MultiBump { lobes, .. } => lobes.iter().all(|l| l.amplitude == 0.0),
            Profile::PiecewiseLinear { knots } => knots.windows(2).all(|w| w[0].1 == w[1].1),
        }
    }

    /// Checks the profile on `[0, width]`. Returns advisory warnings; hard
    /// violations are errors.
    pub fn validate(&self, width: f64) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        match self {
            Profile::Flat { level } => {
                if !level.is_finite() {
                    return Err(Error::config("flat profile level must be finite"));
                }
            }
            Profile::Bump { .. } | Profile::MultiBump { .. } => {
                let lobes: Vec<Lobe> = match self {
                    Profile::MultiBump { lobes, .. } => lobes.clone(),
                    _ => vec![self.lobe().unwrap().1],
                };
                for l in &lobes {
                    l.validate()?;
                }
                // Free-end contact: the profile must meet the walls horizontally.
                let scale = lobes
                    .iter()
                    .map(|l| l.amplitude / l.halfwidth)
                    .fold(0.0, f64::max)
                    .max(1.0);
                for x in [0.0, width] {
                    let s = self.slope(x);
                    if s.abs() > 1e-9 * scale {
                        return Err(Error::config(format!(
                            "bump profile has slope {s:.3e} at wall x = {x}; bumps must meet the walls with zero slope"
                        )));
                    }
                }
            }
            Profile::PiecewiseLinear { knots } => {
                if knots.len() < 2 {
                    return Err(Error::config("piecewise-linear profile needs at least two knots"));
                }
                if knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                    return Err(Error::config("piecewise-linear knots must be finite"));
                }
                if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::config("piecewise-linear knots must have strictly increasing x"));
                }
                let (first, last) = (knots[0].0, knots[knots.len() - 1].0);
                let tol = 1e-12 * width.max(1.0);
                if first > tol || last < width - tol {
                    return Err(Error::config(format!(
                        "piecewise-linear knots span [{first}, {last}] but the domain is [0, {width}]"
                    )));
                }
                for x in [0.0, width] {
                    let s = self.slope(x);
                    if s != 0.0 {
                        warnings.push(format!(
                            "piecewise-linear profile has slope {s:.3e} at wall x = {x}"
                        ));
                    }
                }
            }
        }
        Ok(warnings)
    }

    /// Piecewise-linear interpolant through the profile values at `xs`.
    pub fn sampled(&self, xs: &[f64]) -> Profile {
        Profile::PiecewiseLinear { knots: xs.iter().map(|&x| (x, self.value(x))).collect() }
    }
}

fn segment_index(knots: &[(f64, f64)], x: f64) -> usize {
    let n = knots.len();
    debug_assert!(n >= 2);
    // Index of the last knot with knot.x <= x, clamped to a valid segment.
    let k = knots.partition_point(|k| k.0 <= x);
    k.saturating_sub(1).min(n - 2)
}

fn sample_grid(width: f64, n: usize, extra: &[f64]) -> Vec<f64> {
    let mut xs: Vec<f64> = (0..=n).map(|i| width * i as f64 / n as f64).collect();
    xs.extend_from_slice(extra);
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

/// The region `Omega(b, zeta) = {0 < x < L, b(x) < y < zeta(x)}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluidDomain {
    pub width: f64,
    pub bottom: Profile,
    pub surface: Profile,
    pub min_gap: f64,
}

impl FluidDomain {
    /// Builds and validates a domain with the default gap `1e-3 * width`.
    pub fn new(width: f64, bottom: Profile, surface: Profile) -> Result<Self> {
        Self::with_gap(width, bottom, surface, 1e-3 * width)
    }

    pub fn with_gap(width: f64, bottom: Profile, surface: Profile, min_gap: f64) -> Result<Self> {
        let d = FluidDomain { width, bottom, surface, min_gap };
        d.validate()?;
        Ok(d)
    }

    /// Flat strip of the given depth below a flat surface at `depth`.
    pub fn strip(width: f64, depth: f64) -> Result<Self> {
        Self::new(width, Profile::flat(0.0), Profile::flat(depth))
    }

    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(Error::config(format!("domain width must be positive (got {})", self.width)));
        }
        if !(self.min_gap.is_finite() && self.min_gap > 0.0) {
            return Err(Error::config(format!("min_gap must be positive (got {})", self.min_gap)));
        }
        let mut warnings = self.bottom.validate(self.width)?;
        warnings.extend(self.surface.validate(self.width)?);
        let mut extra = self.bottom.breakpoints(self.width);
        extra.extend(self.surface.breakpoints(self.width));
        for x in sample_grid(self.width, 4096, &extra) {
            let (b, z) = (self.bottom.value(x), self.surface.value(x));
            if b + self.min_gap > z {
                return Err(Error::config(format!(
                    "fluid domain gap violated at x = {x:.6}: bottom {b:.6} + gap {:.3e} exceeds surface {z:.6}",
                    self.min_gap
                )));
            }
        }
        Ok(warnings)
    }

    pub fn depth_at(&self, x: f64) -> f64 {
        self.surface.value(x) - self.bottom.value(x)
    }
}

/// Membership test for a planar region.
pub trait Region: Sync {
    fn contains(&self, x: f64, y: f64) -> bool;
}

/// The open set `{0 < x < width, lower(x) < y < upper(x)}`.
#[derive(Clone, Copy, Debug)]
pub struct Between<'a> {
    pub width: f64,
    pub lower: &'a Profile,
    pub upper: &'a Profile,
}

impl Region for Between<'_> {
    fn contains(&self, x: f64, y: f64) -> bool {
        x > 0.0 && x < self.width && y > self.lower.value(x) && y < self.upper.value(x)
    }
}

/// Open disk.
#[derive(Clone, Copy, Debug)]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Region for Disk {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        dx * dx + dy * dy < self.radius * self.radius
    }
}

/// Areas of the positive part `{b0 < y < b1}` and negative part `{b1 < y < b0}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionMeasure {
    pub area_plus: f64,
    pub area_minus: f64,
}

impl RegionMeasure {
    /// Area of the symmetric difference.
    pub fn total(&self) -> f64 {
        self.area_plus + self.area_minus
    }
}

/// The region between a lower bottom `b0` and an upper bottom `b1`.
///
/// As a [`Region`] it is the symmetric difference of the two fluid domains
/// (both parts); use [`CavityDescription::positive_part`] and
/// [`CavityDescription::negative_part`] for the one-sided pieces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CavityDescription {
    pub width: f64,
    pub lower: Profile,
    pub upper: Profile,
}

impl Region for CavityDescription {
    fn contains(&self, x: f64, y: f64) -> bool {
        if !(x > 0.0 && x < self.width) {
            return false;
        }
        let (a, b) = (self.lower.value(x), self.upper.value(x));
        y > a.min(b) && y < a.max(b)
    }
}

const PANEL_SUBDIVISIONS: usize = 16;

impl CavityDescription {
    pub fn new(width: f64, lower: Profile, upper: Profile) -> Result<Self> {
        let c = CavityDescription { width, lower, upper };
        c.check_profiles()?;
        Ok(c)
    }

    fn check_profiles(&self) -> Result<()> {
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(Error::config(format!("cavity width must be positive (got {})", self.width)));
        }
        self.lower.validate(self.width)?;
        self.upper.validate(self.width)?;
        Ok(())
    }

    pub fn positive_part(&self) -> Between<'_> {
        Between { width: self.width, lower: &self.lower, upper: &self.upper }
    }

    pub fn negative_part(&self) -> Between<'_> {
        Between { width: self.width, lower: &self.upper, upper: &self.lower }
    }

    /// Same cavity with the two bottoms exchanged.
    pub fn swapped(&self) -> Self {
        CavityDescription { width: self.width, lower: self.upper.clone(), upper: self.lower.clone() }
    }

    /// Replaces both profiles by their piecewise-linear interpolants at `xs`.
    pub fn discretized(&self, xs: &[f64]) -> Self {
        CavityDescription {
            width: self.width,
            lower: self.lower.sampled(xs),
            upper: self.upper.sampled(xs),
        }
    }

    fn gap(&self, x: f64) -> f64 {
        self.upper.value(x) - self.lower.value(x)
    }

    /// Smoothness breakpoints of both profiles and the sign changes of
    /// `upper - lower` on `(a, b)`.
    fn panel_edges(&self, a: f64, b: f64) -> Vec<f64> {
        let mut edges = vec![a, b];
        edges.extend(
            self.lower
                .breakpoints(self.width)
                .into_iter()
                .chain(self.upper.breakpoints(self.width))
                .filter(|&x| x > a && x < b),
        );
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        let mut roots = Vec::new();
        for w in edges.windows(2) {
            let n = 256;
            let (lo, hi) = (w[0], w[1]);
            let mut x_prev = lo;
            let mut g_prev = self.gap(lo);
            for i in 1..=n {
                let x = lo + (hi - lo) * i as f64 / n as f64;
                let g = self.gap(x);
                if g_prev * g < 0.0 {
                    roots.push(bisect(|t| self.gap(t), x_prev, x));
                }
                x_prev = x;
                g_prev = g;
            }
        }
        edges.extend(roots);
        edges.sort_by(f64::total_cmp);
        edges.dedup();
        edges
    }

    /// Areas of the positive and negative parts over `[a, b]`.
    pub fn region_measure_on(&self, a: f64, b: f64, quad_points: usize) -> Result<RegionMeasure> {
        if quad_points < 2 {
            return Err(Error::config(format!("quad_points must be at least 2 (got {quad_points})")));
        }
        if !(0.0 <= a && a <= b && b <= self.width) {
            return Err(Error::config(format!(
                "interval [{a}, {b}] is not inside [0, {}]",
                self.width
            )));
        }
        let mut plus = 0.0;
        let mut minus = 0.0;
        for w in self.panel_edges(a, b).windows(2) {
            for (x, wt) in composite_gauss(w[0], w[1], PANEL_SUBDIVISIONS, quad_points) {
                let g = self.gap(x);
                if g > 0.0 {
                    plus += wt * g;
                } else if g < 0.0 {
                    minus -= wt * g;
                }
            }
        }
        Ok(RegionMeasure { area_plus: plus, area_minus: minus })
    }

    /// Areas of `D+ = {b0 < y < b1}` and `D- = {b1 < y < b0}` by composite
    /// Gauss quadrature split at the profile breakpoints and crossings.
    pub fn region_measure(&self, quad_points: usize) -> Result<RegionMeasure> {
        self.check_profiles()?;
        self.region_measure_on(0.0, self.width, quad_points)
    }

    /// Vertical extent `(ymin, ymax)` of the cavity, or `None` if it is empty.
    fn vertical_extent(&self, xs: &[f64]) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &x in xs {
            let (a, b) = (self.lower.value(x), self.upper.value(x));
            if a != b {
                lo = lo.min(a.min(b));
                hi = hi.max(a.max(b));
            }
        }
        (lo < hi).then_some((lo, hi))
    }

    fn sample_xs(&self, n: usize) -> Vec<f64> {
        let mut extra = self.lower.breakpoints(self.width);
        extra.extend(self.upper.breakpoints(self.width));
        sample_grid(self.width, n, &extra)
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Result of the fatness test `|D_h| >= |D| / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fatness {
    pub h: f64,
    /// `|D_h| / |D|`.
    pub ratio: f64,
    pub is_fat: bool,
}

/// Fraction of the cavity lying farther than `h` from its boundary.
///
/// The cavity (both parts) is rasterized on a `resolution x resolution`
/// grid over its bounding box and an exact Euclidean distance transform
/// gives the distance of each inside pixel to the outside.
pub fn fatness_ratio(c: &CavityDescription, h: f64, resolution: usize) -> Result<Fatness> {
    if !(h > 0.0) {
        return Err(Error::config(format!("erosion depth h must be positive (got {h})")));
    }
    if resolution < 8 {
        return Err(Error::config(format!("raster resolution must be at least 8 (got {resolution})")));
    }
    let xs = c.sample_xs(4096);
    let (ymin, ymax) = c
        .vertical_extent(&xs)
        .ok_or_else(|| Error::degenerate("cavity has zero area"))?;
    let (nx, ny) = (resolution, resolution);
    let dx = c.width / nx as f64;
    let dy = (ymax - ymin) / ny as f64;

    // One layer of outside padding around the raster.
    let (px, py) = (nx + 2, ny + 2);
    let mut inside = vec![false; px * py];
    let mut count_inside = 0usize;
    for i in 0..nx {
        let x = (i as f64 + 0.5) * dx;
        let (a, b) = (c.lower.value(x), c.upper.value(x));
        let (lo, hi) = (a.min(b), a.max(b));
        for j in 0..ny {
            let y = ymin + (j as f64 + 0.5) * dy;
            if y > lo && y < hi {
                inside[(i + 1) * py + (j + 1)] = true;
                count_inside += 1;
            }
        }
    }
    if count_inside == 0 {
        return Err(Error::degenerate("cavity is thinner than one raster pixel"));
    }
    let sq = squared_distance_to_outside(&inside, px, py, dx, dy);
    let half_pixel = 0.5 * dx.min(dy);
    let kept = sq
        .iter()
        .zip(&inside)
        .filter(|(d, &ins)| ins && d.sqrt() - half_pixel > h)
        .count();
    let ratio = kept as f64 / count_inside as f64;
    Ok(Fatness { h, ratio, is_fat: ratio >= 0.5 })
}

/// Squared Euclidean distance from every pixel centre to the nearest outside
/// pixel centre (separable lower-envelope transform).
fn squared_distance_to_outside(inside: &[bool], px: usize, py: usize, dx: f64, dy: f64) -> Vec<f64> {
    let big = 1e300;
    let mut g = vec![0.0; px * py];
    // Pass along y within each column.
    let mut col_in = vec![0.0; py];
    let mut col_out = vec![0.0; py];
    for i in 0..px {
        for j in 0..py {
            col_in[j] = if inside[i * py + j] { big } else { 0.0 };
        }
        edt_1d(&col_in, &mut col_out, dy);
        g[i * py..(i + 1) * py].copy_from_slice(&col_out);
    }
    // Pass along x within each row.
    let mut row_in = vec![0.0; px];
    let mut row_out = vec![0.0; px];
    let mut out = vec![0.0; px * py];
    for j in 0..py {
        for i in 0..px {
            row_in[i] = g[i * py + j];
        }
        edt_1d(&row_in, &mut row_out, dx);
        for i in 0..px {
            out[i * py + j] = row_out[i];
        }
    }
    out
}

/// 1D squared distance transform of sampled function `f` with grid spacing
/// `h` (Felzenszwalb and Huttenlocher).
fn edt_1d(f: &[f64], out: &mut [f64], h: f64) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let pos = |q: usize| q as f64 * h;
    let mut k = 0usize;
    // Skip leading infinite samples so the envelope starts at a finite one.
    let first = match f.iter().position(|&x| x < 1e299) {
        Some(p) => p,
        None => {
            out.iter_mut().for_each(|o| *o = 1e300);
            return;
        }
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in (first + 1)..n {
        if f[q] >= 1e299 {
            continue;
        }
        loop {
            let p = v[k];
            let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if s <= z[k] && k > 0 {
                k -= 1;
                continue;
            }
            if s <= z[k] {
                // k == 0 and the new parabola dominates everywhere.
                v[0] = q;
                z[1] = f64::INFINITY;
                break;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Advisory summary of the geometric hypotheses for a cavity.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisReport {
    pub degenerate: bool,
    pub area: f64,
    pub diameter: f64,
    /// Largest boundary slope of the cavity, an estimate of its Lipschitz constant.
    pub lipschitz: f64,
    /// `diam(D) / r` when a scale `r` was supplied.
    pub diam_over_r: Option<f64>,
    pub fatness: Option<Fatness>,
}

/// Diameter, Lipschitz slope and optional scale/fatness diagnostics for a
/// cavity. Never fails: problems are reported, not raised.
pub fn hypothesis_report(
    c: &CavityDescription,
    r: Option<f64>,
    fatness_h: Option<f64>,
    resolution: usize,
) -> HypothesisReport {
    let area = c.region_measure_on(0.0, c.width, 8).map(|m| m.total()).unwrap_or(0.0);
    let xs = c.sample_xs(2048);
    let thick: Vec<bool> = xs.iter().map(|&x| c.gap(x) != 0.0).collect();
    let degenerate = area <= 1e-14 * c.width * c.width || !thick.iter().any(|&t| t);
    if degenerate {
        return HypothesisReport {
            degenerate: true,
            area,
            diameter: 0.0,
            lipschitz: 0.0,
            diam_over_r: None,
            fatness: None,
        };
    }

    let mut pts = Vec::new();
    for (k, &x) in xs.iter().enumerate() {
        let near = thick[k] || (k > 0 && thick[k - 1]) || (k + 1 < xs.len() && thick[k + 1]);
        if near {
            pts.push([x, c.lower.value(x)]);
            pts.push([x, c.upper.value(x)]);
        }
    }
    let diameter = diameter_of(&pts);

    let mut lipschitz = 0.0f64;
    for profile in [&c.lower, &c.upper] {
        let mut best = (0.0f64, None);
        for (k, &x) in xs.iter().enumerate() {
            if !thick[k] && !(k + 1 < xs.len() && thick[k + 1]) {
                continue;
            }
            // Slope on the segment to the right avoids knot ambiguity.
            let s = if k + 1 < xs.len() {
                profile.slope(0.5 * (x + xs[k + 1])).abs().max(profile.slope(x).abs())
            } else {
                profile.slope(x).abs()
            };
            if s > best.0 {
                best = (s, Some(k));
            }
        }
        if let (s, Some(k)) = best {
            let lo = xs[k.saturating_sub(1)];
            let hi = xs[(k + 1).min(xs.len() - 1)];
            let refined = golden_max(|x| profile.slope(x).abs(), lo, hi);
            lipschitz = lipschitz.max(s.max(refined));
        }
    }

    let fatness = fatness_h.and_then(|h| fatness_ratio(c, h, resolution).ok());
    HypothesisReport {
        degenerate: false,
        area,
        diameter,
        lipschitz,
        diam_over_r: r.filter(|r| *r > 0.0).map(|r| diameter / r),
        fatness,
    }
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    for _ in 0..100 {
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - g * (b - a);
        d = a + g * (b - a);
    }
    f(0.5 * (a + b))
}

fn diameter_of(pts: &[[f64; 2]]) -> f64 {
    let hull = convex_hull(pts);
    let mut best = 0.0f64;
    for (i, p) in hull.iter().enumerate() {
        for q in &hull[i + 1..] {
            best = best.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
        }
    }
    best
}

fn convex_hull(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut p = pts.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * p.len());
    for &q in &p {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
            hull.pop();
        }
        hull.push(q);
    }
    let lower_len = hull.len() + 1;
    for &q in p.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
            hull.pop();
        }
        hull.push(q);
    }
    hull.pop();
    hull
}
