//! Tabulated optimal drift for fast path simulation.
//!
//! Simulating `M` paths over `n` steps needs `M·n` drift evaluations, and a
//! pointwise exact-step evaluation costs a window sum over the atoms of `μ`.
//! [`DriftTable`] instead evaluates `a*(t_k, ·)` and `∂_x a*(t_k, ·)` on a
//! uniform grid per time node and interpolates with cubic Hermite
//! polynomials.
//!
//! For rank-only rewards the grid values are computed with a fast Gauss
//! transform: atoms are binned (bin width in `(s/8, s/4]`, `s = σ√(T-t)`),
//! each bin keeps Taylor moments of its jumps about the bin centre, and
//! the Gaussian kernel is expanded in Hermite functions,
//!
//! ```text
//! φ(z - ε) = Σ_m ε^m / m! · He_m(z) φ(z).
//! ```
//!
//! Moments for coarser bins are obtained from finer ones by shifting the
//! expansion centre, so one binning pass serves every time node.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::Result;
use crate::special::{normal_cdf, normal_pdf};
use crate::value::ValueField;

/// Number of Taylor moments kept per bin.
const ORDER: usize = 8;
/// Kernel cut-off in units of `s`.
const KERNEL_Z: f64 = 8.5;
/// Finest binning / largest table allowed per time node.
const MAX_POINTS: usize = 1 << 21;

#[derive(Debug, Clone)]
struct Slice {
    x0: f64,
    inv_step: f64,
    step: f64,
    /// Interleaved `(a*, ∂_x a*)`.
    values: Vec<[f64; 2]>,
}

impl Slice {
    #[inline]
    fn eval(&self, x: f64) -> Option<f64> {
        let q = (x - self.x0) * self.inv_step;
        if !(q >= 0.0) {
            return None;
        }
        let i = q as usize;
        if i + 1 >= self.values.len() {
            return None;
        }
        let t = q - i as f64;
        let [a0, d0] = self.values[i];
        let [a1, d1] = self.values[i + 1];
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        Some(h00 * a0 + h01 * a1 + self.step * (h10 * d0 + h11 * d1))
    }
}

/// `a*(t_k, x)` for a fixed list of times `t_k`.
#[derive(Debug, Clone)]
pub struct DriftTable {
    times: Vec<f64>,
    /// `None` where the spread is too small to tabulate; such nodes are
    /// evaluated pointwise.
    slices: Vec<Option<Slice>>,
    field: Arc<ValueField>,
    /// The drift vanishes outside the tabulated range (rank-only rewards).
    zero_outside: bool,
}

impl DriftTable {
    /// Tabulates the drift of `field` at each of `times` (all `< T`).
    pub fn build(field: &Arc<ValueField>, times: &[f64]) -> Result<Self> {
        let spreads = times
            .iter()
            .map(|&t| field.spread(t))
            .collect::<Result<Vec<_>>>()?;
        let sigma2 = field.params().sigma * field.params().sigma;
        if field.reward().is_rank_only() {
            let s_min = spreads.iter().cloned().fold(f64::INFINITY, f64::min);
            let s_max = spreads.iter().cloned().fold(0.0, f64::max);
            let pyramid = MomentPyramid::new(field, s_min, s_max);
            let base = field.jumps().base;
            let slices = spreads
                .par_iter()
                .map(|&s| pyramid.as_ref().and_then(|p| p.slice(s, base, sigma2)))
                .collect();
            Ok(Self {
                times: times.to_vec(),
                slices,
                field: Arc::clone(field),
                zero_outside: true,
            })
        } else {
            let mu = field.measure();
            let (lo, hi) = (mu.min_location(), mu.max_location());
            let (a, b) = field.reward().support();
            let (lo, hi) = (lo.min(a), hi.max(b));
            let slices = times
                .par_iter()
                .zip(&spreads)
                .map(|(&t, &s)| pointwise_slice(field, t, s, lo, hi))
                .collect::<Result<Vec<_>>>()?;
            Ok(Self {
                times: times.to_vec(),
                slices,
                field: Arc::clone(field),
                zero_outside: false,
            })
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Drift at the `k`-th tabulated time.
    #[inline]
    pub fn drift(&self, k: usize, x: f64) -> f64 {
        self.node(k).drift(x)
    }

    #[inline]
    pub(crate) fn node(&self, k: usize) -> DriftNode<'_> {
        DriftNode {
            table: self,
            k,
            slice: self.slices[k].as_ref(),
        }
    }
}

/// The drift at one tabulated time.
#[derive(Clone, Copy)]
pub(crate) struct DriftNode<'a> {
    table: &'a DriftTable,
    k: usize,
    slice: Option<&'a Slice>,
}

impl DriftNode<'_> {
    #[inline]
    pub(crate) fn drift(&self, x: f64) -> f64 {
        let (k, slice) = (self.k, self.slice);
        let this = self.table;
        if let Some(slice) = slice {
            if let Some(a) = slice.eval(x) {
                return a;
            }
            if this.zero_outside {
                return 0.0;
            }
        }
        this.field
            .value_point(this.times[k], x)
            .map(|p| p.a_star)
            .unwrap_or(0.0)
    }
}

fn pointwise_slice(field: &ValueField, t: f64, s: f64, lo: f64, hi: f64) -> Result<Option<Slice>> {
    let step = s / 16.0;
    let x0 = lo - KERNEL_Z * s;
    let n = ((hi + KERNEL_Z * s - x0) / step).ceil() as usize + 2;
    if n > MAX_POINTS {
        return Ok(None);
    }
    let s2 = field.params().sigma * field.params().sigma;
    let values = (0..n)
        .map(|i| {
            let p = field.value_point(t, x0 + i as f64 * step)?;
            let r = p.u_x / p.u;
            Ok([p.a_star, s2 * (p.u_xx / p.u - r * r)])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(Slice {
        x0,
        inv_step: 1.0 / step,
        step,
        values,
    }))
}

/// Jump moments `B_m(b) = Σ_j Δ_j δ_j^m / m!` on a hierarchy of bin widths
/// `h_0 2^ℓ`, with `δ_j` the offset of atom `j` from its bin centre.
struct MomentPyramid {
    h0: f64,
    levels: Vec<Level>,
}

struct Level {
    /// Bin index of `moments[0..ORDER]`.
    first: i64,
    moments: Vec<[f64; ORDER]>,
}

impl Level {
    fn bins(&self) -> usize {
        self.moments.len()
    }
}

impl MomentPyramid {
    fn new(field: &ValueField, s_min: f64, s_max: f64) -> Option<Self> {
        let jumps = field.jumps();
        let range = jumps.locations[jumps.locations.len() - 1] - jumps.locations[0];
        let finest = (range.max(1e-300) / MAX_POINTS as f64 * 4.0).log2().ceil().exp2();
        let h0 = (s_min / 4.0).log2().floor().exp2().max(finest);
        if !h0.is_finite() || h0 <= 0.0 {
            return None;
        }
        let first = (jumps.locations[0] / h0).floor() as i64;
        let last = (jumps.locations[jumps.locations.len() - 1] / h0).floor() as i64;
        let mut moments = vec![[0.0; ORDER]; (last - first + 1) as usize];
        for (&y, &d) in jumps.locations.iter().zip(&jumps.sizes) {
            if d == 0.0 {
                continue;
            }
            let b = (y / h0).floor() as i64;
            let delta = y - (b as f64 + 0.5) * h0;
            let row = &mut moments[(b - first) as usize];
            let mut term = d;
            for (m, slot) in row.iter_mut().enumerate() {
                *slot += term;
                term *= delta / (m + 1) as f64;
            }
        }
        let mut levels = vec![Level { first, moments }];
        let mut h = h0;
        while 2.0 * h <= s_max / 4.0 {
            let next = coarsen(levels.last().unwrap(), h);
            levels.push(next);
            h *= 2.0;
        }
        Some(Self { h0, levels })
    }

    fn level_for(&self, s: f64) -> (usize, f64) {
        let mut l = 0;
        let mut h = self.h0;
        while 2.0 * h <= s / 4.0 && l + 1 < self.levels.len() {
            h *= 2.0;
            l += 1;
        }
        (l, h)
    }

    fn slice(&self, s: f64, base: f64, sigma2: f64) -> Option<Slice> {
        if s / 4.0 < self.h0 {
            return None;
        }
        let (l, h) = self.level_for(s);
        let level = &self.levels[l];
        let nb = level.bins();
        // Moments in units of s.
        let mut a = level.moments.clone();
        for row in a.iter_mut() {
            let mut scale = 1.0;
            for v in row.iter_mut() {
                *v *= scale;
                scale /= s;
            }
        }
        let mut mass_below = Vec::with_capacity(nb + 1);
        let mut occupied_below = Vec::with_capacity(nb + 1);
        mass_below.push(0.0);
        occupied_below.push(0usize);
        for row in &a {
            mass_below.push(mass_below.last().unwrap() + row[0]);
            let occ = (row.iter().any(|&v| v != 0.0)) as usize;
            occupied_below.push(occupied_below.last().unwrap() + occ);
        }
        let reach = (KERNEL_Z * s / h).ceil() as i64 + 1;
        let kernels = [Kernel::new(reach, h / s, 0.0), Kernel::new(reach, h / s, 0.5)];

        // Table points sit at bin centres (phase 0) and bin edges (phase 1).
        let first_bin = level.first - reach;
        let points = 2 * (nb + 2 * reach as usize);
        let total = mass_below[nb];
        let values = (0..points)
            .map(|q| {
                let i = first_bin + (q / 2) as i64;
                let kern = &kernels[q % 2];
                // Source bins with |i - b| <= reach, as dense indices.
                let lo = (i - reach - level.first).max(0);
                let hi = (i + reach - level.first).min(nb as i64 - 1);
                if lo > hi || occupied_below[hi as usize + 1] == occupied_below[lo as usize] {
                    return [0.0, 0.0];
                }
                let (mut u, mut ux, mut uxx) = (base + mass_below[lo as usize], 0.0, 0.0);
                for bi in lo..=hi {
                    let row = &a[bi as usize];
                    let d = i - (bi + level.first);
                    let k = kern.at(d);
                    let mut sx = 0.0;
                    let mut sxx = 0.0;
                    let mut su = row[0] * k.cdf;
                    for (m, &c) in row.iter().enumerate().take(ORDER) {
                        sx += c * k.he[m];
                        sxx += c * k.he[m + 1];
                    }
                    for m in 0..ORDER - 1 {
                        su -= row[m + 1] * k.he[m];
                    }
                    u += su;
                    ux += sx;
                    uxx += sxx;
                }
                debug_assert!(u <= total + base + 1e-9 * (total + base));
                let ux = ux / s;
                let uxx = -uxx / (s * s);
                let r = ux / u;
                [sigma2 * r, sigma2 * (uxx / u - r * r)]
            })
            .collect();
        let step = 0.5 * h;
        Some(Slice {
            x0: (first_bin as f64 + 0.5) * h,
            inv_step: 1.0 / step,
            step,
            values,
        })
    }
}

/// Moments of bin pairs merged into the next coarser level.
fn coarsen(fine: &Level, h: f64) -> Level {
    let first = fine.first.div_euclid(2);
    let last = (fine.first + fine.bins() as i64 - 1).div_euclid(2);
    let mut moments = vec![[0.0; ORDER]; (last - first + 1) as usize];
    // Shift of a child centre relative to its parent: ∓h/2.
    let shift = |d: f64| {
        let mut pw = [0.0; ORDER];
        let mut term = 1.0;
        for (k, slot) in pw.iter_mut().enumerate() {
            *slot = term;
            term *= d / (k + 1) as f64;
        }
        pw
    };
    let left = shift(-0.5 * h);
    let right = shift(0.5 * h);
    for (i, row) in fine.moments.iter().enumerate() {
        let b = fine.first + i as i64;
        let parent = b.div_euclid(2);
        let pw = if b.rem_euclid(2) == 0 { &left } else { &right };
        let target = &mut moments[(parent - first) as usize];
        for m in 0..ORDER {
            let mut acc = 0.0;
            for k in 0..=m {
                acc += row[k] * pw[m - k];
            }
            target[m] += acc;
        }
    }
    Level { first, moments }
}

struct KernelRow {
    cdf: f64,
    he: [f64; ORDER + 1],
}

/// `He_m(z) φ(z)` and `N(z)` at `z = (d + phase) h / s`.
struct Kernel {
    reach: i64,
    rows: Vec<KernelRow>,
}

impl Kernel {
    fn new(reach: i64, ratio: f64, phase: f64) -> Self {
        let rows = (-reach..=reach)
            .map(|d| {
                let z = (d as f64 + phase) * ratio;
                let pdf = normal_pdf(z);
                let mut he = [0.0; ORDER + 1];
                let (mut prev, mut cur) = (0.0, 1.0);
                for (m, slot) in he.iter_mut().enumerate() {
                    *slot = cur * pdf;
                    let next = z * cur - m as f64 * prev;
                    prev = cur;
                    cur = next;
                }
                KernelRow {
                    cdf: normal_cdf(z),
                    he,
                }
            })
            .collect();
        Self { reach, rows }
    }

    #[inline]
    fn at(&self, d: i64) -> &KernelRow {
        &self.rows[(d + self.reach) as usize]
    }
}
