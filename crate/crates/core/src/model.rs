//! Model constants and terminal reward surfaces `R(x, r)`.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::measure::{CdfConvention, EmpiricalMeasure};

/// Dynamics and cost constants shared by every player.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Idiosyncratic volatility.
    pub sigma: f64,
    /// Common-noise volatility; zero means no common noise.
    #[serde(default)]
    pub sigma0: f64,
    /// Effort cost coefficient in `c a^2`.
    pub cost_c: f64,
    /// Terminal time.
    pub horizon_t: f64,
}

impl ModelParams {
    pub fn new(sigma: f64, sigma0: f64, cost_c: f64, horizon_t: f64) -> Result<Self> {
        let p = Self {
            sigma,
            sigma0,
            cost_c,
            horizon_t,
        };
        match p.violations().into_iter().next() {
            None => Ok(p),
            Some((field, reason)) => Err(invalid(field, reason)),
        }
    }

    /// Every violated invariant as `(field, reason)`.
    pub fn violations(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            out.push(("sigma", format!("must be positive, got {}", self.sigma)));
        }
        if !(self.sigma0 >= 0.0 && self.sigma0.is_finite()) {
            out.push(("sigma0", format!("must be non-negative, got {}", self.sigma0)));
        }
        if !(self.cost_c > 0.0 && self.cost_c.is_finite()) {
            out.push(("cost_c", format!("must be positive, got {}", self.cost_c)));
        }
        if !(self.horizon_t > 0.0 && self.horizon_t.is_finite()) {
            out.push(("horizon_t", format!("must be positive, got {}", self.horizon_t)));
        }
        out
    }

    /// `2 c σ²`, the Cole-Hopf scale: `u = exp(v / kappa)`.
    pub fn kappa(&self) -> f64 {
        2.0 * self.cost_c * self.sigma * self.sigma
    }

    /// Same model with the common noise switched off.
    pub fn without_common_noise(&self) -> Self {
        Self { sigma0: 0.0, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    RankOnly,
    SeparableMixed,
    Tabulated,
}

/// Payoff table on a rectangular `(x, r)` grid, bilinearly interpolated and
/// held constant in `x` outside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    x_grid: Vec<f64>,
    r_grid: Vec<f64>,
    values: Vec<f64>,
}

impl RewardTable {
    /// `values` is row-major with one row per `x` node.
    pub fn new(x_grid: Vec<f64>, r_grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidReward(m));
        if x_grid.is_empty() || x_grid.windows(2).any(|p| p[0] >= p[1]) {
            return bad("x grid must be non-empty and strictly increasing".into());
        }
        if r_grid.len() < 2 || r_grid.windows(2).any(|p| p[0] >= p[1]) {
            return bad("r grid needs at least two strictly increasing nodes".into());
        }
        if r_grid[0] != 0.0 || *r_grid.last().unwrap() != 1.0 {
            return bad("r grid must start at 0 and end at 1".into());
        }
        if values.len() != x_grid.len() * r_grid.len() {
            return bad(format!(
                "expected {} payoff values, found {}",
                x_grid.len() * r_grid.len(),
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return bad("payoff values must be finite".into());
        }
        let nr = r_grid.len();
        for i in 0..x_grid.len() {
            for j in 0..nr {
                let v = values[i * nr + j];
                if j + 1 < nr && values[i * nr + j + 1] < v {
                    return bad(format!("payoff decreases in r at x-row {i}, r-column {j}"));
                }
                if i + 1 < x_grid.len() && values[(i + 1) * nr + j] < v {
                    return bad(format!("payoff decreases in x at x-row {i}, r-column {j}"));
                }
            }
        }
        Ok(Self {
            x_grid,
            r_grid,
            values,
        })
    }

    /// Text format: x-grid line, r-grid line, then row-major payoffs, all
    /// comma-separated.
    pub fn parse<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let mut row = |what: &str| -> Result<Vec<f64>> {
            let line = lines
                .next()
                .ok_or_else(|| Error::InvalidReward(format!("missing {what} line")))??;
            parse_numbers(&line)
        };
        let x_grid = row("x-grid")?;
        let r_grid = row("r-grid")?;
        let mut values = Vec::new();
        for line in lines {
            values.extend(parse_numbers(&line?)?);
        }
        Self::new(x_grid, r_grid, values)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::parse(std::io::BufReader::new(file))
    }

    pub fn x_grid(&self) -> &[f64] {
        &self.x_grid
    }

    fn bracket(grid: &[f64], v: f64) -> (usize, f64) {
        if grid.len() == 1 || v <= grid[0] {
            return (0, 0.0);
        }
        let last = grid.len() - 1;
        if v >= grid[last] {
            return (last - 1, 1.0);
        }
        let i = grid.partition_point(|&g| g <= v) - 1;
        (i, (v - grid[i]) / (grid[i + 1] - grid[i]))
    }

    fn eval(&self, x: f64, r: f64) -> f64 {
        let nr = self.r_grid.len();
        let (j, fr) = Self::bracket(&self.r_grid, r);
        let row = |i: usize| {
            let a = self.values[i * nr + j];
            let b = self.values[i * nr + j + 1];
            a + fr * (b - a)
        };
        if self.x_grid.len() == 1 {
            return row(0);
        }
        let (i, fx) = Self::bracket(&self.x_grid, x);
        let (a, b) = (row(i), row(i + 1));
        a + fx * (b - a)
    }

    fn independent_of_x(&self) -> bool {
        let nr = self.r_grid.len();
        self.values
            .chunks(nr)
            .all(|row| row == &self.values[..nr])
    }

    fn max_rank_slope(&self) -> f64 {
        let nr = self.r_grid.len();
        let mut slope: f64 = 0.0;
        for row in self.values.chunks(nr) {
            for j in 0..nr - 1 {
                let s = (row[j + 1] - row[j]) / (self.r_grid[j + 1] - self.r_grid[j]);
                slope = slope.max(s);
            }
        }
        slope
    }
}

fn parse_numbers(line: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidReward(format!("cannot parse `{s}` as a number")))
        })
        .collect()
}

/// Closed-form or tabulated payoff surface.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardSurface {
    /// `R ≡ value`.
    Constant { value: f64 },
    /// `R(x, r) = scale · r^exponent`.
    RankPower { scale: f64, exponent: f64 },
    /// `R(x, r) = rank_scale · r^exponent + abs_scale · tanh(x / length)`.
    Mixed {
        rank_scale: f64,
        exponent: f64,
        abs_scale: f64,
        length: f64,
    },
    Table(RewardTable),
}

/// A reward surface with its sup-norm and rank-Hölder constants.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardSpec {
    surface: RewardSurface,
    sup_norm: f64,
    holder_l: f64,
    holder_alpha: f64,
    support: (f64, f64),
}

const DEFAULT_SUPPORT: (f64, f64) = (-5.0, 5.0);

impl RewardSpec {
    pub fn constant(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(invalid("reward.value", "must be finite"));
        }
        Ok(Self {
            surface: RewardSurface::Constant { value },
            sup_norm: value.abs(),
            holder_l: 0.0,
            holder_alpha: 1.0,
            support: DEFAULT_SUPPORT,
        })
    }

    pub fn rank_power(scale: f64, exponent: f64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(invalid("reward.scale", "must be finite and non-negative"));
        }
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(invalid("reward.exponent", "must be positive"));
        }
        let (holder_l, holder_alpha) = power_holder(scale, exponent);
        Ok(Self {
            surface: RewardSurface::RankPower { scale, exponent },
            sup_norm: scale,
            holder_l,
            holder_alpha,
            support: DEFAULT_SUPPORT,
        })
    }

    /// `R(x, r) = r`.
    pub fn linear_rank() -> Self {
        Self::rank_power(1.0, 1.0).expect("valid constants")
    }

    pub fn mixed(rank_scale: f64, exponent: f64, abs_scale: f64, length: f64) -> Result<Self> {
        if !(rank_scale >= 0.0 && rank_scale.is_finite()) {
            return Err(invalid("reward.rank_scale", "must be finite and non-negative"));
        }
        if !(exponent > 0.0 && exponent.is_finite()) {
            return Err(invalid("reward.exponent", "must be positive"));
        }
        if !(abs_scale >= 0.0 && abs_scale.is_finite()) {
            return Err(invalid("reward.abs_scale", "must be finite and non-negative"));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(invalid("reward.length", "must be positive"));
        }
        let (holder_l, holder_alpha) = power_holder(rank_scale, exponent);
        Ok(Self {
            surface: RewardSurface::Mixed {
                rank_scale,
                exponent,
                abs_scale,
                length,
            },
            sup_norm: rank_scale + abs_scale,
            holder_l,
            holder_alpha,
            support: DEFAULT_SUPPORT,
        })
    }

    pub fn tabulated(table: RewardTable) -> Self {
        let sup_norm = table.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let holder_l = table.max_rank_slope();
        let xs = table.x_grid();
        let support = if xs.len() > 1 {
            (xs[0], xs[xs.len() - 1])
        } else {
            DEFAULT_SUPPORT
        };
        Self {
            surface: RewardSurface::Table(table),
            sup_norm,
            holder_l,
            holder_alpha: 1.0,
            support,
        }
    }

    /// Overrides the declared Hölder constants. They are checked by
    /// [`holder_estimate`], not trusted.
    pub fn with_holder(mut self, l: f64, alpha: f64) -> Result<Self> {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(invalid("reward.holder_l", "must be finite and non-negative"));
        }
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(invalid("reward.holder_alpha", "must lie in (0, 1]"));
        }
        self.holder_l = l;
        self.holder_alpha = alpha;
        Ok(self)
    }

    /// Sets the `x` range used by validation grids.
    pub fn with_support(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(invalid("reward.support", "needs finite lo < hi"));
        }
        self.support = (lo, hi);
        Ok(self)
    }

    pub fn surface(&self) -> &RewardSurface {
        &self.surface
    }

    pub fn kind(&self) -> RewardKind {
        match self.surface {
            RewardSurface::Constant { .. } | RewardSurface::RankPower { .. } => {
                RewardKind::RankOnly
            }
            RewardSurface::Mixed { .. } => RewardKind::SeparableMixed,
            RewardSurface::Table(_) => RewardKind::Tabulated,
        }
    }

    /// True when `R(x, r)` does not depend on `x`.
    pub fn is_rank_only(&self) -> bool {
        match &self.surface {
            RewardSurface::Constant { .. } | RewardSurface::RankPower { .. } => true,
            RewardSurface::Mixed { abs_scale, .. } => *abs_scale == 0.0,
            RewardSurface::Table(t) => t.independent_of_x(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn holder_l(&self) -> f64 {
        self.holder_l
    }

    pub fn holder_alpha(&self) -> f64 {
        self.holder_alpha
    }

    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    /// `R(x, r)` without the rank-domain check.
    #[inline]
    pub fn eval_unchecked(&self, x: f64, r: f64) -> f64 {
        match &self.surface {
            RewardSurface::Constant { value } => *value,
            RewardSurface::RankPower { scale, exponent } => scale * pow(r, *exponent),
            RewardSurface::Mixed {
                rank_scale,
                exponent,
                abs_scale,
                length,
            } => rank_scale * pow(r, *exponent) + abs_scale * (x / length).tanh(),
            RewardSurface::Table(t) => t.eval(x, r),
        }
    }

    /// Checks boundedness and monotonicity on an `n × n` grid over the
    /// declared support and `[0, 1]`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let n = n.max(2);
        let (lo, hi) = self.support;
        let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        let rs: Vec<f64> = (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
        let slack = 1e-12 * (1.0 + self.sup_norm);
        let mut prev_row: Option<Vec<f64>> = None;
        for &x in &xs {
            let row: Vec<f64> = rs.iter().map(|&r| self.eval_unchecked(x, r)).collect();
            for (j, &v) in row.iter().enumerate() {
                if v.abs() > self.sup_norm + slack {
                    return Err(Error::InvalidReward(format!(
                        "|R({x}, {})| = {} exceeds sup norm {}",
                        rs[j],
                        v.abs(),
                        self.sup_norm
                    )));
                }
                if j > 0 && v < row[j - 1] - slack {
                    return Err(Error::InvalidReward(format!("R({x}, ·) decreases near r = {}", rs[j])));
                }
                if let Some(p) = &prev_row {
                    if v < p[j] - slack {
                        return Err(Error::InvalidReward(format!(
                            "R(·, {}) decreases near x = {x}",
                            rs[j]
                        )));
                    }
                }
            }
            prev_row = Some(row);
        }
        Ok(())
    }
}

#[inline]
fn pow(r: f64, p: f64) -> f64 {
    if p == 1.0 {
        r
    } else if p == 2.0 {
        r * r
    } else if p == 0.5 {
        r.sqrt()
    } else {
        r.powf(p)
    }
}

fn power_holder(scale: f64, exponent: f64) -> (f64, f64) {
    if exponent >= 1.0 {
        (scale * exponent, 1.0)
    } else {
        (scale, exponent)
    }
}

/// `R(x, r)` with `r` restricted to `[0, 1]`.
pub fn reward_eval(spec: &RewardSpec, x: f64, r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!("rank {r} outside [0,1]")));
    }
    Ok(spec.eval_unchecked(x, r))
}

/// `R_μ(x) = R(x, F_μ(x))`.
pub fn rank_reward_eval(
    spec: &RewardSpec,
    mu: &EmpiricalMeasure,
    x: f64,
    convention: CdfConvention,
) -> f64 {
    spec.eval_unchecked(x, mu.cdf_with(x, convention))
}

/// `∫ (R_μ - R_μ')(x) d(μ - μ')(x)` as an exact sum over the union of atoms.
/// A non-positive value certifies the monotonicity condition for the pair.
pub fn monotonicity_pairing(
    spec: &RewardSpec,
    mu: &EmpiricalMeasure,
    mu2: &EmpiricalMeasure,
    convention: CdfConvention,
) -> f64 {
    let (la, wa) = (mu.locations(), mu.weights());
    let (lb, wb) = (mu2.locations(), mu2.weights());
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    while i < la.len() || j < lb.len() {
        let xa = la.get(i).copied().unwrap_or(f64::INFINITY);
        let xb = lb.get(j).copied().unwrap_or(f64::INFINITY);
        let x = xa.min(xb);
        let mut dw = 0.0;
        if xa == x {
            dw += wa[i];
            i += 1;
        }
        if xb == x {
            dw -= wb[j];
            j += 1;
        }
        let dr = rank_reward_eval(spec, mu, x, convention) - rank_reward_eval(spec, mu2, x, convention);
        total += dr * dw;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderEstimate {
    /// Largest `|R(x,r1) - R(x,r2)| / |r1 - r2|^alpha` seen on the grid.
    pub l_hat: f64,
    pub alpha: f64,
    pub ok: bool,
}

/// Scans `(x, r1, r2)` triples on a `grid_size`-point grid and checks the
/// declared Hölder constants.
pub fn holder_estimate(spec: &RewardSpec, grid_size: usize) -> Result<HolderEstimate> {
    if grid_size < 2 {
        return Err(invalid("grid_size", "needs at least 2 points"));
    }
    let n = grid_size;
    let (lo, hi) = spec.support;
    let alpha = spec.holder_alpha;
    let l = spec.holder_l;
    let rs: Vec<f64> = (0..n).map(|j| j as f64 / (n - 1) as f64).collect();
    let mut l_hat: f64 = 0.0;
    let mut ok = true;
    for i in 0..n {
        let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let vals: Vec<f64> = rs.iter().map(|&r| spec.eval_unchecked(x, r)).collect();
        for a in 0..n {
            for b in a + 1..n {
                let dr = (rs[b] - rs[a]).powf(alpha);
                let dv = (vals[b] - vals[a]).abs();
                l_hat = l_hat.max(dv / dr);
                if dv > l * dr * (1.0 + 1e-12) + 1e-15 {
                    ok = false;
                }
            }
        }
    }
    Ok(HolderEstimate { l_hat, alpha, ok })
}
