//! Discrete probability measures on the real line.
//!
//! An [`EmpiricalMeasure`] is a sorted list of distinct atoms with positive
//! weights summing to one. The CDF convention is `F(x) = μ(-∞, x]`: an atom
//! located exactly at `x` counts towards `F(x)`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const MASS_TOLERANCE: f64 = 1e-12;

/// Which cumulative distribution function ranks are measured with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdfConvention {
    /// `F(x) = μ(-∞, x]`, ties count as "same or worse".
    #[default]
    RightContinuous,
    /// `F(x) = (F(x+) + F(x-)) / 2`, ties split evenly.
    Regular,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    locations: Vec<f64>,
    weights: Vec<f64>,
    // cumulative[i] = weights[0] + ... + weights[i], last entry pinned to 1
    cumulative: Vec<f64>,
}

fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl EmpiricalMeasure {
    fn from_sorted_parts(locations: Vec<f64>, weights: Vec<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in &weights {
            acc += w;
            cumulative.push(acc.min(1.0));
        }
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Self {
            locations,
            weights,
            cumulative,
        }
    }

    /// Point mass at `x`.
    pub fn dirac(x: f64) -> Self {
        Self::from_sorted_parts(vec![x], vec![1.0])
    }

    /// Empirical law of raw samples, each with weight `1/M`; ties merge.
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidMeasure("no samples".into()));
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure(format!("non-finite sample {bad}")));
        }
        samples.sort_unstable_by(f64::total_cmp);
        let m = samples.len() as f64;
        let mut locations = Vec::with_capacity(samples.len());
        let mut counts: Vec<u64> = Vec::with_capacity(samples.len());
        for x in samples {
            match locations.last() {
                Some(&last) if last == x => *counts.last_mut().unwrap() += 1,
                _ => {
                    locations.push(x);
                    counts.push(1);
                }
            }
        }
        let weights = counts.into_iter().map(|c| c as f64 / m).collect();
        Ok(Self::from_sorted_parts(locations, weights))
    }

    /// Measure from `(location, weight)` pairs in any order.
    pub fn from_weighted(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("no atoms".into()));
        }
        for &(x, w) in &atoms {
            if !x.is_finite() {
                return Err(Error::InvalidMeasure(format!("non-finite location {x}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidMeasure(format!(
                    "weight {w} at {x} is not positive"
                )));
            }
        }
        let total = neumaier_sum(atoms.iter().map(|a| a.1));
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidMeasure(format!(
                "total mass {total} differs from 1"
            )));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut locations: Vec<f64> = Vec::with_capacity(atoms.len());
        let mut weights: Vec<f64> = Vec::with_capacity(atoms.len());
        for (x, w) in atoms {
            if locations.last() == Some(&x) {
                *weights.last_mut().unwrap() += w;
            } else {
                locations.push(x);
                weights.push(w);
            }
        }
        Ok(Self::from_sorted_parts(locations, weights))
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `F(location_i)` for every atom.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.locations.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn min_location(&self) -> f64 {
        self.locations[0]
    }

    pub fn max_location(&self) -> f64 {
        self.locations[self.locations.len() - 1]
    }

    /// `μ(-∞, x]`.
    #[inline]
    pub fn cdf(&self, x: f64) -> f64 {
        let idx = self.locations.partition_point(|&l| l <= x);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1]
        }
    }

    /// `μ(-∞, x)`.
    #[inline]
    pub fn cdf_left(&self, x: f64) -> f64 {
        let idx = self.locations.partition_point(|&l| l < x);
        if idx == 0 {
            0.0
        } else {
            self.cumulative[idx - 1]
        }
    }

    pub fn cdf_with(&self, x: f64, convention: CdfConvention) -> f64 {
        match convention {
            CdfConvention::RightContinuous => self.cdf(x),
            CdfConvention::Regular => 0.5 * (self.cdf(x) + self.cdf_left(x)),
        }
    }

    /// Smallest atom `x` with `F(x) >= p`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("probability {p} outside [0,1]")));
        }
        let idx = self.cumulative.partition_point(|&c| c < p);
        Ok(self.locations[idx.min(self.len() - 1)])
    }

    pub fn mean(&self) -> f64 {
        self.atoms().map(|(x, w)| w * x).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.atoms().map(|(x, w)| w * x * x).sum()
    }

    /// `μ(· + q)`: atoms move to `location - q`, so `F'(x) = F(x + q)`.
    pub fn shift(&self, q: f64) -> Self {
        Self {
            locations: self.locations.iter().map(|x| x - q).collect(),
            weights: self.weights.clone(),
            cumulative: self.cumulative.clone(),
        }
    }

    /// `(1 - λ) μ + λ μ'`.
    pub fn mixture(&self, other: &Self, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(invalid("lambda", format!("{lambda} is outside [0,1]")));
        }
        if lambda == 0.0 {
            return Ok(self.clone());
        }
        if lambda == 1.0 {
            return Ok(other.clone());
        }
        let n = self.len() + other.len();
        let mut locations = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let (mut i, mut j) = (0, 0);
        while i < self.len() || j < other.len() {
            let a = self.locations.get(i).copied().unwrap_or(f64::INFINITY);
            let b = other.locations.get(j).copied().unwrap_or(f64::INFINITY);
            if a == b {
                locations.push(a);
                weights.push((1.0 - lambda) * self.weights[i] + lambda * other.weights[j]);
                i += 1;
                j += 1;
            } else if a < b {
                locations.push(a);
                weights.push((1.0 - lambda) * self.weights[i]);
                i += 1;
            } else {
                locations.push(b);
                weights.push(lambda * other.weights[j]);
                j += 1;
            }
        }
        Ok(Self::from_sorted_parts(locations, weights))
    }

    /// 1-Wasserstein distance, the area between the two CDFs.
    pub fn w1_distance(&self, other: &Self) -> f64 {
        let (a, b) = (self, other);
        let (mut i, mut j) = (0, 0);
        let (mut fa, mut fb) = (0.0f64, 0.0f64);
        let mut prev = f64::NAN;
        let mut area = 0.0;
        while i < a.len() || j < b.len() {
            let xa = a.locations.get(i).copied().unwrap_or(f64::INFINITY);
            let xb = b.locations.get(j).copied().unwrap_or(f64::INFINITY);
            let x = xa.min(xb);
            if !prev.is_nan() {
                area += (fa - fb).abs() * (x - prev);
            }
            if xa == x {
                fa = a.cumulative[i];
                i += 1;
            }
            if xb == x {
                fb = b.cumulative[j];
                j += 1;
            }
            prev = x;
        }
        area
    }

    /// Writes `location,weight` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "location,weight")?;
        for (x, w) in self.atoms() {
            writeln!(out, "{x:.16e},{w:.16e}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "location,weight" => {}
            Some(Ok(h)) => {
                return Err(Error::InvalidMeasure(format!("unexpected header `{h}`")))
            }
            Some(Err(e)) => return Err(e.into()),
            None => return Err(Error::InvalidMeasure("empty measure file".into())),
        }
        let mut atoms = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.trim().parse::<f64>().ok()).ok_or_else(|| {
                    Error::InvalidMeasure(format!("bad row {}: `{line}`", n + 2))
                })
            };
            let mut cols = line.split(',');
            let x = parse(cols.next())?;
            let w = parse(cols.next())?;
            if cols.next().is_some() {
                return Err(Error::InvalidMeasure(format!("extra columns in row {}", n + 2)));
            }
            atoms.push((x, w));
        }
        if atoms.windows(2).any(|p| p[0].0 >= p[1].0) {
            return Err(Error::InvalidMeasure("locations must be strictly increasing".into()));
        }
        Self::from_weighted(atoms)
    }
}
