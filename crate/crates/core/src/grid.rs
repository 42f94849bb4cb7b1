//! Rectilinear state lattices, value storage and multilinear interpolation.
//!
//! Values are stored row-major: the last dimension varies fastest. Queries
//! outside the box are clamped to the boundary before interpolating, so the
//! interpolation operator is a convex combination of node values everywhere.

use crate::artifact::Stamp;
use crate::system::{Interval, MAX_STATE_DIM};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

pub const GRID_FORMAT: &str = "ras-grid";
pub const GRID_FORMAT_VERSION: u32 = 1;

/// Relative distance (in cells) under which a query coordinate snaps to a node.
const NODE_SNAP: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error(
        "axis {axis}: need lower < upper and at least 2 nodes, got [{lower}, {upper}] with {count}"
    )]
    BadAxis {
        axis: usize,
        lower: f64,
        upper: f64,
        count: usize,
    },
    #[error("grid must have between 1 and {MAX_STATE_DIM} dimensions, got {0}")]
    BadDimension(usize),
    #[error("index {index} out of range for axis {axis} with {count} nodes")]
    IndexOutOfRange {
        axis: usize,
        index: usize,
        count: usize,
    },
    #[error("expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty lattice bounds on dimension {0}")]
    EmptyBounds(usize),
    #[error("lattice count must be positive on dimension {0}")]
    ZeroCount(usize),
    #[error("malformed grid file, line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, count: usize) -> Self {
        Self {
            lower,
            upper,
            count,
        }
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.count - 1) as f64
    }

    pub fn coordinate(&self, index: usize) -> f64 {
        self.lower + index as f64 * self.spacing()
    }
}

/// Shape of an n-dimensional lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    axes: Vec<Axis>,
    #[serde(skip)]
    strides: Vec<usize>,
}

impl GridSpec {
    pub fn new(axes: Vec<Axis>) -> Result<Self, GridError> {
        if axes.is_empty() || axes.len() > MAX_STATE_DIM {
            return Err(GridError::BadDimension(axes.len()));
        }
        for (axis, a) in axes.iter().enumerate() {
            if !(a.lower.is_finite() && a.upper.is_finite() && a.lower < a.upper && a.count >= 2) {
                return Err(GridError::BadAxis {
                    axis,
                    lower: a.lower,
                    upper: a.upper,
                    count: a.count,
                });
            }
        }
        let mut strides = vec![1; axes.len()];
        for i in (0..axes.len() - 1).rev() {
            strides[i] = strides[i + 1] * axes[i + 1].count;
        }
        Ok(Self { axes, strides })
    }

    /// Builds a spec from parallel lower/upper/count lists.
    pub fn from_bounds(lower: &[f64], upper: &[f64], counts: &[usize]) -> Result<Self, GridError> {
        if lower.len() != upper.len() || lower.len() != counts.len() {
            return Err(GridError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len().min(counts.len()),
            });
        }
        Self::new(
            lower
                .iter()
                .zip(upper)
                .zip(counts)
                .map(|((&l, &u), &c)| Axis::new(l, u, c))
                .collect(),
        )
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn ndim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.axes.iter().map(Axis::spacing).collect()
    }

    /// Volume of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    pub fn bounds(&self) -> Vec<Interval> {
        self.axes
            .iter()
            .map(|a| Interval::new(a.lower, a.upper))
            .collect()
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn flat_index(&self, multi: &[usize]) -> Result<usize, GridError> {
        if multi.len() != self.ndim() {
            return Err(GridError::DimensionMismatch {
                expected: self.ndim(),
                got: multi.len(),
            });
        }
        let mut flat = 0;
        for (axis, (&i, a)) in multi.iter().zip(&self.axes).enumerate() {
            if i >= a.count {
                return Err(GridError::IndexOutOfRange {
                    axis,
                    index: i,
                    count: a.count,
                });
            }
            flat += i * self.strides[axis];
        }
        Ok(flat)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.ndim()];
        for (axis, stride) in self.strides.iter().enumerate() {
            out[axis] = flat / stride;
            flat %= stride;
        }
        out
    }

    pub fn node_state(&self, multi: &[usize]) -> Result<Vec<f64>, GridError> {
        self.flat_index(multi)?;
        Ok(multi
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.coordinate(i))
            .collect())
    }

    /// State of the node with the given flat index, written into `out`.
    pub fn node_state_flat_into(&self, mut flat: usize, out: &mut [f64]) {
        for (axis, stride) in self.strides.iter().enumerate() {
            out[axis] = self.axes[axis].coordinate(flat / stride);
            flat %= stride;
        }
    }

    pub fn node_state_flat(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.ndim()];
        self.node_state_flat_into(flat, &mut out);
        out
    }

    /// All node states, row-major, flattened into one buffer of `len() * ndim()`.
    pub fn node_states(&self) -> Vec<f64> {
        let n = self.ndim();
        let mut out = vec![0.0; self.len() * n];
        for (flat, chunk) in out.chunks_exact_mut(n).enumerate() {
            self.node_state_flat_into(flat, chunk);
        }
        out
    }

    /// Flat index of the node nearest to `x` (after clamping into the box).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        self.axes
            .iter()
            .zip(x)
            .zip(&self.strides)
            .map(|((a, &v), s)| {
                let t = ((v - a.lower) / a.spacing()).clamp(0.0, (a.count - 1) as f64);
                t.round() as usize * s
            })
            .sum()
    }

    /// Cell coordinates of `x`: per axis the lower node index and the fraction
    /// toward the next node, after clamping into the box.
    #[inline]
    pub fn locate(&self, x: &[f64], base: &mut usize, frac: &mut [f64]) {
        let mut flat = 0;
        for (axis, a) in self.axes.iter().enumerate() {
            let last = (a.count - 1) as f64;
            let mut t = ((x[axis] - a.lower) / a.spacing()).clamp(0.0, last);
            let r = t.round();
            if (t - r).abs() < NODE_SNAP {
                t = r;
            }
            let i = (t.floor() as usize).min(a.count - 2);
            frac[axis] = t - i as f64;
            flat += i * self.strides[axis];
        }
        *base = flat;
    }

    /// Multilinear interpolation of `values` (laid out on this spec) at `x`.
    #[inline]
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let n = self.ndim();
        let mut frac = [0.0; MAX_STATE_DIM];
        let mut base = 0;
        self.locate(x, &mut base, &mut frac);
        if n == 2 {
            let s0 = self.strides[0];
            let (fx, fy) = (frac[0], frac[1]);
            let v00 = values[base];
            let v01 = values[base + 1];
            let v10 = values[base + s0];
            let v11 = values[base + s0 + 1];
            let a = v00 * (1.0 - fy) + v01 * fy;
            let b = v10 * (1.0 - fy) + v11 * fy;
            return a * (1.0 - fx) + b * fx;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut idx = base;
            for axis in 0..n {
                if corner >> (n - 1 - axis) & 1 == 1 {
                    w *= frac[axis];
                    idx += self.strides[axis];
                } else {
                    w *= 1.0 - frac[axis];
                }
            }
            if w != 0.0 {
                acc += w * values[idx];
            }
        }
        acc
    }

    /// Flat indices of the 2^n corners of the cell enclosing `x`.
    pub fn cell_corners(&self, x: &[f64]) -> Vec<usize> {
        let n = self.ndim();
        let mut frac = [0.0; MAX_STATE_DIM];
        let mut base = 0;
        self.locate(x, &mut base, &mut frac);
        (0..(1usize << n))
            .map(|corner| {
                (0..n)
                    .filter(|axis| corner >> (n - 1 - axis) & 1 == 1)
                    .map(|axis| self.strides[axis])
                    .sum::<usize>()
                    + base
            })
            .collect()
    }

    pub fn clamp_into(&self, x: &mut [f64]) {
        for (v, a) in x.iter_mut().zip(&self.axes) {
            *v = v.clamp(a.lower, a.upper);
        }
    }

    fn rebuilt(axes: Vec<Axis>) -> Result<Self, GridError> {
        Self::new(axes)
    }
}

/// Values laid out on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ValueGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != spec.len() {
            return Err(GridError::LengthMismatch {
                expected: spec.len(),
                got: values.len(),
            });
        }
        Ok(Self { spec, values })
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let n = spec.ndim();
        let states = spec.node_states();
        let values = states.chunks_exact(n).map(f).collect();
        Self { spec, values }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn interpolate(&self, x: &[f64]) -> f64 {
        self.spec.interpolate(&self.values, x)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max - min` of the stored values.
    pub fn range(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Writes the CSV form: comment header, axis lines, then one value per line.
    pub fn to_csv(&self, stamp: Option<&Stamp>) -> String {
        let mut s = String::with_capacity(self.values.len() * 24);
        let _ = writeln!(s, "# {GRID_FORMAT},{GRID_FORMAT_VERSION}");
        if let Some(st) = stamp {
            let _ = writeln!(s, "# config_hash,{}", st.config_hash);
            let _ = writeln!(s, "# master_seed,{}", st.master_seed);
        }
        let _ = writeln!(s, "dims,{}", self.spec.ndim());
        for a in self.spec.axes() {
            let _ = writeln!(s, "axis,{},{},{}", a.lower, a.upper, a.count);
        }
        let _ = writeln!(s, "values,{}", self.values.len());
        for v in &self.values {
            let _ = writeln!(s, "{v}");
        }
        s
    }

    /// Parses the CSV form, returning the grid and the embedded stamp if any.
    pub fn from_csv(text: &str) -> Result<(Self, Option<Stamp>), GridError> {
        let perr = |line: usize, message: String| GridError::Parse {
            line: line + 1,
            message,
        };
        let mut hash = None;
        let mut seed = None;
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let mut next_data =
            |hash: &mut Option<String>, seed: &mut Option<u64>| -> Option<(usize, &str)> {
                for (i, l) in lines.by_ref() {
                    if let Some(c) = l.strip_prefix('#') {
                        let c = c.trim();
                        if let Some(h) = c.strip_prefix("config_hash,") {
                            *hash = Some(h.to_string());
                        } else if let Some(sd) = c.strip_prefix("master_seed,") {
                            *seed = sd.parse().ok();
                        }
                        continue;
                    }
                    return Some((i, l));
                }
                None
            };
        let (i, l) = next_data(&mut hash, &mut seed).ok_or_else(|| perr(0, "empty file".into()))?;
        let ndim: usize = l
            .strip_prefix("dims,")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| perr(i, format!("expected `dims,<n>`, got `{l}`")))?;
        let mut axes = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let (i, l) = next_data(&mut hash, &mut seed)
                .ok_or_else(|| perr(i, "missing axis line".into()))?;
            let parts: Vec<&str> = l.split(',').collect();
            if parts.len() != 4 || parts[0] != "axis" {
                return Err(perr(
                    i,
                    format!("expected `axis,<lower>,<upper>,<count>`, got `{l}`"),
                ));
            }
            let lower = parts[1].parse().map_err(|e| perr(i, format!("{e}")))?;
            let upper = parts[2].parse().map_err(|e| perr(i, format!("{e}")))?;
            let count = parts[3].parse().map_err(|e| perr(i, format!("{e}")))?;
            axes.push(Axis::new(lower, upper, count));
        }
        let spec = GridSpec::rebuilt(axes)?;
        let (i, l) =
            next_data(&mut hash, &mut seed).ok_or_else(|| perr(i, "missing values line".into()))?;
        let n: usize = l
            .strip_prefix("values,")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| perr(i, format!("expected `values,<n>`, got `{l}`")))?;
        let mut values = Vec::with_capacity(n);
        while let Some((i, l)) = next_data(&mut hash, &mut seed) {
            values.push(
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| perr(i, format!("{e}")))?,
            );
        }
        if values.len() != n {
            return Err(GridError::LengthMismatch {
                expected: n,
                got: values.len(),
            });
        }
        let grid = ValueGrid::new(spec, values)?;
        let stamp = match (hash, seed) {
            (Some(config_hash), Some(master_seed)) => Some(Stamp {
                config_hash,
                master_seed,
            }),
            _ => None,
        };
        Ok((grid, stamp))
    }

    pub fn to_document(&self, name: &str, stamp: Option<&Stamp>) -> GridDocument {
        GridDocument {
            format: GRID_FORMAT.to_string(),
            version: GRID_FORMAT_VERSION,
            name: name.to_string(),
            config_hash: stamp.map(|s| s.config_hash.clone()),
            master_seed: stamp.map(|s| s.master_seed),
            axes: self.spec.axes().to_vec(),
            values: self.values.clone(),
        }
    }

    pub fn to_json(&self, name: &str, stamp: Option<&Stamp>) -> String {
        serde_json::to_string_pretty(&self.to_document(name, stamp)).expect("grid serializes")
    }

    pub fn from_json(text: &str) -> Result<(Self, GridDocument), GridError> {
        let doc: GridDocument = serde_json::from_str(text).map_err(|e| GridError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if doc.format != GRID_FORMAT {
            return Err(GridError::Parse {
                line: 0,
                message: format!("unexpected format `{}`", doc.format),
            });
        }
        let grid = ValueGrid::new(GridSpec::new(doc.axes.clone())?, doc.values.clone())?;
        Ok((grid, doc))
    }
}

/// Structured JSON form of a [`ValueGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDocument {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub config_hash: Option<String>,
    pub master_seed: Option<u64>,
    pub axes: Vec<Axis>,
    pub values: Vec<f64>,
}

/// Evenly spaced per-dimension values (both endpoints included), combined as
/// a row-major Cartesian product. A count of 1 selects the midpoint.
pub fn action_lattice(bounds: &[Interval], counts: &[usize]) -> Result<Vec<Vec<f64>>, GridError> {
    if bounds.len() != counts.len() {
        return Err(GridError::DimensionMismatch {
            expected: bounds.len(),
            got: counts.len(),
        });
    }
    let mut axes = Vec::with_capacity(bounds.len());
    for (dim, (b, &c)) in bounds.iter().zip(counts).enumerate() {
        if !b.is_valid() {
            return Err(GridError::EmptyBounds(dim));
        }
        if c == 0 {
            return Err(GridError::ZeroCount(dim));
        }
        let vals: Vec<f64> = if c == 1 {
            vec![b.center()]
        } else {
            (0..c)
                .map(|k| {
                    if k + 1 == c {
                        b.upper
                    } else {
                        b.lower + b.width() * (k as f64 / (c - 1) as f64)
                    }
                })
                .collect()
        };
        axes.push(vals);
    }
    let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(bounds.len())];
    for vals in &axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                vals.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec1(lower: f64, upper: f64, n: usize) -> GridSpec {
        GridSpec::new(vec![Axis::new(lower, upper, n)]).unwrap()
    }

    #[test]
    fn node_states() {
        let s = spec1(-6.0, 6.0, 13);
        assert_eq!(s.node_state(&[0]).unwrap(), vec![-6.0]);
        assert_eq!(s.node_state(&[6]).unwrap(), vec![0.0]);
        let s2 = GridSpec::from_bounds(&[0.0, 0.0], &[1.0, 2.0], &[2, 3]).unwrap();
        assert_eq!(s2.node_state(&[1, 2]).unwrap(), vec![1.0, 2.0]);
        assert!(matches!(
            s2.node_state(&[2, 0]),
            Err(GridError::IndexOutOfRange { axis: 0, .. })
        ));
        assert_eq!(s2.len(), 6);
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(GridSpec::from_bounds(&[1.0], &[1.0], &[3]).is_err());
        assert!(GridSpec::from_bounds(&[0.0], &[1.0], &[1]).is_err());
        assert!(GridSpec::new(vec![]).is_err());
    }

    #[test]
    fn interpolation_examples() {
        let s = spec1(0.0, 1.0, 2);
        let g = ValueGrid::new(s, vec![0.0, 2.0]).unwrap();
        assert_eq!(g.interpolate(&[0.5]), 1.0);
        assert_eq!(g.interpolate(&[0.0]), 0.0);
        assert_eq!(g.interpolate(&[1.0]), 2.0);

        let s = spec1(-6.0, 6.0, 13);
        let vals: Vec<f64> = (0..13).map(|i| (i as f64).sin()).collect();
        let g = ValueGrid::new(s.clone(), vals.clone()).unwrap();
        for i in 0..13 {
            let x = s.node_state(&[i]).unwrap();
            assert_eq!(g.interpolate(&x), vals[i]);
        }
        let mut last = vals.clone();
        last[12] = 5.0;
        let g = ValueGrid::new(s, last).unwrap();
        assert_eq!(g.interpolate(&[16.0]), 5.0);
    }

    #[test]
    fn nodes_of_non_dyadic_grids_are_exact() {
        let s = GridSpec::from_bounds(&[-6.0, -4.0], &[6.0, 4.0], &[241, 161]).unwrap();
        let g = ValueGrid::from_fn(s.clone(), |x| x[0] * 3.1 - x[1] * x[0]);
        for flat in (0..s.len()).step_by(97) {
            let x = s.node_state_flat(flat);
            assert_eq!(g.interpolate(&x), g.values()[flat]);
        }
    }

    #[test]
    fn lattices() {
        let b = [Interval::symmetric(3.0)];
        assert_eq!(
            action_lattice(&b, &[3]).unwrap(),
            vec![vec![-3.0], vec![0.0], vec![3.0]]
        );
        let b = [Interval::symmetric(2.0)];
        assert_eq!(
            action_lattice(&b, &[2]).unwrap(),
            vec![vec![-2.0], vec![2.0]]
        );
        let b = [Interval::symmetric(1.0), Interval::symmetric(1.0)];
        assert_eq!(
            action_lattice(&b, &[2, 2]).unwrap(),
            vec![
                vec![-1.0, -1.0],
                vec![-1.0, 1.0],
                vec![1.0, -1.0],
                vec![1.0, 1.0]
            ]
        );
        assert_eq!(
            action_lattice(&[Interval::new(1.0, 3.0)], &[1]).unwrap(),
            vec![vec![2.0]]
        );
        assert!(matches!(
            action_lattice(&[Interval::new(1.0, -1.0)], &[2]),
            Err(GridError::EmptyBounds(0))
        ));
        let l = action_lattice(&[Interval::symmetric(3.0)], &[11]).unwrap();
        assert_eq!(l.len(), 11);
        assert_eq!(l[5], vec![0.0]);
        assert_eq!(l[10], vec![3.0]);
    }

    #[test]
    fn csv_and_json_round_trip_bit_exact() {
        let s = GridSpec::from_bounds(&[-6.0, -4.0], &[6.0, 4.0], &[7, 5]).unwrap();
        let g = ValueGrid::from_fn(s, |x| (x[0] * 0.37).sin() / 3.0 + x[1] * 1e-17);
        let stamp = Stamp {
            config_hash: "abc123".into(),
            master_seed: 9,
        };
        let (back, st) = ValueGrid::from_csv(&g.to_csv(Some(&stamp))).unwrap();
        assert_eq!(st, Some(stamp.clone()));
        assert!(back
            .values()
            .iter()
            .zip(g.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.spec(), g.spec());
        let (back, doc) = ValueGrid::from_json(&g.to_json("h", Some(&stamp))).unwrap();
        assert_eq!(doc.master_seed, Some(9));
        assert!(back
            .values()
            .iter()
            .zip(g.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn malformed_csv_reports_line() {
        let err = ValueGrid::from_csv("dims,1\naxis,0,1,2\nvalues,2\n0\nabc\n").unwrap_err();
        assert!(matches!(err, GridError::Parse { line: 5, .. }), "{err:?}");
    }

    fn spec_strategy() -> impl Strategy<Value = GridSpec> {
        prop::collection::vec((-5.0f64..0.0, 0.5f64..5.0, 2usize..7), 1..4).prop_map(|v| {
            GridSpec::new(
                v.into_iter()
                    .map(|(l, w, c)| Axis::new(l, l + w, c))
                    .collect(),
            )
            .unwrap()
        })
    }

    proptest! {
        #[test]
        fn affine_functions_are_reproduced(spec in spec_strategy(), coef in prop::collection::vec(-3.0f64..3.0, 4), c0 in -2.0f64..2.0, t in prop::collection::vec(0.0f64..1.0, 3)) {
            let f = |x: &[f64]| c0 + x.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>();
            let g = ValueGrid::from_fn(spec.clone(), f);
            let x: Vec<f64> = spec.axes().iter().zip(&t).map(|(a, &t)| a.lower + t * (a.upper - a.lower)).collect();
            prop_assert!((g.interpolate(&x) - f(&x)).abs() <= 1e-12);
        }

        #[test]
        fn interpolation_is_bounded_by_corners(spec in spec_strategy(), seed in 0u64..1000, t in prop::collection::vec(-0.5f64..1.5, 3)) {
            let vals: Vec<f64> = (0..spec.len()).map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 100.0 - 5.0).collect();
            let g = ValueGrid::new(spec.clone(), vals).unwrap();
            let x: Vec<f64> = spec.axes().iter().zip(&t).map(|(a, &t)| a.lower + t * (a.upper - a.lower)).collect();
            let corners = spec.cell_corners(&x);
            let lo = corners.iter().map(|&i| g.values()[i]).fold(f64::INFINITY, f64::min);
            let hi = corners.iter().map(|&i| g.values()[i]).fold(f64::NEG_INFINITY, f64::max);
            let v = g.interpolate(&x);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }

        #[test]
        fn flat_and_multi_index_are_inverse(spec in spec_strategy(), k in 0usize..10_000) {
            let flat = k % spec.len();
            let multi = spec.multi_index(flat);
            prop_assert_eq!(spec.flat_index(&multi).unwrap(), flat);
            let x = spec.node_state(&multi).unwrap();
            prop_assert_eq!(spec.nearest_node(&x), flat);
        }
    }
}
