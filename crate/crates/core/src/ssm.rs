//! Selective-scan state-space recurrence with zero-order-hold discretization
//! and the four-direction 2D scan.
//!
//! Per channel `d` and state `n`, with step-dependent `Δ`, `B`, `C`:
//!
//! ```text
//! Â = exp(Δ·A)            B̂ = φ₁(Δ·A)·Δ·B,   φ₁(z) = (eᶻ − 1)/z
//! h[k] = Â·h[k−1] + B̂·x[k]
//! y[k] = Σₙ C[k]·h[k] + D·x[k]
//! ```
//!
//! `A` is diagonal (one negative entry per channel and state), `B` and `C`
//! are shared across channels as in S6.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::ModelError;

/// Below this |z| the φ₁ series replaces the closed form.
pub const SERIES_THRESHOLD: f64 = 1e-6;

/// φ₁(z) = (eᶻ − 1)/z, continuous at 0.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < SERIES_THRESHOLD {
        1.0 + z * (0.5 + z / 6.0)
    } else {
        Float::exp_m1(z) / z
    }
}

/// dφ₁/dz.
pub fn phi1_derivative(z: f64) -> f64 {
    if z.abs() < 1e-4 {
        0.5 + z * (1.0 / 3.0 + z * (0.125 + z / 30.0))
    } else {
        (z * Float::exp(z) - Float::exp_m1(z)) / (z * z)
    }
}

/// Zero-order-hold discretization of one diagonal entry: `(Â, B̂)`.
pub fn discretize(a: f64, b: f64, delta: f64) -> (f64, f64) {
    let z = delta * a;
    (Float::exp(z), phi1(z) * delta * b)
}

/// Elementwise [`discretize`] for a diagonal `A` and matching `B`.
pub fn discretize_diag(a: &[f64], b: &[f64], delta: f64) -> (Vec<f64>, Vec<f64>) {
    a.iter()
        .zip(b)
        .map(|(&a, &b)| discretize(a, b, delta))
        .unzip()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsmParameters {
    pub channels: usize,
    pub state_dim: usize,
    /// `channels × state_dim`, every entry negative.
    pub a: Vec<f64>,
    /// Skip connection per channel.
    pub d: Vec<f64>,
}

impl SsmParameters {
    pub fn new(
        channels: usize,
        state_dim: usize,
        a: Vec<f64>,
        d: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if a.len() != channels * state_dim {
            return Err(ModelError::ShapeMismatch {
                expected: "A of channels × state_dim",
                got: a.len(),
            });
        }
        if d.len() != channels {
            return Err(ModelError::ShapeMismatch {
                expected: "D of length channels",
                got: d.len(),
            });
        }
        if !a.iter().all(|v| *v < 0.0) {
            return Err(ModelError::InvalidConfig("A entries must be negative"));
        }
        Ok(Self {
            channels,
            state_dim,
            a,
            d,
        })
    }
}

/// Per-position inputs of one scan. Positions are indexed independently of
/// the scan order: `x` and `delta` are `positions × channels`, `b` and `c`
/// are `positions × state_dim`.
#[derive(Debug, Clone, Copy)]
pub struct ScanInput<'a> {
    pub x: &'a [f64],
    pub delta: &'a [f64],
    pub b: &'a [f64],
    pub c: &'a [f64],
}

impl ScanInput<'_> {
    fn positions(&self, p: &SsmParameters) -> usize {
        let n = self.x.len() / p.channels;
        debug_assert_eq!(self.x.len(), n * p.channels);
        debug_assert_eq!(self.delta.len(), n * p.channels);
        debug_assert_eq!(self.b.len(), n * p.state_dim);
        debug_assert_eq!(self.c.len(), n * p.state_dim);
        n
    }
}

/// Runs the recurrence over positions visited in `order`, adding the output
/// of each step to `y` at that position. Returns the hidden states in step
/// order (`steps × channels × state_dim`) for the backward pass.
pub fn scan_ordered(
    p: &SsmParameters,
    input: &ScanInput<'_>,
    order: &[usize],
    y: &mut [f64],
) -> Vec<f64> {
    let (dc, ns) = (p.channels, p.state_dim);
    let _ = input.positions(p);
    let mut states = vec![0.0; order.len() * dc * ns];
    let mut h = vec![0.0; dc * ns];
    for (k, &pos) in order.iter().enumerate() {
        let b = &input.b[pos * ns..(pos + 1) * ns];
        let c = &input.c[pos * ns..(pos + 1) * ns];
        for d in 0..dc {
            let x = input.x[pos * dc + d];
            let delta = input.delta[pos * dc + d];
            let mut acc = p.d[d] * x;
            for n in 0..ns {
                let z = delta * p.a[d * ns + n];
                let hv = &mut h[d * ns + n];
                *hv = Float::exp(z) * *hv + phi1(z) * delta * b[n] * x;
                acc += c[n] * *hv;
            }
            y[pos * dc + d] += acc;
        }
        states[k * dc * ns..(k + 1) * dc * ns].copy_from_slice(&h);
    }
    states
}

/// Single-order scan over positions `0..L`.
pub fn ssm_scan(p: &SsmParameters, input: &ScanInput<'_>) -> Vec<f64> {
    let n = input.positions(p);
    let order: Vec<usize> = (0..n).collect();
    let mut y = vec![0.0; n * p.channels];
    scan_ordered(p, input, &order, &mut y);
    y
}

/// Gradients of a scan with respect to its inputs and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGrads {
    pub x: Vec<f64>,
    pub delta: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub a: Vec<f64>,
    pub d: Vec<f64>,
}

impl ScanGrads {
    pub fn zeros(p: &SsmParameters, positions: usize) -> Self {
        Self {
            x: vec![0.0; positions * p.channels],
            delta: vec![0.0; positions * p.channels],
            b: vec![0.0; positions * p.state_dim],
            c: vec![0.0; positions * p.state_dim],
            a: vec![0.0; p.channels * p.state_dim],
            d: vec![0.0; p.channels],
        }
    }
}

/// Accumulates the gradients of `scan_ordered` given `gy` (per position).
pub fn scan_ordered_backward(
    p: &SsmParameters,
    input: &ScanInput<'_>,
    order: &[usize],
    states: &[f64],
    gy: &[f64],
    grads: &mut ScanGrads,
) {
    let (dc, ns) = (p.channels, p.state_dim);
    let mut gh = vec![0.0; dc * ns];
    for k in (0..order.len()).rev() {
        let pos = order[k];
        let h = &states[k * dc * ns..(k + 1) * dc * ns];
        let b = &input.b[pos * ns..(pos + 1) * ns];
        let c = &input.c[pos * ns..(pos + 1) * ns];
        for d in 0..dc {
            let x = input.x[pos * dc + d];
            let delta = input.delta[pos * dc + d];
            let g = gy[pos * dc + d];
            grads.d[d] += g * x;
            let mut gx = p.d[d] * g;
            let mut gdelta = 0.0;
            for n in 0..ns {
                let i = d * ns + n;
                let a = p.a[i];
                let z = delta * a;
                let h_prev = if k == 0 {
                    0.0
                } else {
                    states[(k - 1) * dc * ns + i]
                };
                grads.c[pos * ns + n] += g * h[i];
                let ghk = gh[i] + c[n] * g;
                let abar = Float::exp(z);
                let ph = phi1(z);
                let bbar = ph * delta * b[n];
                gx += ghk * bbar;
                let gbbar = ghk * x;
                let gz = ghk * h_prev * abar + gbbar * phi1_derivative(z) * delta * b[n];
                gdelta += gbbar * ph * b[n] + gz * a;
                grads.b[pos * ns + n] += gbbar * ph * delta;
                grads.a[i] += gz * delta;
                gh[i] = ghk * abar;
            }
            grads.x[pos * dc + d] += gx;
            grads.delta[pos * dc + d] += gdelta;
        }
    }
}

/// The four scan orders of an `h × w` grid: row-major, column-major and
/// both reversed.
pub fn ss2d_orders(h: usize, w: usize) -> [Vec<usize>; 4] {
    let row: Vec<usize> = (0..h * w).collect();
    let col: Vec<usize> = (0..w)
        .flat_map(|j| (0..h).map(move |i| i * w + j))
        .collect();
    let row_rev: Vec<usize> = row.iter().rev().copied().collect();
    let col_rev: Vec<usize> = col.iter().rev().copied().collect();
    [row, col, row_rev, col_rev]
}

/// Four-direction scan of an `h × w` map, merged by summation. Returns the
/// output and the per-order hidden states.
pub fn ss2d_scan(
    p: &SsmParameters,
    input: &ScanInput<'_>,
    h: usize,
    w: usize,
) -> (Vec<f64>, [Vec<f64>; 4]) {
    let mut y = vec![0.0; h * w * p.channels];
    let orders = ss2d_orders(h, w);
    let states = orders.each_ref().map(|o| scan_ordered(p, input, o, &mut y));
    (y, states)
}

pub fn ss2d_scan_backward(
    p: &SsmParameters,
    input: &ScanInput<'_>,
    h: usize,
    w: usize,
    states: &[Vec<f64>; 4],
    gy: &[f64],
) -> ScanGrads {
    let mut grads = ScanGrads::zeros(p, h * w);
    for (o, s) in ss2d_orders(h, w).iter().zip(states) {
        scan_ordered_backward(p, input, o, s, gy, &mut grads);
    }
    grads
}
