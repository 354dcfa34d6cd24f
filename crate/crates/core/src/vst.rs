//! Monotone continuous piecewise-linear variance-stabilizing transform.
//!
//! The forward map `f` interpolates knots `(x_i, y_i)` where the `x_i` are
//! uniformly spaced over `[z_min, z_max]` and the `y_i` are cumulative sums
//! `y_0 = θ_0`, `y_i = θ_0 + Σ_{j=1..i} exp(θ_j)`, so `f` is strictly
//! increasing for every `θ`. Outside the grid both `f` and its algebraic
//! inverse extend the boundary segments linearly. The learned inverse is
//! `f⁻¹(w) + α·w + β`.
//!
//! Indices are 0-based: segment `i` joins knots `i` and `i + 1`, and
//! `θ_0` is the free offset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

pub const DEFAULT_KNOTS: usize = 128;

/// Bound applied to every `θ` entry after an optimizer step.
pub const THETA_BOUND: f64 = 20.0;

pub const CHECKPOINT_FORMAT: &str = "n2vst/1";

/// Segment containing `z` among strictly increasing `breaks`: the largest
/// `i ≤ len - 2` with `breaks[i] ≤ z`, or 0 when `z < breaks[0]`.
///
/// Intervals are left-closed and the outer segments extend to ±∞.
pub fn segment_index(z: f64, breaks: &[f64]) -> usize {
    debug_assert!(breaks.len() >= 2);
    let inner = &breaks[..breaks.len() - 1];
    inner.partition_point(|&b| b <= z).saturating_sub(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Vst {
    z_min: f64,
    z_max: f64,
    theta: Vec<f64>,
    alpha: f64,
    beta: f64,
}

impl Vst {
    /// Transform with `f(z) = z` everywhere and zero inverse correction.
    pub fn new_identity(z_min: f64, z_max: f64, n: usize) -> Result<Self> {
        check_grid(z_min, z_max, n)?;
        let mut theta = vec![((z_max - z_min) / (n - 1) as f64).ln(); n];
        theta[0] = z_min;
        Self::from_parts(z_min, z_max, theta, 0.0, 0.0)
    }

    pub fn from_parts(
        z_min: f64,
        z_max: f64,
        theta: Vec<f64>,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        check_grid(z_min, z_max, theta.len())?;
        if !theta.iter().all(|t| t.is_finite()) || !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::Invariant("VST parameters must be finite".into()));
        }
        let vst = Self {
            z_min,
            z_max,
            theta,
            alpha,
            beta,
        };
        let y = vst.knot_values();
        if y.windows(2).any(|p| !(p[0] < p[1])) || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant(
                "knot values are not strictly increasing in floating point".into(),
            ));
        }
        Ok(vst)
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    /// Number of learnable scalars: `n` entries of θ plus α and β.
    pub fn parameter_count(&self) -> usize {
        self.theta.len() + 2
    }

    pub fn z_min(&self) -> f64 {
        self.z_min
    }

    pub fn z_max(&self) -> f64 {
        self.z_max
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Flat parameter vector `[θ_0, …, θ_{n-1}, α, β]`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = self.theta.clone();
        p.push(self.alpha);
        p.push(self.beta);
        p
    }

    /// Replaces all parameters from a flat `[θ, α, β]` vector, clamping θ to
    /// `±THETA_BOUND`. Left unchanged on error, including when the slopes
    /// span more than f64 can resolve and two knots coincide.
    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        let n = self.n();
        if params.len() != n + 2 {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                n + 2,
                params.len()
            )));
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::NonFinite("VST parameter update".into()));
        }
        let theta: Vec<f64> = params[..n]
            .iter()
            .map(|p| p.clamp(-THETA_BOUND, THETA_BOUND))
            .collect();
        *self = Self::from_parts(self.z_min, self.z_max, theta, params[n], params[n + 1])?;
        Ok(())
    }

    pub fn knot_positions(&self) -> Vec<f64> {
        let n = self.n();
        let span = self.z_max - self.z_min;
        (0..n)
            .map(|i| span * i as f64 / (n - 1) as f64 + self.z_min)
            .collect()
    }

    pub fn knot_values(&self) -> Vec<f64> {
        let mut acc = self.theta[0];
        let mut y = Vec::with_capacity(self.n());
        y.push(acc);
        for t in &self.theta[1..] {
            acc += t.exp();
            y.push(acc);
        }
        y
    }

    /// Precomputed knots for repeated evaluation.
    pub fn knots(&self) -> Knots {
        Knots {
            x: self.knot_positions(),
            y: self.knot_values(),
            exp_theta: self.theta.iter().map(|t| t.exp()).collect(),
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn forward(&self, z: f64) -> f64 {
        self.knots().forward(z)
    }

    pub fn algebraic_inverse(&self, w: f64) -> f64 {
        self.knots().algebraic_inverse(w)
    }

    pub fn inverse(&self, w: f64) -> f64 {
        self.knots().inverse(w)
    }

    pub fn grad(&self, z: f64, w: f64) -> PointGrad {
        self.knots().grad(z, w)
    }

    pub fn forward_image(&self, img: &ImageBuffer) -> ImageBuffer {
        let k = self.knots();
        img.map(|z| k.forward(z))
    }

    pub fn inverse_image(&self, img: &ImageBuffer) -> ImageBuffer {
        let k = self.knots();
        img.map(|w| k.inverse(w))
    }

    pub fn to_document(&self) -> VstDocument {
        VstDocument {
            format: CHECKPOINT_FORMAT.to_string(),
            n: self.n(),
            z_min: self.z_min,
            z_max: self.z_max,
            theta: self.theta.clone(),
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    pub fn from_document(doc: VstDocument) -> Result<Self> {
        if doc.format != CHECKPOINT_FORMAT {
            return Err(Error::Malformed(format!(
                "unknown checkpoint format {:?}",
                doc.format
            )));
        }
        if doc.n != doc.theta.len() {
            return Err(Error::Malformed(format!(
                "n = {} but theta has {} entries",
                doc.n,
                doc.theta.len()
            )));
        }
        Self::from_parts(doc.z_min, doc.z_max, doc.theta, doc.alpha, doc.beta)
    }

    pub fn serialize(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("plain data serializes")
    }

    pub fn deserialize(text: &str) -> Result<Self> {
        let doc: VstDocument =
            serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
        Self::from_document(doc)
    }

    /// CSV `z,f,f_inv` sampled on `points` evenly spaced values over `[z_min, z_max]`.
    pub fn curve_csv(&self, points: usize) -> String {
        let k = self.knots();
        let points = points.max(2);
        let mut out = String::from("z,f,f_inv\n");
        for i in 0..points {
            let z = if i == points - 1 {
                self.z_max
            } else {
                self.z_min + (self.z_max - self.z_min) * i as f64 / (points - 1) as f64
            };
            out.push_str(&format!("{:.10},{:.10},{:.10}\n", z, k.forward(z), k.inverse(z)));
        }
        out
    }
}

fn check_grid(z_min: f64, z_max: f64, n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 knots, got {n}")));
    }
    if !z_min.is_finite() || !z_max.is_finite() || !(z_min < z_max) {
        return Err(Error::InvalidArgument(format!(
            "grid bounds must satisfy z_min < z_max, got [{z_min}, {z_max}]"
        )));
    }
    Ok(())
}

/// On-disk checkpoint layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VstDocument {
    pub format: String,
    pub n: usize,
    pub z_min: f64,
    pub z_max: f64,
    pub theta: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

/// Derivative of a spline evaluation with respect to θ, stored compactly.
///
/// Every output depends on θ only through one segment's endpoint values,
/// so the gradient has the shape
/// `∂/∂θ_0 = full`, `∂/∂θ_j = full·exp(θ_j)` for `1 ≤ j ≤ prefix_end`,
/// `∂/∂θ_{prefix_end+1} = partial·exp(θ_{prefix_end+1})`, zero beyond.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThetaGrad {
    pub prefix_end: usize,
    pub full: f64,
    pub partial: f64,
}

impl ThetaGrad {
    pub fn to_dense(&self, exp_theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; exp_theta.len()];
        out[0] = self.full;
        for j in 1..=self.prefix_end {
            out[j] = self.full * exp_theta[j];
        }
        out[self.prefix_end + 1] = self.partial * exp_theta[self.prefix_end + 1];
        out
    }
}

/// Analytic derivatives of `f` at `z` and of the learned inverse at `w`,
/// with segment indices held fixed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointGrad {
    pub df_dz: f64,
    pub df_dtheta: ThetaGrad,
    pub dinv_dw: f64,
    pub dinv_dtheta: ThetaGrad,
    pub dinv_dalpha: f64,
    pub dinv_dbeta: f64,
}

/// Knot tables of a [`Vst`], computed once per image or batch.
#[derive(Clone, Debug)]
pub struct Knots {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub exp_theta: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl Knots {
    #[inline]
    pub fn forward(&self, z: f64) -> f64 {
        let i = segment_index(z, &self.x);
        let slope = (self.y[i + 1] - self.y[i]) / (self.x[i + 1] - self.x[i]);
        slope * (z - self.x[i]) + self.y[i]
    }

    #[inline]
    pub fn algebraic_inverse(&self, w: f64) -> f64 {
        let k = segment_index(w, &self.y);
        let slope = (self.x[k + 1] - self.x[k]) / (self.y[k + 1] - self.y[k]);
        slope * (w - self.y[k]) + self.x[k]
    }

    #[inline]
    pub fn inverse(&self, w: f64) -> f64 {
        self.algebraic_inverse(w) + self.alpha * w + self.beta
    }

    /// Forward value, slope and θ-gradient at `z`.
    #[inline]
    pub fn forward_grad(&self, z: f64) -> (f64, f64, ThetaGrad) {
        let i = segment_index(z, &self.x);
        let dx = self.x[i + 1] - self.x[i];
        let dy = self.y[i + 1] - self.y[i];
        let t = (z - self.x[i]) / dx;
        let value = dy / dx * (z - self.x[i]) + self.y[i];
        (
            value,
            dy / dx,
            ThetaGrad {
                prefix_end: i,
                full: 1.0,
                partial: t,
            },
        )
    }

    /// Learned-inverse value, `∂/∂w` and θ-gradient at `w`.
    #[inline]
    pub fn inverse_grad(&self, w: f64) -> (f64, f64, ThetaGrad) {
        let k = segment_index(w, &self.y);
        let dx = self.x[k + 1] - self.x[k];
        let dy = self.y[k + 1] - self.y[k];
        let t = (w - self.y[k]) / dy;
        let slope = dx / dy;
        let value = slope * (w - self.y[k]) + self.x[k] + self.alpha * w + self.beta;
        (
            value,
            slope + self.alpha,
            ThetaGrad {
                prefix_end: k,
                full: -slope,
                partial: -slope * t,
            },
        )
    }

    pub fn grad(&self, z: f64, w: f64) -> PointGrad {
        let (_, df_dz, df_dtheta) = self.forward_grad(z);
        let (_, dinv_dw, dinv_dtheta) = self.inverse_grad(w);
        PointGrad {
            df_dz,
            df_dtheta,
            dinv_dw,
            dinv_dtheta,
            dinv_dalpha: w,
            dinv_dbeta: 1.0,
        }
    }
}

/// Sums many weighted [`ThetaGrad`]s in O(1) each, expanding to a dense
/// vector once at the end.
#[derive(Clone, Debug)]
pub struct ThetaAccumulator {
    full_at: Vec<f64>,
    partial_at: Vec<f64>,
}

impl ThetaAccumulator {
    pub fn new(n: usize) -> Self {
        Self {
            full_at: vec![0.0; n],
            partial_at: vec![0.0; n],
        }
    }

    #[inline]
    pub fn add(&mut self, weight: f64, g: &ThetaGrad) {
        self.full_at[g.prefix_end] += weight * g.full;
        self.partial_at[g.prefix_end + 1] += weight * g.partial;
    }

    pub fn merge(&mut self, other: &ThetaAccumulator) {
        for (a, b) in self.full_at.iter_mut().zip(&other.full_at) {
            *a += b;
        }
        for (a, b) in self.partial_at.iter_mut().zip(&other.partial_at) {
            *a += b;
        }
    }

    pub fn finish(&self, exp_theta: &[f64]) -> Vec<f64> {
        let n = self.full_at.len();
        let mut out = vec![0.0; n];
        // suffix[j] = Σ_{i ≥ j} full_at[i]
        let mut suffix = 0.0;
        for j in (1..n).rev() {
            suffix += self.full_at[j];
            out[j] = exp_theta[j] * (suffix + self.partial_at[j]);
        }
        out[0] = suffix + self.full_at[0];
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// x = [0, 0.5, 1], y = [0, 0.8, 1.0]
    fn three_knot() -> Vst {
        Vst::from_parts(0.0, 1.0, vec![0.0, 0.8f64.ln(), 0.2f64.ln()], 0.0, 0.0).unwrap()
    }

    #[test]
    fn identity_construction() {
        let v = Vst::new_identity(0.0, 1.0, 128).unwrap();
        assert!((v.forward(0.37) - 0.37).abs() < 1e-12);
        assert!((v.forward(-0.5) + 0.5).abs() < 1e-12);
        let two = Vst::new_identity(0.0, 1.0, 2).unwrap();
        assert_eq!(two.theta(), &[0.0, 0.0]);
        for (x, y) in v.knot_positions().iter().zip(v.knot_values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_grids() {
        assert!(Vst::new_identity(1.0, 1.0, 8).is_err());
        assert!(Vst::new_identity(2.0, 1.0, 8).is_err());
        assert!(Vst::new_identity(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn knot_tables() {
        let v = Vst::new_identity(0.0, 1.0, 3).unwrap();
        assert_eq!(v.knot_positions(), vec![0.0, 0.5, 1.0]);
        let v2 = Vst::new_identity(-2.0, 3.0, 2).unwrap();
        assert_eq!(v2.knot_positions(), vec![-2.0, 3.0]);

        let flat = Vst::from_parts(0.0, 1.0, vec![0.0; 3], 0.0, 0.0).unwrap();
        assert_eq!(flat.knot_values(), vec![0.0, 1.0, 2.0]);

        let tiny = Vst::from_parts(0.0, 1.0, vec![5.0, -20.0, -20.0], 0.0, 0.0).unwrap();
        let y = tiny.knot_values();
        let e = (-20.0f64).exp();
        assert_relative_eq!(e, 2.061e-9, max_relative = 1e-3);
        assert!(y[0] < y[1] && y[1] < y[2]);
        assert_relative_eq!(y[2] - y[0], 2.0 * e, max_relative = 1e-6);
    }

    #[test]
    fn segment_lookup() {
        let b = [0.0, 0.5, 1.0];
        assert_eq!(segment_index(0.5, &b), 1);
        assert_eq!(segment_index(-7.0, &b), 0);
        assert_eq!(segment_index(2.0, &b), 1);
        assert_eq!(segment_index(0.0, &b), 0);
        assert_eq!(segment_index(0.49, &b), 0);
        assert_eq!(segment_index(1.0, &b), 1);
    }

    #[test]
    fn forward_and_inverse_examples() {
        let v = three_knot();
        assert_relative_eq!(v.forward(0.25), 0.4, epsilon = 1e-12);
        assert_relative_eq!(v.forward(1.5), 1.2, epsilon = 1e-12);
        assert_relative_eq!(v.algebraic_inverse(0.4), 0.25, epsilon = 1e-12);
        assert_eq!(v.inverse(0.4), v.algebraic_inverse(0.4));
    }

    #[test]
    fn inverse_correction() {
        let base = Vst::new_identity(0.0, 1.0, 16).unwrap();
        let mut p = base.parameters();
        let n = base.n();
        p[n] = 0.1;
        p[n + 1] = 0.05;
        let mut v = base.clone();
        v.set_parameters(&p).unwrap();
        assert_relative_eq!(v.inverse(1.0), 1.15, epsilon = 1e-12);

        p[n] = -1.0;
        p[n + 1] = 0.0;
        v.set_parameters(&p).unwrap();
        for w in [-3.0, 0.0, 0.4, 7.5] {
            assert!(v.inverse(w).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_gradients() {
        let mut v = Vst::new_identity(0.0, 1.0, 32).unwrap();
        let mut p = v.parameters();
        p[32] = 0.3;
        v.set_parameters(&p).unwrap();
        for z in [-0.4, 0.1, 0.77, 1.9] {
            let g = v.grad(z, z);
            assert_relative_eq!(g.df_dz, 1.0, epsilon = 1e-9);
            assert_relative_eq!(g.dinv_dw, 1.3, epsilon = 1e-9);
            assert_eq!(g.dinv_dbeta, 1.0);
            assert_eq!(g.dinv_dalpha, z);
        }
    }

    #[test]
    fn set_parameters_clamps_theta() {
        let mut v = Vst::new_identity(0.0, 1.0, 4).unwrap();
        v.set_parameters(&[30.0, -25.0, 0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(v.theta(), &[20.0, -20.0, 0.0, 1.0]);
        assert_eq!((v.alpha(), v.beta()), (2.0, 3.0));
        assert!(v.set_parameters(&[0.0; 5]).is_err());
        assert!(v.set_parameters(&[f64::NAN; 6]).is_err());
    }

    #[test]
    fn accumulator_matches_dense_sum() {
        let v = Vst::from_parts(0.1, 0.9, vec![0.2, -1.0, -2.0, -0.5, -1.5], 0.0, 0.0).unwrap();
        let k = v.knots();
        let mut acc = ThetaAccumulator::new(v.n());
        let mut dense = vec![0.0; v.n()];
        for (wgt, z) in [(0.5, 0.05), (-1.2, 0.33), (2.0, 0.61), (0.7, 1.4)] {
            let (_, _, g) = k.forward_grad(z);
            acc.add(wgt, &g);
            for (d, e) in dense.iter_mut().zip(g.to_dense(&k.exp_theta)) {
                *d += wgt * e;
            }
        }
        for (a, b) in acc.finish(&k.exp_theta).iter().zip(&dense) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let v = Vst::from_parts(-0.1, 1.3, vec![0.3, -4.0, -5.5, -3.25], 0.125, -0.01).unwrap();
        let back = Vst::deserialize(&v.serialize()).unwrap();
        assert_eq!(back, v);

        let mut doc = v.to_document();
        doc.z_min = 2.0;
        let text = serde_json::to_string(&doc).unwrap();
        assert!(matches!(Vst::deserialize(&text), Err(Error::InvalidArgument(_))));

        let mut doc = v.to_document();
        doc.n = 7;
        assert!(Vst::from_document(doc).is_err());
        assert!(Vst::deserialize("{\"format\": 3}").is_err());

        let full = Vst::new_identity(0.0, 1.0, DEFAULT_KNOTS).unwrap();
        let loaded = Vst::deserialize(&full.serialize()).unwrap();
        assert_eq!(loaded.parameter_count(), 130);
    }

    #[test]
    fn curve_export_identity() {
        let v = Vst::new_identity(0.2, 0.8, 128).unwrap();
        let csv = v.curve_csv(256);
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "z,f,f_inv");
        assert_eq!(rows.len(), 257);
        assert!(rows[1].starts_with("0.2000000000,"));
        assert!(rows[256].starts_with("0.8000000000,"));
        for row in &rows[1..] {
            let cols: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
            assert!((cols[0] - cols[1]).abs() < 1e-9);
        }
    }
}
