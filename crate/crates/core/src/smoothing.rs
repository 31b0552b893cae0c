//! Forward Kalman filtering and backward (Rauch-Tung-Striebel) smoothing of
//! taxel time series under a zero-velocity model.
//!
//! The transition matrix is the identity and both noise covariances are
//! scalar multiples of the identity, so every channel shares the same
//! covariance sequence. The scalar recursions below store one variance per
//! step instead of full matrices; [`smooth_rows_full_matrix`] keeps the
//! general matrix form for cross-checking.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::geometry::TAXEL_COUNT;

#[derive(Debug, Error)]
pub enum SmoothingError {
    #[error("recording is empty")]
    Empty,
    #[error("row {row} has {found} channels, expected {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("timestamps must be strictly increasing (row {row}: {prev} then {next})")]
    NonMonotonic { row: usize, prev: f64, next: f64 },
    #[error("length mismatch: {timestamps} timestamps, {impedances} impedance rows, {pressure} pressure values")]
    LengthMismatch { timestamps: usize, impedances: usize, pressure: usize },
    #[error("non-finite value at row {row}")]
    NonFinite { row: usize },
    #[error("smoother parameter {name} must be positive and finite, got {value}")]
    InvalidConfig { name: &'static str, value: f64 },
    #[error("covariance lost positive definiteness at step {step}")]
    NotPositiveDefinite { step: usize },
}

/// Time series of 24 taxel impedances and one pressure reading per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TaxelRecording {
    timestamps: Vec<f64>,
    impedances: Vec<[f64; TAXEL_COUNT]>,
    pressure: Vec<f64>,
}

impl TaxelRecording {
    pub fn new(
        timestamps: Vec<f64>,
        impedances: Vec<[f64; TAXEL_COUNT]>,
        pressure: Vec<f64>,
    ) -> Result<Self, SmoothingError> {
        if timestamps.len() != impedances.len() || timestamps.len() != pressure.len() {
            return Err(SmoothingError::LengthMismatch {
                timestamps: timestamps.len(),
                impedances: impedances.len(),
                pressure: pressure.len(),
            });
        }
        for (row, ((t, imp), p)) in timestamps.iter().zip(&impedances).zip(&pressure).enumerate() {
            if !t.is_finite() || !p.is_finite() || !imp.iter().all(|v| v.is_finite()) {
                return Err(SmoothingError::NonFinite { row });
            }
        }
        for (row, w) in timestamps.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(SmoothingError::NonMonotonic { row: row + 1, prev: w[0], next: w[1] });
            }
        }
        Ok(Self { timestamps, impedances, pressure })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn impedances(&self) -> &[[f64; TAXEL_COUNT]] {
        &self.impedances
    }

    pub fn pressure(&self) -> &[f64] {
        &self.pressure
    }

    /// Mean sample rate in Hz, or `None` for fewer than two samples.
    pub fn sample_rate(&self) -> Option<f64> {
        let n = self.len();
        (n >= 2).then(|| (n - 1) as f64 / (self.timestamps[n - 1] - self.timestamps[0]))
    }
}

/// Noise scales of the zero-velocity model: `R = r_scale I`,
/// `Q = q_scale I`, initial covariance `s0_scale I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherConfig {
    pub r_scale: f64,
    pub q_scale: f64,
    pub s0_scale: f64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self { r_scale: 0.005, q_scale: 0.00015, s0_scale: 0.005 }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<(), SmoothingError> {
        for (name, value) in
            [("r_scale", self.r_scale), ("q_scale", self.q_scale), ("s0_scale", self.s0_scale)]
        {
            if !(value.is_finite() && value > 0.0) {
                return Err(SmoothingError::InvalidConfig { name, value });
            }
        }
        Ok(())
    }
}

/// Output of the forward pass. Row `t` of each state table holds all
/// channels; the variances are shared by every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    /// `p(t|t)`
    pub filtered: Vec<Vec<f64>>,
    /// `p(t|t-1)`; row 0 repeats the initial state.
    pub predicted: Vec<Vec<f64>>,
    /// `S(t|t)`
    pub filtered_var: Vec<f64>,
    /// `S(t|t-1)`; entry 0 repeats the initial covariance.
    pub predicted_var: Vec<f64>,
}

/// Smoothed states `p(t|T)` with their shared variances `S(t|T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPass {
    pub smoothed: Vec<Vec<f64>>,
    pub smoothed_var: Vec<f64>,
}

fn check_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<usize, SmoothingError> {
    let first = rows.first().ok_or(SmoothingError::Empty)?.as_ref().len();
    for (row, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != first {
            return Err(SmoothingError::Ragged { row, found: r.len(), expected: first });
        }
        if !r.iter().all(|v| v.is_finite()) {
            return Err(SmoothingError::NonFinite { row });
        }
    }
    Ok(first)
}

/// Forward Kalman filter. The state starts at the first measurement with
/// covariance `s0_scale I`; each later sample is predicted with the
/// identity transition and then corrected.
pub fn kalman_forward<R: AsRef<[f64]>>(
    rows: &[R],
    cfg: &SmootherConfig,
) -> Result<ForwardPass, SmoothingError> {
    cfg.validate()?;
    check_rows(rows)?;
    let n = rows.len();
    let mut filtered = Vec::with_capacity(n);
    let mut predicted = Vec::with_capacity(n);
    let mut filtered_var = Vec::with_capacity(n);
    let mut predicted_var = Vec::with_capacity(n);

    let mut state = rows[0].as_ref().to_vec();
    let mut var = cfg.s0_scale;
    predicted.push(state.clone());
    predicted_var.push(var);
    filtered.push(state.clone());
    filtered_var.push(var);

    for row in &rows[1..] {
        let prior_var = var + cfg.q_scale;
        let gain = prior_var / (prior_var + cfg.r_scale);
        var = (1.0 - gain) * prior_var;
        predicted.push(state.clone());
        predicted_var.push(prior_var);
        for (x, z) in state.iter_mut().zip(row.as_ref()) {
            *x += gain * (z - *x);
        }
        filtered.push(state.clone());
        filtered_var.push(var);
    }
    Ok(ForwardPass { filtered, predicted, filtered_var, predicted_var })
}

/// Backward pass over the whole horizon. The last smoothed state equals
/// the last filtered state.
pub fn rts_backward(fwd: &ForwardPass) -> BackwardPass {
    let n = fwd.filtered.len();
    let mut smoothed = fwd.filtered.clone();
    let mut smoothed_var = fwd.filtered_var.clone();
    for t in (1..n).rev() {
        let gain = fwd.filtered_var[t - 1] / fwd.predicted_var[t];
        smoothed_var[t - 1] = fwd.filtered_var[t - 1]
            + gain * gain * (smoothed_var[t] - fwd.predicted_var[t]);
        let (head, tail) = smoothed.split_at_mut(t);
        for ((x, next), pred) in head[t - 1].iter_mut().zip(&tail[0]).zip(&fwd.predicted[t]) {
            *x += gain * (next - pred);
        }
    }
    BackwardPass { smoothed, smoothed_var }
}

/// Forward filter followed by the backward pass.
pub fn smooth_rows<R: AsRef<[f64]>>(
    rows: &[R],
    cfg: &SmootherConfig,
) -> Result<Vec<Vec<f64>>, SmoothingError> {
    Ok(rts_backward(&kalman_forward(rows, cfg)?).smoothed)
}

/// Same recursion as [`smooth_rows`] evaluated with dense matrices
/// `Phi = I`, `R = r_scale I`, `Q = q_scale I`. Every covariance update is
/// symmetrized and checked for positive definiteness.
pub fn smooth_rows_full_matrix<R: AsRef<[f64]>>(
    rows: &[R],
    cfg: &SmootherConfig,
) -> Result<Vec<Vec<f64>>, SmoothingError> {
    cfg.validate()?;
    let dim = check_rows(rows)?;
    let n = rows.len();
    let eye = DMatrix::<f64>::identity(dim, dim);
    let phi = eye.clone();
    let q = &eye * cfg.q_scale;
    let r = &eye * cfg.r_scale;

    let spd = |m: DMatrix<f64>, step: usize| -> Result<DMatrix<f64>, SmoothingError> {
        let sym = (&m + m.transpose()) * 0.5;
        if sym.clone().cholesky().is_none() {
            return Err(SmoothingError::NotPositiveDefinite { step });
        }
        Ok(sym)
    };
    let invert = |m: &DMatrix<f64>, step: usize| {
        m.clone().try_inverse().ok_or(SmoothingError::NotPositiveDefinite { step })
    };

    let measurement = |t: usize| nalgebra::DVector::from_column_slice(rows[t].as_ref());
    let mut x_f = vec![measurement(0)];
    let mut x_p = vec![measurement(0)];
    let mut s_f = vec![&eye * cfg.s0_scale];
    let mut s_p = vec![&eye * cfg.s0_scale];
    for t in 1..n {
        let xp = &phi * &x_f[t - 1];
        let sp = spd(&phi * &s_f[t - 1] * phi.transpose() + &q, t)?;
        let k = &sp * invert(&(&sp + &r), t)?;
        let sf = spd((&eye - &k) * &sp, t)?;
        let xf = &xp + &k * (measurement(t) - &xp);
        x_p.push(xp);
        s_p.push(sp);
        x_f.push(xf);
        s_f.push(sf);
    }

    let mut x_s = x_f.clone();
    let mut s_s = s_f.clone();
    for t in (1..n).rev() {
        let l = &s_f[t - 1] * phi.transpose() * invert(&s_p[t], t)?;
        s_s[t - 1] = spd(&s_f[t - 1] + &l * (&s_s[t] - &s_p[t]) * l.transpose(), t - 1)?;
        x_s[t - 1] = &x_f[t - 1] + &l * (&x_s[t] - &x_p[t]);
    }
    Ok(x_s.into_iter().map(|v| v.iter().copied().collect()).collect())
}

/// Recording whose impedance and pressure channels hold `p(t|T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedRecording(TaxelRecording);

impl SmoothedRecording {
    pub fn recording(&self) -> &TaxelRecording {
        &self.0
    }

    pub fn into_recording(self) -> TaxelRecording {
        self.0
    }
}

impl std::ops::Deref for SmoothedRecording {
    type Target = TaxelRecording;

    fn deref(&self) -> &TaxelRecording {
        &self.0
    }
}

/// Smooths the 24 impedance channels together and the pressure channel on
/// its own, both with `cfg`.
pub fn smooth(rec: &TaxelRecording, cfg: &SmootherConfig) -> Result<SmoothedRecording, SmoothingError> {
    let impedances = smooth_rows(rec.impedances(), cfg)?
        .into_iter()
        .map(|row| row.try_into().expect("channel count preserved"))
        .collect();
    let pressure_rows: Vec<[f64; 1]> = rec.pressure().iter().map(|&p| [p]).collect();
    let pressure = smooth_rows(&pressure_rows, cfg)?.into_iter().map(|row| row[0]).collect();
    Ok(SmoothedRecording(TaxelRecording {
        timestamps: rec.timestamps.clone(),
        impedances,
        pressure,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(values: &[f64]) -> Vec<[f64; 1]> {
        values.iter().map(|&v| [v]).collect()
    }

    #[test]
    fn constant_input_is_a_fixed_point() {
        let rows = scalar(&[3.25; 40]);
        let cfg = SmootherConfig::default();
        let fwd = kalman_forward(&rows, &cfg).unwrap();
        assert!(fwd.filtered.iter().all(|r| r[0] == 3.25));
        let smoothed = rts_backward(&fwd).smoothed;
        assert!(smoothed.iter().all(|r| r[0] == 3.25));
    }

    #[test]
    fn tiny_measurement_noise_tracks_measurements() {
        let values: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin() * 5.0).collect();
        let cfg = SmootherConfig { r_scale: 1e-12, ..Default::default() };
        let fwd = kalman_forward(&scalar(&values), &cfg).unwrap();
        for (f, v) in fwd.filtered.iter().zip(&values) {
            assert!((f[0] - v).abs() < 1e-6);
        }
    }

    #[test]
    fn three_step_recursion_by_hand() {
        let (r, q, s0) = (0.005, 0.00015, 0.005);
        let z = [1.0, 2.0, 0.5];
        // hand-unrolled filter
        let x0 = z[0];
        let sp1 = s0 + q;
        let k1 = sp1 / (sp1 + r);
        let x1 = x0 + k1 * (z[1] - x0);
        let s1 = (1.0 - k1) * sp1;
        let sp2 = s1 + q;
        let k2 = sp2 / (sp2 + r);
        let x2 = x1 + k2 * (z[2] - x1);
        let s2 = (1.0 - k2) * sp2;
        // hand-unrolled smoother
        let xs2 = x2;
        let l2 = s1 / sp2;
        let xs1 = x1 + l2 * (xs2 - x1);
        let l1 = s0 / sp1;
        let xs0 = x0 + l1 * (xs1 - x0);

        let cfg = SmootherConfig::default();
        let fwd = kalman_forward(&scalar(&z), &cfg).unwrap();
        let got: Vec<f64> = fwd.filtered.iter().map(|r| r[0]).collect();
        for (g, e) in got.iter().zip([x0, x1, x2]) {
            assert!((g - e).abs() < 1e-15);
        }
        assert!((fwd.filtered_var[2] - s2).abs() < 1e-18);
        let back = rts_backward(&fwd).smoothed;
        for (g, e) in back.iter().zip([xs0, xs1, xs2]) {
            assert!((g[0] - e).abs() < 1e-15);
        }
        // frozen values of the same recursion
        assert!((x1 - 1.507_389_162_561_576_5).abs() < 1e-12, "{x1}");
    }

    #[test]
    fn single_sample() {
        let rows = scalar(&[7.0]);
        let cfg = SmootherConfig::default();
        let fwd = kalman_forward(&rows, &cfg).unwrap();
        assert_eq!(fwd.filtered, vec![vec![7.0]]);
        assert_eq!(rts_backward(&fwd).smoothed, vec![vec![7.0]]);
    }

    #[test]
    fn rejects_bad_input() {
        let cfg = SmootherConfig::default();
        let empty: Vec<[f64; 1]> = vec![];
        assert!(matches!(kalman_forward(&empty, &cfg), Err(SmoothingError::Empty)));
        let ragged = vec![vec![1.0, 2.0], vec![1.0]];
        assert!(matches!(kalman_forward(&ragged, &cfg), Err(SmoothingError::Ragged { row: 1, .. })));
        let bad = SmootherConfig { q_scale: 0.0, ..cfg };
        assert!(matches!(
            kalman_forward(&scalar(&[1.0]), &bad),
            Err(SmoothingError::InvalidConfig { name: "q_scale", .. })
        ));
        assert!(TaxelRecording::new(vec![0.0, 0.0], vec![[0.0; 24]; 2], vec![0.0; 2]).is_err());
        assert!(TaxelRecording::new(vec![0.0], vec![[0.0; 24]; 2], vec![0.0; 2]).is_err());
        assert!(TaxelRecording::new(vec![0.0], vec![[f64::NAN; 24]], vec![0.0]).is_err());
    }

    #[test]
    fn variances_stay_positive_and_shrink_backward() {
        let values: Vec<f64> = (0..25).map(|i| i as f64).collect();
        let fwd = kalman_forward(&scalar(&values), &SmootherConfig::default()).unwrap();
        let back = rts_backward(&fwd);
        for (s, f) in back.smoothed_var.iter().zip(&fwd.filtered_var) {
            assert!(*s > 0.0 && *s <= *f + 1e-18);
        }
    }

    #[test]
    fn full_matrix_path_agrees_on_small_input() {
        let rows: Vec<Vec<f64>> =
            (0..12).map(|t| (0..3).map(|c| ((t * 7 + c * 3) % 5) as f64).collect()).collect();
        let cfg = SmootherConfig::default();
        let fast = smooth_rows(&rows, &cfg).unwrap();
        let full = smooth_rows_full_matrix(&rows, &cfg).unwrap();
        for (a, b) in fast.iter().flatten().zip(full.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
