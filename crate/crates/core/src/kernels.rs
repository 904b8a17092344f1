//! Covariance functions: the periodic kernel, the phase-embedded envelope
//! kernel, the squared-exponential comparison kernel, their weighted
//! product, Gram-matrix assembly and analytic log-parameter derivatives.
//!
//! All hyperparameters are stored as unconstrained log-values so the
//! optimizers can move freely while the natural-space values stay
//! positive by construction.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Stage-1 hyperparameters: periodic kernel width, signal variance,
/// observation noise and the (fixed, not optimized) period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicHyperParams {
    log_length_scale: f64,
    log_signal_variance: f64,
    log_noise_variance: f64,
    period: f64,
}

impl PeriodicHyperParams {
    pub fn new(
        length_scale: f64,
        signal_variance: f64,
        noise_variance: f64,
        period: f64,
    ) -> Result<Self> {
        if !(length_scale > 0.0 && length_scale.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "length_scale must be positive, got {length_scale}"
            )));
        }
        if !(signal_variance > 0.0 && signal_variance.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "signal_variance must be positive, got {signal_variance}"
            )));
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "noise_variance must be nonnegative, got {noise_variance}"
            )));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "period must be positive, got {period}"
            )));
        }
        Ok(Self {
            log_length_scale: length_scale.ln(),
            log_signal_variance: signal_variance.ln(),
            log_noise_variance: noise_variance.ln(),
            period,
        })
    }

    pub fn length_scale(&self) -> f64 {
        self.log_length_scale.exp()
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn noise_variance(&self) -> f64 {
        self.log_noise_variance.exp()
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Optimizer view: `[log l, log sigma_f^2, log sigma_theta^2]`.
    pub fn log_params(&self) -> [f64; 3] {
        [
            self.log_length_scale,
            self.log_signal_variance,
            self.log_noise_variance,
        ]
    }

    pub fn from_log_params(log: [f64; 3], period: f64) -> Self {
        Self {
            log_length_scale: log[0],
            log_signal_variance: log[1],
            log_noise_variance: log[2],
            period,
        }
    }

    /// Same kernel with the noise variance replaced.
    pub fn with_noise_variance(mut self, noise_variance: f64) -> Self {
        self.log_noise_variance = noise_variance.ln();
        self
    }
}

/// Stage-2 hyperparameters: envelope length scale and variance plus the
/// independent output noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeHyperParams {
    log_length_scale: f64,
    log_variance: f64,
    log_output_noise: f64,
}

impl EnvelopeHyperParams {
    pub fn new(envelope_length_scale: f64, envelope_variance: f64, output_noise: f64) -> Result<Self> {
        if !(envelope_length_scale > 0.0 && envelope_length_scale.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "envelope_length_scale must be positive, got {envelope_length_scale}"
            )));
        }
        if !(envelope_variance > 0.0 && envelope_variance.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "envelope_variance must be positive, got {envelope_variance}"
            )));
        }
        if !(output_noise >= 0.0 && output_noise.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "output_noise must be nonnegative, got {output_noise}"
            )));
        }
        Ok(Self {
            log_length_scale: envelope_length_scale.ln(),
            log_variance: envelope_variance.ln(),
            log_output_noise: output_noise.ln(),
        })
    }

    pub fn envelope_length_scale(&self) -> f64 {
        self.log_length_scale.exp()
    }

    pub fn envelope_variance(&self) -> f64 {
        self.log_variance.exp()
    }

    pub fn output_noise(&self) -> f64 {
        self.log_output_noise.exp()
    }

    /// Optimizer view: `[log l_psi, log sigma_gamma^2, log sigma_psi^2]`.
    pub fn log_params(&self) -> [f64; 3] {
        [self.log_length_scale, self.log_variance, self.log_output_noise]
    }

    pub fn from_log_params(log: [f64; 3]) -> Self {
        Self {
            log_length_scale: log[0],
            log_variance: log[1],
            log_output_noise: log[2],
        }
    }
}

/// Periodic covariance `sigma_f^2 exp(-2 sin^2(pi (t-t')/p) / l^2)`.
///
/// The lag is phase-reduced before the sine so that shifting both inputs
/// by whole periods reproduces the same value down to the last bit.
pub fn periodic_kernel(t: f64, t_prime: f64, params: &PeriodicHyperParams) -> f64 {
    let l = params.length_scale();
    let u = (t - t_prime) / params.period();
    let r = u - u.round();
    let s = (PI * r).sin();
    params.signal_variance() * (-2.0 * s * s / (l * l)).exp()
}

/// Closed form of `integral_0^t sin^2(pi tau / p) d tau`.
///
/// Monotone nondecreasing with derivative `sin^2(pi t / p)`, which
/// vanishes at every integer multiple of the period; the envelope built
/// on top of it therefore cannot shift phases.
pub fn phase_embedding(t: f64, period: f64) -> f64 {
    0.5 * t - period / (4.0 * PI) * (2.0 * PI * t / period).sin()
}

/// Envelope covariance `sigma_gamma^2 exp(-(phi(t)-phi(t'))^2 / (2 l_psi^2))`.
pub fn envelope_kernel(t: f64, t_prime: f64, params: &EnvelopeHyperParams, period: f64) -> f64 {
    let l = params.envelope_length_scale();
    let d = phase_embedding(t, period) - phase_embedding(t_prime, period);
    params.envelope_variance() * (-d * d / (2.0 * l * l)).exp()
}

/// Plain squared-exponential covariance, kept for envelope comparisons.
pub fn squared_exp_kernel(t: f64, t_prime: f64, length_scale: f64, variance: f64) -> f64 {
    let d = t - t_prime;
    variance * (-d * d / (2.0 * length_scale * length_scale)).exp()
}

/// Product kernel `g = w * k` with the period taken from the periodic
/// factor.
pub fn weighted_kernel(
    t: f64,
    t_prime: f64,
    theta: &PeriodicHyperParams,
    psi: &EnvelopeHyperParams,
) -> f64 {
    periodic_kernel(t, t_prime, theta) * envelope_kernel(t, t_prime, psi, theta.period())
}

/// Covariance-function selector for Gram assembly and derivatives.
#[derive(Debug, Clone)]
pub enum Kernel {
    Periodic(PeriodicHyperParams),
    Envelope {
        params: EnvelopeHyperParams,
        period: f64,
    },
    Weighted {
        theta: PeriodicHyperParams,
        psi: EnvelopeHyperParams,
    },
    SquaredExp {
        length_scale: f64,
        variance: f64,
    },
}

impl Kernel {
    pub fn eval(&self, t: f64, t_prime: f64) -> f64 {
        match self {
            Kernel::Periodic(theta) => periodic_kernel(t, t_prime, theta),
            Kernel::Envelope { params, period } => envelope_kernel(t, t_prime, params, *period),
            Kernel::Weighted { theta, psi } => weighted_kernel(t, t_prime, theta, psi),
            Kernel::SquaredExp {
                length_scale,
                variance,
            } => squared_exp_kernel(t, t_prime, *length_scale, *variance),
        }
    }

    /// Names of the log-parameters [`kernel_grads`] differentiates
    /// against, in output order. Diagonal noise terms are handled by the
    /// training module, not here: the Gram matrix is noise-free.
    pub fn grad_names(&self) -> &'static [&'static str] {
        match self {
            Kernel::Periodic(_) => &["log_length_scale", "log_signal_variance"],
            Kernel::Envelope { .. } => &["log_envelope_length_scale", "log_envelope_variance"],
            Kernel::Weighted { .. } => &[
                "log_length_scale",
                "log_signal_variance",
                "log_envelope_length_scale",
                "log_envelope_variance",
            ],
            Kernel::SquaredExp { .. } => &["log_length_scale", "log_variance"],
        }
    }

    /// Pointwise derivatives of `eval(t, t')` with respect to each
    /// log-parameter, in [`grad_names`](Self::grad_names) order.
    fn eval_grads(&self, t: f64, t_prime: f64, out: &mut Vec<f64>) {
        out.clear();
        match self {
            Kernel::Periodic(theta) => {
                let k = periodic_kernel(t, t_prime, theta);
                let l = theta.length_scale();
                let u = (t - t_prime) / theta.period();
                let r = u - u.round();
                let s = (PI * r).sin();
                out.push(k * 4.0 * s * s / (l * l));
                out.push(k);
            }
            Kernel::Envelope { params, period } => {
                let w = envelope_kernel(t, t_prime, params, *period);
                let l = params.envelope_length_scale();
                let d = phase_embedding(t, *period) - phase_embedding(t_prime, *period);
                out.push(w * d * d / (l * l));
                out.push(w);
            }
            Kernel::Weighted { theta, psi } => {
                let k = periodic_kernel(t, t_prime, theta);
                let w = envelope_kernel(t, t_prime, psi, theta.period());
                let l_k = theta.length_scale();
                let u = (t - t_prime) / theta.period();
                let r = u - u.round();
                let s = (PI * r).sin();
                let l_w = psi.envelope_length_scale();
                let d = phase_embedding(t, theta.period()) - phase_embedding(t_prime, theta.period());
                out.push(w * k * 4.0 * s * s / (l_k * l_k));
                out.push(w * k);
                out.push(k * w * d * d / (l_w * l_w));
                out.push(w * k);
            }
            Kernel::SquaredExp {
                length_scale,
                variance,
            } => {
                let k = squared_exp_kernel(t, t_prime, *length_scale, *variance);
                let d = t - t_prime;
                out.push(k * d * d / (length_scale * length_scale));
                out.push(k);
            }
        }
    }
}

/// Pairwise covariance matrix with entries `kernel(rows[i], cols[j])`.
pub fn gram(kernel: &Kernel, rows: &[f64], cols: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| kernel.eval(rows[i], cols[j]))
}

/// Derivative of the square Gram matrix on `inputs` with respect to each
/// log-parameter of the kernel, in [`Kernel::grad_names`] order.
pub fn kernel_grads(kernel: &Kernel, inputs: &[f64]) -> Vec<DMatrix<f64>> {
    let n = inputs.len();
    let n_params = kernel.grad_names().len();
    let mut grads = vec![DMatrix::zeros(n, n); n_params];
    let mut scratch = Vec::with_capacity(n_params);
    for i in 0..n {
        for j in 0..n {
            kernel.eval_grads(inputs[i], inputs[j], &mut scratch);
            for (p, &v) in scratch.iter().enumerate() {
                grads[p][(i, j)] = v;
            }
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, min_eigenvalue};
    use approx::assert_relative_eq;

    fn theta(l: f64, sf2: f64, sn2: f64) -> PeriodicHyperParams {
        PeriodicHyperParams::new(l, sf2, sn2, 1.0).unwrap()
    }

    fn psi(l: f64, sg2: f64) -> EnvelopeHyperParams {
        EnvelopeHyperParams::new(l, sg2, 0.0).unwrap()
    }

    #[test]
    fn log_storage_round_trips() {
        let p = PeriodicHyperParams::new(0.7, 1.5, 0.3, 2.0).unwrap();
        assert_relative_eq!(p.length_scale(), 0.7, max_relative = 1e-14);
        assert_relative_eq!(p.signal_variance(), 1.5, max_relative = 1e-14);
        assert_relative_eq!(p.noise_variance(), 0.3, max_relative = 1e-14);
        // Zero noise survives the log round trip via -inf.
        let q = theta(1.0, 1.0, 0.0);
        assert_eq!(q.noise_variance(), 0.0);
    }

    #[test]
    fn params_reject_nonpositive_values() {
        assert!(PeriodicHyperParams::new(0.0, 1.0, 0.0, 1.0).is_err());
        assert!(PeriodicHyperParams::new(1.0, -1.0, 0.0, 1.0).is_err());
        assert!(PeriodicHyperParams::new(1.0, 1.0, -0.1, 1.0).is_err());
        assert!(PeriodicHyperParams::new(1.0, 1.0, 0.0, 0.0).is_err());
        assert!(EnvelopeHyperParams::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn periodic_kernel_zero_lag_and_full_period() {
        let p = theta(0.8, 2.5, 0.0);
        assert_eq!(periodic_kernel(3.7, 3.7, &p), 2.5);
        assert_relative_eq!(periodic_kernel(0.0, 1.0, &p), 2.5, max_relative = 1e-12);
    }

    #[test]
    fn periodic_kernel_half_period_value() {
        let p = theta(1.0, 1.0, 0.0);
        assert_relative_eq!(
            periodic_kernel(0.0, 0.5, &p),
            (-2.0_f64).exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn periodic_kernel_shift_invariance_is_exact() {
        let p = theta(0.6, 1.3, 0.0);
        // Dyadic times keep t + p exactly representable.
        let t = 0.40625;
        let t_prime = 0.1875;
        assert_eq!(
            periodic_kernel(t, t_prime, &p),
            periodic_kernel(t + 1.0, t_prime + 1.0, &p)
        );
        assert_eq!(
            periodic_kernel(t, t_prime, &p),
            periodic_kernel(t + 17.0, t_prime + 17.0, &p)
        );
    }

    #[test]
    fn phase_embedding_matches_quadrature() {
        // Simpson's rule oracle for the integral of sin^2(pi tau / p).
        fn quad(t: f64, p: f64) -> f64 {
            let n = 20_000;
            let h = t / n as f64;
            let f = |tau: f64| (PI * tau / p).sin().powi(2);
            let mut acc = f(0.0) + f(t);
            for k in 1..n {
                acc += f(k as f64 * h) * if k % 2 == 0 { 2.0 } else { 4.0 };
            }
            acc * h / 3.0
        }
        assert_eq!(phase_embedding(0.0, 1.0), 0.0);
        assert_relative_eq!(phase_embedding(1.0, 1.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(phase_embedding(0.5, 1.0), 0.25, epsilon = 1e-12);
        for &t in &[-5.0, -1.3, 0.25, 0.5, 1.0, 2.75, 5.0] {
            assert_relative_eq!(phase_embedding(t, 1.0), quad(t, 1.0), epsilon = 1e-10);
            assert_relative_eq!(
                phase_embedding(t * 2.0, 2.0),
                quad(t * 2.0, 2.0),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn envelope_kernel_values() {
        let e = psi(1.0, 1.0);
        assert_eq!(envelope_kernel(0.3, 0.3, &e, 1.0), 1.0);
        // phi(1) - phi(0) = 0.5 at p = 1.
        assert_relative_eq!(
            envelope_kernel(0.0, 1.0, &e, 1.0),
            (-0.125_f64).exp(),
            max_relative = 1e-12
        );
        // Near-infinite length scale flattens the envelope to its variance.
        let flat = EnvelopeHyperParams::new(1e12, 2.0, 0.0).unwrap();
        assert!((envelope_kernel(0.0, 57.0, &flat, 1.0) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn weighted_kernel_is_product_and_decays_over_periods() {
        let t = theta(0.7, 1.5, 0.0);
        let e = psi(0.8, 2.0);
        let g = weighted_kernel(0.2, 1.9, &t, &e);
        assert_relative_eq!(
            g,
            periodic_kernel(0.2, 1.9, &t) * envelope_kernel(0.2, 1.9, &e, 1.0),
            max_relative = 1e-14
        );
        assert_eq!(weighted_kernel(0.0, 0.0, &t, &e), 1.5 * 2.0);
        let mut last = f64::INFINITY;
        for m in 0..=10 {
            let v = weighted_kernel(0.0, m as f64, &t, &e);
            if m > 0 {
                assert!(v < last);
            }
            last = v;
        }
    }

    #[test]
    fn gram_single_point_and_duplicates() {
        let k = Kernel::Periodic(theta(1.0, 2.0, 0.0));
        let g = gram(&k, &[0.3], &[0.3]);
        assert_eq!(g.nrows(), 1);
        assert_eq!(g[(0, 0)], 2.0);
        let dup = gram(&k, &[0.3, 0.3], &[0.3, 0.3]);
        assert_eq!(dup[(0, 0)], dup[(0, 1)]);
        assert_eq!(dup[(1, 0)], dup[(1, 1)]);
    }

    #[test]
    fn gram_on_period_grid_is_circulant() {
        let n = 8;
        let grid: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
        let k = Kernel::Periodic(theta(0.9, 1.0, 0.0));
        let g = gram(&k, &grid, &grid);
        for i in 1..n {
            for j in 0..n {
                assert!((g[(i, j)] - g[(0, (j + n - i) % n)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grams_are_psd() {
        let grid: Vec<f64> = (0..40).map(|i| i as f64 * 0.13).collect();
        let t = theta(0.7, 1.5, 0.0);
        let e = psi(0.8, 2.0);
        for k in [
            Kernel::Periodic(t),
            Kernel::Envelope {
                params: e,
                period: 1.0,
            },
            Kernel::Weighted { theta: t, psi: e },
        ] {
            let g = gram(&k, &grid, &grid);
            assert!(min_eigenvalue(&g).unwrap() >= -1e-8);
        }
    }

    #[test]
    fn kernel_grads_match_finite_differences() {
        let grid = [0.1, 0.77, 1.45];
        let kernels: Vec<(Kernel, usize)> = vec![
            (Kernel::Periodic(theta(0.7, 1.5, 0.0)), 2),
            (
                Kernel::Envelope {
                    params: psi(0.8, 2.0),
                    period: 1.0,
                },
                2,
            ),
            (
                Kernel::Weighted {
                    theta: theta(0.7, 1.5, 0.0),
                    psi: psi(0.8, 2.0),
                },
                4,
            ),
            (
                Kernel::SquaredExp {
                    length_scale: 0.5,
                    variance: 1.2,
                },
                2,
            ),
        ];
        for (kernel, n_params) in kernels {
            let grads = kernel_grads(&kernel, &grid);
            assert_eq!(grads.len(), n_params);
            for (p, grad) in grads.iter().enumerate() {
                for i in 0..grid.len() {
                    for j in 0..grid.len() {
                        let fd = finite_diff_grad::<_, ()>(
                            |x| {
                                let shifted = shift_kernel(&kernel, p, x[0]);
                                Ok(shifted.eval(grid[i], grid[j]))
                            },
                            &[0.0],
                            1e-6,
                        )
                        .unwrap()[0];
                        let scale = fd.abs().max(grad[(i, j)].abs()).max(1e-8);
                        assert!(
                            (grad[(i, j)] - fd).abs() <= 1e-6 * scale.max(1.0),
                            "param {p} entry ({i},{j}): analytic {} vs fd {fd}",
                            grad[(i, j)]
                        );
                    }
                }
            }
        }
    }

    // Rebuilds a kernel with log-parameter `p` shifted by `delta`.
    fn shift_kernel(kernel: &Kernel, p: usize, delta: f64) -> Kernel {
        match kernel {
            Kernel::Periodic(t) => {
                let mut log = t.log_params();
                log[p] += delta;
                Kernel::Periodic(PeriodicHyperParams::from_log_params(log, t.period()))
            }
            Kernel::Envelope { params, period } => {
                let mut log = params.log_params();
                log[p] += delta;
                Kernel::Envelope {
                    params: EnvelopeHyperParams::from_log_params(log),
                    period: *period,
                }
            }
            Kernel::Weighted { theta, psi } => {
                if p < 2 {
                    let mut log = theta.log_params();
                    log[p] += delta;
                    Kernel::Weighted {
                        theta: PeriodicHyperParams::from_log_params(log, theta.period()),
                        psi: *psi,
                    }
                } else {
                    let mut log = psi.log_params();
                    log[p - 2] += delta;
                    Kernel::Weighted {
                        theta: *theta,
                        psi: EnvelopeHyperParams::from_log_params(log),
                    }
                }
            }
            Kernel::SquaredExp {
                length_scale,
                variance,
            } => {
                let mut log = [length_scale.ln(), variance.ln()];
                log[p] += delta;
                Kernel::SquaredExp {
                    length_scale: log[0].exp(),
                    variance: log[1].exp(),
                }
            }
        }
    }

    #[test]
    fn grad_diagonal_behavior() {
        let t = theta(0.7, 1.5, 0.0);
        let grads = kernel_grads(&Kernel::Periodic(t), &[0.0, 0.4, 1.1]);
        let k = gram(&Kernel::Periodic(t), &[0.0, 0.4, 1.1], &[0.0, 0.4, 1.1]);
        // d/d log sigma_f^2 is the Gram itself; the zero-lag diagonal is
        // independent of the length scale.
        assert_relative_eq!(grads[1], k, max_relative = 1e-14);
        for i in 0..3 {
            assert_eq!(grads[0][(i, i)], 0.0);
        }
    }
}
