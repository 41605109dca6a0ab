//! Fixed-step simulation of a plant and its observer in lockstep.
//!
//! One fourth-order Runge-Kutta integrator advances the stacked state
//! `(x, y, xi)`: the plant sees its true measured state, the observer sees
//! the measurement corrupted by zero-order-hold uniform noise. The estimate
//! `xhat` is pulled back from `xi` after every step, warm-started at the
//! previous estimate so polynomial left inverses stay cheap.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{Domain, InputSignal, SystemModel};
use crate::observer::{Observer, ObserverError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("time step and horizon must be positive (dt {dt}, t_final {t_final})")]
    BadTimeGrid { dt: f64, t_final: f64 },
    #[error("state became non-finite at t = {0}")]
    NonFinite(f64),
    #[error(transparent)]
    Observer(#[from] ObserverError),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub t_final: f64,
    pub dt: f64,
    /// Uniform measurement noise in `[-amplitude, amplitude]` per channel.
    pub noise_amplitude: f64,
    /// Noise refresh period (zero-order hold between refreshes).
    pub noise_dt: f64,
    pub seed: u64,
    pub input: InputSignal,
    /// Stop early when the plant state `(x, y)` leaves this region.
    pub domain: Option<Domain>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            t_final: 10.0,
            dt: 1e-3,
            noise_amplitude: 0.0,
            noise_dt: 1e-3,
            seed: 0,
            input: InputSignal::Zero,
            domain: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub y_noisy: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
    pub xhat: Vec<Vec<f64>>,
    pub err_norm: Vec<f64>,
    /// True when the run stopped early because the plant left the domain.
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Root-mean-square estimation error over `t >= t_from`.
    pub fn rms_error_from(&self, t_from: f64) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (t, e) in self.times.iter().zip(&self.err_norm) {
            if *t >= t_from {
                sum += e * e;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            (sum / n as f64).sqrt()
        }
    }

    /// First time the error drops below `threshold` and stays there.
    pub fn settling_time(&self, threshold: f64) -> Option<f64> {
        let mut candidate = None;
        for (t, e) in self.times.iter().zip(&self.err_norm) {
            if *e < threshold {
                if candidate.is_none() {
                    candidate = Some(*t);
                }
            } else {
                candidate = None;
            }
        }
        candidate
    }

    /// Comma-separated dump with the column layout
    /// `t,x1..,y1..,y_noisy1..,u1..,xi1..,xhat1..,err_norm`.
    /// Empty channel groups are omitted.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        let group = |name: &str, n: usize| -> Vec<String> {
            (1..=n).map(|k| format!("{name}{k}")).collect()
        };
        let mut header = vec!["t".to_string()];
        let widths = [
            ("x", self.x.first().map_or(0, Vec::len)),
            ("y", self.y.first().map_or(0, Vec::len)),
            ("y_noisy", self.y_noisy.first().map_or(0, Vec::len)),
            ("u", self.u.first().map_or(0, Vec::len)),
            ("xi", self.xi.first().map_or(0, Vec::len)),
            ("xhat", self.xhat.first().map_or(0, Vec::len)),
        ];
        for (name, n) in widths {
            header.extend(group(name, n));
        }
        if !self.err_norm.is_empty() {
            header.push("err_norm".to_string());
        }
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![format!("{}", self.times[k])];
            for series in [&self.x, &self.y, &self.y_noisy, &self.u, &self.xi, &self.xhat] {
                if let Some(vals) = series.get(k) {
                    row.extend(vals.iter().map(|v| format!("{v}")));
                }
            }
            if let Some(e) = self.err_norm.get(k) {
                row.push(format!("{e}"));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Fit `values ~ c * exp(rate * t)` by least squares on the logarithm.
/// Returns `(rate, r_squared)`; `None` when fewer than two positive
/// samples are available.
pub fn fit_rate(times: &[f64], values: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (st, sv): (f64, f64) = pts.iter().fold((0.0, 0.0), |(a, b), (t, v)| (a + t, b + v));
    let (mt, mv) = (st / n, sv / n);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (t, v) in &pts {
        sxx += (t - mt) * (t - mt);
        sxy += (t - mt) * (v - mv);
        syy += (v - mv) * (v - mv);
    }
    if sxx == 0.0 {
        return None;
    }
    let rate = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some((rate, r2))
}

/// Integrate plant (and observer, when given) over the configured horizon.
pub fn simulate(
    model: &SystemModel,
    observer: Option<&Observer>,
    x0: &[f64],
    y0: &[f64],
    xi0: &[f64],
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    if !(cfg.dt > 0.0 && cfg.t_final > 0.0) {
        return Err(SimError::BadTimeGrid { dt: cfg.dt, t_final: cfg.t_final });
    }
    let steps = (cfg.t_final / cfg.dt).round() as usize;
    let (nx, ny, nu) = (model.n_x(), model.n_y(), model.n_u());

    // pre-sampled ZOH noise per refresh interval
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_noise = ((cfg.t_final / cfg.noise_dt).ceil() as usize).max(1) + 1;
    let noise: Vec<Vec<f64>> = (0..n_noise)
        .map(|_| {
            (0..ny)
                .map(|_| {
                    if cfg.noise_amplitude > 0.0 {
                        rng.gen_range(-cfg.noise_amplitude..=cfg.noise_amplitude)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let noise_at = |t: f64| -> &[f64] {
        let idx = ((t / cfg.noise_dt + 1e-9) as usize).min(n_noise - 1);
        &noise[idx]
    };

    let mut x = x0.to_vec();
    let mut y = y0.to_vec();
    let mut xi = xi0.to_vec();
    let mut xhat_guess = vec![0.0; nx];

    let mut traj = Trajectory::default();
    let mut record = |t: f64,
                      x: &[f64],
                      y: &[f64],
                      xi: &[f64],
                      xhat_guess: &mut Vec<f64>|
     -> Result<(), SimError> {
        traj.times.push(t);
        traj.x.push(x.to_vec());
        traj.y.push(y.to_vec());
        let yn: Vec<f64> = y.iter().zip(noise_at(t)).map(|(a, b)| a + b).collect();
        traj.u.push(cfg.input.eval(t, nu));
        if let Some(obs) = observer {
            let xhat = obs.estimate(xi, &yn, xhat_guess)?;
            let err = xhat
                .iter()
                .zip(x.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            *xhat_guess = xhat.clone();
            traj.xi.push(xi.to_vec());
            traj.xhat.push(xhat);
            traj.err_norm.push(err);
        }
        traj.y_noisy.push(yn);
        Ok(())
    };

    record(0.0, &x, &y, &xi, &mut xhat_guess)?;
    'outer: for k in 0..steps {
        let t = k as f64 * cfg.dt;
        // RK4 on the stacked state; the observer always reads noisy y
        let deriv = |t_s: f64, xs: &[f64], ys: &[f64], xis: &[f64]| {
            let u = cfg.input.eval(t_s, nu);
            let (dx, dy) = model.f(xs, ys, &u);
            let dxi = if let Some(obs) = observer {
                let yn: Vec<f64> = ys.iter().zip(noise_at(t_s)).map(|(a, b)| a + b).collect();
                obs.rhs(xis, &yn, &u)
            } else {
                Vec::new()
            };
            (dx, dy, dxi)
        };
        let shift = |base: &[f64], d: &[f64], h: f64| -> Vec<f64> {
            base.iter().zip(d).map(|(b, v)| b + h * v).collect()
        };
        let (k1x, k1y, k1xi) = deriv(t, &x, &y, &xi);
        let h2 = cfg.dt / 2.0;
        let (k2x, k2y, k2xi) = deriv(t + h2, &shift(&x, &k1x, h2), &shift(&y, &k1y, h2), &shift(&xi, &k1xi, h2));
        let (k3x, k3y, k3xi) = deriv(t + h2, &shift(&x, &k2x, h2), &shift(&y, &k2y, h2), &shift(&xi, &k2xi, h2));
        let (k4x, k4y, k4xi) = deriv(
            t + cfg.dt,
            &shift(&x, &k3x, cfg.dt),
            &shift(&y, &k3y, cfg.dt),
            &shift(&xi, &k3xi, cfg.dt),
        );
        let combine = |s: &mut [f64], k1: &[f64], k2: &[f64], k3: &[f64], k4: &[f64]| {
            for i in 0..s.len() {
                s[i] += cfg.dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        };
        combine(&mut x, &k1x, &k2x, &k3x, &k4x);
        combine(&mut y, &k1y, &k2y, &k3y, &k4y);
        combine(&mut xi, &k1xi, &k2xi, &k3xi, &k4xi);
        let t_next = (k + 1) as f64 * cfg.dt;

        for v in x.iter().chain(y.iter()).chain(xi.iter()) {
            if !v.is_finite() {
                traj.truncated = true;
                break 'outer;
            }
        }
        if let Some(domain) = &cfg.domain {
            let mut state = x.clone();
            state.extend_from_slice(&y);
            if !domain.contains(&state) {
                traj.truncated = true;
                break;
            }
        }
        record(t_next, &x, &y, &xi, &mut xhat_guess)?;
    }
    Ok(traj)
}
