//! Dormand–Prince 5(4) with PI step-size control.

use crate::error::{CldError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rk45Options {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub h0: Option<f64>,
}

impl Default for Rk45Options {
    fn default() -> Self {
        Self {
            rtol: 1e-5,
            atol: 1e-5,
            max_steps: 100_000,
            h0: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rk45Output {
    pub y: Vec<f64>,
    /// Number of right-hand-side evaluations.
    pub nfe: usize,
    pub accepted: usize,
    pub rejected: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
// fifth-order weights minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFE: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

fn err_norm(y: &[f64], y_new: &[f64], e: &[f64], o: &Rk45Options) -> f64 {
    let s: f64 = y
        .iter()
        .zip(y_new)
        .zip(e)
        .map(|((a, b), e)| {
            let sc = o.atol + o.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / y.len().max(1) as f64).sqrt()
}

/// Integrate `y' = f(t, y)` from `t0` to `t1` (either direction).
pub fn rk45<F>(mut f: F, y0: &[f64], t0: f64, t1: f64, o: &Rk45Options) -> Result<Rk45Output>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y0.len();
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let mut y = y0.to_vec();
    if span == 0.0 {
        return Ok(Rk45Output { y, nfe: 0, accepted: 0, rejected: 0 });
    }
    let mut nfe = 0usize;
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut err = vec![0.0; n];

    let mut t = t0;
    f(t, &y, &mut k1)?;
    nfe += 1;

    let mut h = match o.h0 {
        Some(h) => h.abs().min(span),
        None => {
            let sc: Vec<f64> = y.iter().map(|a| o.atol + o.rtol * a.abs()).collect();
            let d0 = (y.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt();
            let d1 = (k1.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt();
            let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
            h.min(span)
        }
    };

    let mut fac_old = 1e-4f64;
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut last_rejected = false;

    loop {
        let remaining = (t1 - t) * dir;
        if remaining <= 1e-14 * span.max(t.abs()) {
            break;
        }
        if accepted + rejected >= o.max_steps {
            return Err(CldError::Ode(format!("max_steps {} exceeded at t = {t}", o.max_steps)));
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(CldError::Ode(format!("step size underflow at t = {t}")));
        }
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let hs = h * dir;

        macro_rules! stage {
            ($dst:expr, $c:expr, $( ($a:expr, $k:expr) ),+) => {{
                for i in 0..n {
                    tmp[i] = y[i] + hs * (0.0 $( + $a * $k[i] )+);
                }
                f(t + $c * hs, &tmp, &mut $dst)?;
                nfe += 1;
            }};
        }
        stage!(k2, C2, (A21, k1));
        stage!(k3, C3, (A31, k1), (A32, k2));
        stage!(k4, C4, (A41, k1), (A42, k2), (A43, k3));
        stage!(k5, C5, (A51, k1), (A52, k2), (A53, k3), (A54, k4));
        stage!(k6, 1.0, (A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5));
        for i in 0..n {
            y_new[i] = y[i] + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        let t_new = if last { t1 } else { t + hs };
        f(t_new, &y_new, &mut k7)?;
        nfe += 1;
        for i in 0..n {
            err[i] = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let en = err_norm(&y, &y_new, &err, o);
        if !en.is_finite() {
            h *= FAC_MIN;
            rejected += 1;
            last_rejected = true;
            continue;
        }
        let fac11 = en.powf(EXPO1);
        if en <= 1.0 {
            let fac = (fac11 / fac_old.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            fac_old = en.max(1e-4);
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            accepted += 1;
            last_rejected = false;
            h = h_new;
            if last {
                break;
            }
        } else {
            h /= (fac11 / SAFE).min(1.0 / FAC_MIN);
            rejected += 1;
            last_rejected = true;
        }
    }
    Ok(Rk45Output { y, nfe, accepted, rejected })
}
