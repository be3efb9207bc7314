//! Adaptive Dormand–Prince 5(4) integrator with exact stops at output points.

#[derive(Debug, Clone, Copy)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    /// Steps smaller than `h_min_rel * (1 + |t|)` count as underflow.
    pub h_min_rel: f64,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Dopri5Options { rtol: 1e-9, atol: 1e-12, h_init: 1e-3, h_min_rel: 1e-13, max_steps: 2_000_000 }
    }
}

/// Returned by the observer after every accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IntegrationEnd<const D: usize> {
    Finished { t: f64, y: [f64; D] },
    Stopped { t: f64, y: [f64; D] },
    StepUnderflow { t: f64, y: [f64; D] },
    StepBudget { t: f64, y: [f64; D] },
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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b*, the embedded error weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy<const D: usize>(y: &[f64; D], h: f64, terms: &[(f64, &[f64; D])]) -> [f64; D] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..D {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// Integrates `y' = f(t, y)` forward from `t0`, landing exactly on each
/// entry of `outputs` (which must be increasing and greater than `t0`).
/// `observer(t, y, at_output)` runs after every accepted step.
pub fn integrate<const D: usize, F, O>(
    f: F,
    t0: f64,
    y0: [f64; D],
    outputs: &[f64],
    opts: &Dopri5Options,
    mut observer: O,
) -> IntegrationEnd<D>
where
    F: Fn(f64, &[f64; D]) -> [f64; D],
    O: FnMut(f64, &[f64; D], bool) -> Control,
{
    let mut t = t0;
    let mut y = y0;
    let mut h = opts.h_init;
    let mut k1 = f(t, &y);
    let mut steps = 0usize;
    let mut next = 0usize;
    while next < outputs.len() {
        if steps >= opts.max_steps {
            return IntegrationEnd::StepBudget { t, y };
        }
        let target = outputs[next];
        let remaining = target - t;
        let mut lands = false;
        let mut step = h;
        if step >= remaining * (1.0 - 1e-12) {
            step = remaining;
            lands = true;
        }
        if step < opts.h_min_rel * (1.0 + t.abs()) {
            return IntegrationEnd::StepUnderflow { t, y };
        }
        steps += 1;
        let k2 = f(t + C2 * step, &axpy(&y, step, &[(A21, &k1)]));
        let k3 = f(t + C3 * step, &axpy(&y, step, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(t + C4 * step, &axpy(&y, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(t + C5 * step, &axpy(&y, step, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
        let k6 = f(
            t + step,
            &axpy(&y, step, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
        );
        let y_new = axpy(&y, step, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
        let t_new = if lands { target } else { t + step };
        let k7 = f(t_new, &y_new);
        let mut err = 0.0f64;
        let mut finite = true;
        for i in 0..D {
            let e = step * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            if !y_new[i].is_finite() || !e.is_finite() {
                finite = false;
            }
            err = err.max((e / sc).abs());
        }
        if !finite {
            h = step * 0.2;
            continue;
        }
        if err <= 1.0 {
            t = t_new;
            y = y_new;
            k1 = k7;
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            // after a clamped landing keep the controller's own proposal
            h = if lands { h.max(step * fac) } else { step * fac };
            if lands {
                next += 1;
            }
            if observer(t, &y, lands) == Control::Stop {
                return IntegrationEnd::Stopped { t, y };
            }
        } else {
            h = step * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
        }
    }
    IntegrationEnd::Finished { t, y }
}
