//! Adaptive Dormand–Prince 5(4) integration, periodic-orbit detection on a
//! Poincaré section, and sign-variation series of solution differences.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mat3::Vec3;
use crate::models::{SystemModel, VectorField};
use crate::signvar;

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
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Step sizes below `UNDERFLOW_FACTOR * t_end` abort the integration.
pub const UNDERFLOW_FACTOR: f64 = 1e-14;
/// Crossing times are bisected to this absolute width.
pub const CROSSING_TOL: f64 = 1e-10;
/// Exits from the box beyond this multiple of the scaled `atol` truncate
/// the trajectory.
pub const BOX_EXIT_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    pub rtol: f64,
    /// Absolute tolerance per unit of box width; component `i` uses
    /// `atol * max(1, width_i)`.
    pub atol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
        }
    }
}

impl SolverOptions {
    pub fn new(rtol: f64, atol: f64) -> Result<Self> {
        if !(rtol > 0.0 && rtol.is_finite() && atol > 0.0 && atol.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "tolerances must be positive and finite, got rtol = {rtol}, atol = {atol}"
            )));
        }
        Ok(Self { rtol, atol })
    }

    fn scaled_atol(&self, model: &SystemModel) -> Vec3 {
        model.bounds.width().map(|w| self.atol * w.max(1.0))
    }
}

/// Which points a trajectory records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// The initial point and every accepted step.
    Steps,
    /// `n` equally spaced times on `[0, t_end]` from the dense output.
    Uniform(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxExit {
    pub t: f64,
    pub state: Vec3,
    pub excursion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec3>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rtol: f64,
    pub atol: Vec3,
    /// Set when the solution left the box; the trajectory ends there.
    pub box_exit: Option<BoxExit>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, Vec3)> {
        Some((*self.times.last()?, *self.states.last()?))
    }

    /// Header `t,x1,x2,x3`, shortest round-trip decimals.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,x1,x2,x3")?;
        for (t, x) in self.times.iter().zip(&self.states) {
            writeln!(w, "{},{},{},{}", t, x[0], x[1], x[2])?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

/// Continuous extension of one accepted step, fourth order.
#[derive(Debug, Clone, Copy)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    r: [Vec3; 5],
}

impl DenseStep {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn y0(&self) -> Vec3 {
        self.r[0]
    }

    pub fn y1(&self) -> Vec3 {
        self.r[0] + self.r[1]
    }

    pub fn eval(&self, t: f64) -> Vec3 {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        self.r[0] + (self.r[1] + (self.r[2] + (self.r[3] + self.r[4] * th1) * th) * th1) * th
    }
}

struct Stepper<'a> {
    f: &'a dyn VectorField,
    rtol: f64,
    atol: Vec3,
    t: f64,
    y: Vec3,
    k1: Vec3,
    h: f64,
    t_end: f64,
    h_min: f64,
    accepted: usize,
    rejected: usize,
}

impl<'a> Stepper<'a> {
    fn new(f: &'a dyn VectorField, x0: Vec3, t_end: f64, rtol: f64, atol: Vec3) -> Result<Self> {
        let k1 = f.eval(&x0);
        if !k1.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t: 0.0 });
        }
        let mut s = Self {
            f,
            rtol,
            atol,
            t: 0.0,
            y: x0,
            k1,
            h: 0.0,
            t_end,
            h_min: UNDERFLOW_FACTOR * t_end,
            accepted: 0,
            rejected: 0,
        };
        s.h = s.initial_step();
        Ok(s)
    }

    fn err_norm(&self, e: &Vec3, y0: &Vec3, y1: &Vec3) -> f64 {
        let mut acc = 0.0;
        for i in 0..3 {
            let sc = self.atol[i] + self.rtol * y0[i].abs().max(y1[i].abs());
            acc += (e[i] / sc).powi(2);
        }
        (acc / 3.0).sqrt()
    }

    fn initial_step(&self) -> f64 {
        let sc = Vec3::from_fn(|i, _| self.atol[i] + self.rtol * self.y[i].abs());
        let d0 = self.y.component_div(&sc).norm() / 3f64.sqrt();
        let d1 = self.k1.component_div(&sc).norm() / 3f64.sqrt();
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(self.t_end);
        let f1 = self.f.eval(&(self.y + self.k1 * h0));
        let d2 = (f1 - self.k1).component_div(&sc).norm() / 3f64.sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        let h = (100.0 * h0).min(h1).min(self.t_end);
        if h.is_finite() && h > 0.0 {
            h
        } else {
            self.t_end
        }
    }

    fn done(&self) -> bool {
        self.t >= self.t_end
    }

    fn step(&mut self) -> Result<DenseStep> {
        let f = self.f;
        let mut last_rejected = false;
        loop {
            let remaining = self.t_end - self.t;
            let mut h = self.h.min(remaining);
            // avoid a sliver step at the end
            if remaining - h < 1e-3 * h {
                h = remaining;
            }
            if h < self.h_min {
                return Err(Error::StepUnderflow {
                    t: self.t,
                    h,
                    state: self.y.into(),
                });
            }
            let y = self.y;
            let k1 = self.k1;
            let k2 = f.eval(&(y + k1 * (h * A21)));
            let k3 = f.eval(&(y + (k1 * A31 + k2 * A32) * h));
            let k4 = f.eval(&(y + (k1 * A41 + k2 * A42 + k3 * A43) * h));
            let k5 = f.eval(&(y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h));
            let k6 = f.eval(&(y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h));
            let y1 = y + (k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * h;
            let k7 = f.eval(&y1);
            let e = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * h;
            let err = self.err_norm(&e, &y, &y1);

            if !err.is_finite() || !y1.iter().all(|v| v.is_finite()) {
                self.rejected += 1;
                last_rejected = true;
                self.h = 0.1 * h;
                continue;
            }
            if err <= 1.0 {
                let mut fac = 0.9 * err.max(1e-10).powf(-0.2);
                fac = fac.clamp(0.2, 10.0);
                if last_rejected {
                    fac = fac.min(1.0);
                }
                let ydiff = y1 - y;
                let bspl = k1 * h - ydiff;
                let r = [
                    y,
                    ydiff,
                    bspl,
                    ydiff - k7 * h - bspl,
                    (k1 * D1 + k3 * D3 + k4 * D4 + k5 * D5 + k6 * D6 + k7 * D7) * h,
                ];
                let dense = DenseStep { t0: self.t, h, r };
                self.t = if h == remaining { self.t_end } else { self.t + h };
                self.y = y1;
                self.k1 = k7;
                self.h = h * fac;
                self.accepted += 1;
                return Ok(dense);
            }
            self.rejected += 1;
            last_rejected = true;
            self.h = h * (0.9 * err.powf(-0.2)).max(0.2);
        }
    }
}

fn excursion_beyond(model: &SystemModel, x: &Vec3, atol: &Vec3) -> Option<f64> {
    let b = &model.bounds;
    let mut worst: Option<f64> = None;
    for i in 0..3 {
        let out = (b.lower[i] - x[i]).max(x[i] - b.upper[i]);
        if out > BOX_EXIT_FACTOR * atol[i] {
            worst = Some(worst.map_or(out, |w: f64| w.max(out)));
        }
    }
    worst
}

fn check_start(model: &SystemModel, x0: &Vec3, t_end: f64) -> Result<()> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParams(format!("t_end must be finite and >= 0, got {t_end}")));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParams(format!("non-finite initial state {x0}")));
    }
    if !model.bounds.contains(x0) {
        return Err(Error::InvalidParams(format!(
            "initial state {x0} lies outside the model box"
        )));
    }
    Ok(())
}

/// Integrates with the given step callback; the callback returns `false` to
/// stop. Returns the stepper's counters and any box exit.
fn drive<F>(
    model: &SystemModel,
    x0: Vec3,
    t_end: f64,
    opts: &SolverOptions,
    mut on_step: F,
) -> Result<(usize, usize, Vec3, Option<BoxExit>)>
where
    F: FnMut(&DenseStep) -> bool,
{
    check_start(model, &x0, t_end)?;
    let atol = opts.scaled_atol(model);
    if t_end == 0.0 {
        return Ok((0, 0, atol, None));
    }
    let field = model.field();
    let mut st = Stepper::new(field.as_ref(), x0, t_end, opts.rtol, atol)?;
    let mut exit = None;
    while !st.done() {
        let d = st.step()?;
        let y1 = d.y1();
        if let Some(out) = excursion_beyond(model, &y1, &atol) {
            exit = Some(BoxExit {
                t: d.t1(),
                state: y1,
                excursion: out,
            });
            on_step(&d);
            break;
        }
        if !on_step(&d) {
            break;
        }
    }
    Ok((st.accepted, st.rejected, atol, exit))
}

/// Per-step trajectory with the given tolerances.
pub fn integrate(model: &SystemModel, x0: Vec3, t_end: f64, rtol: f64, atol: f64) -> Result<Trajectory> {
    integrate_with(model, x0, t_end, &SolverOptions::new(rtol, atol)?, Sampling::Steps)
}

/// Trajectory on `[0, t_end]`. `t_end = 0` gives an empty trajectory.
pub fn integrate_with(
    model: &SystemModel,
    x0: Vec3,
    t_end: f64,
    opts: &SolverOptions,
    sampling: Sampling,
) -> Result<Trajectory> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    let grid: Vec<f64> = match sampling {
        Sampling::Steps => Vec::new(),
        Sampling::Uniform(0) => Vec::new(),
        Sampling::Uniform(1) => vec![0.0],
        Sampling::Uniform(n) => (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect(),
    };
    if t_end > 0.0 {
        match sampling {
            Sampling::Steps => {
                times.push(0.0);
                states.push(x0);
            }
            Sampling::Uniform(_) => {
                if let Some(&t) = grid.first() {
                    times.push(t);
                    states.push(x0);
                }
            }
        }
    }
    let mut next = 1usize;
    let (accepted, rejected, atol, exit) = drive(model, x0, t_end, opts, |d| {
        match sampling {
            Sampling::Steps => {
                times.push(d.t1());
                states.push(d.y1());
            }
            Sampling::Uniform(_) => {
                while next < grid.len() && grid[next] <= d.t1() {
                    let t = grid[next];
                    let x = if next + 1 == grid.len() { d.y1() } else { d.eval(t) };
                    times.push(t);
                    states.push(x);
                    next += 1;
                }
            }
        }
        true
    })?;
    Ok(Trajectory {
        times,
        states,
        accepted_steps: accepted,
        rejected_steps: rejected,
        rtol: opts.rtol,
        atol,
        box_exit: exit,
    })
}

/// Classical fixed-step integration with the fifth-order DOPRI solution;
/// used for order checks.
pub fn integrate_fixed(model: &SystemModel, x0: Vec3, t_end: f64, n_steps: usize) -> Vec3 {
    let f = model.field();
    let h = t_end / n_steps as f64;
    let mut y = x0;
    for _ in 0..n_steps {
        let k1 = f.eval(&y);
        let k2 = f.eval(&(y + k1 * (h * A21)));
        let k3 = f.eval(&(y + (k1 * A31 + k2 * A32) * h));
        let k4 = f.eval(&(y + (k1 * A41 + k2 * A42 + k3 * A43) * h));
        let k5 = f.eval(&(y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h));
        let k6 = f.eval(&(y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h));
        y += (k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * h;
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrbitOptions {
    pub horizon: f64,
    pub solver: SolverOptions,
    /// Number of return times averaged for the period.
    pub k: usize,
    /// Section `x[section_coord] = section_value`, crossed upward.
    pub section_coord: usize,
    /// Defaults to the corresponding coordinate of the model's equilibrium.
    pub section_value: Option<f64>,
    /// Allowed return-time spread relative to the period.
    pub rel_tol: f64,
    /// Allowed gap between consecutive return points; defaults to
    /// `1e-6` times the orbit diameter.
    pub abs_tol: Option<f64>,
    /// Successive cycle amplitudes must agree to this fraction.
    pub amplitude_tol: f64,
    /// The transient never extends past this fraction of the horizon.
    pub max_transient_fraction: f64,
}

impl Default for OrbitOptions {
    fn default() -> Self {
        Self {
            horizon: 2000.0,
            solver: SolverOptions::default(),
            k: 5,
            section_coord: 1,
            section_value: None,
            rel_tol: 1e-6,
            abs_tol: None,
            amplitude_tol: 0.01,
            max_transient_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodEstimate {
    /// Mean of the last `k` return times; 0 if fewer than two returns.
    pub period: f64,
    pub period_stderr: f64,
    /// Largest distance between consecutive return points used.
    pub closure_distance: f64,
    /// Returns after the transient.
    pub n_returns: usize,
    pub converged: bool,
    pub transient_skipped: f64,
    /// Largest per-cycle extent of the orbit over the last `k` cycles.
    pub diameter: f64,
    pub section_coord: usize,
    pub section_value: f64,
    pub return_times: Vec<f64>,
    pub note: Option<String>,
}

struct Crossing {
    t: f64,
    x: Vec3,
}

fn refine_crossing(d: &DenseStep, coord: usize, value: f64) -> Crossing {
    let (mut lo, mut hi) = (d.t0, d.t1());
    while hi - lo > CROSSING_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if d.eval(mid)[coord] - value < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    Crossing { t, x: d.eval(t) }
}

// per-coordinate agreement relative to the larger overall extent
fn amplitudes_agree(a: &Vec3, b: &Vec3, tol: f64) -> bool {
    let scale = a.amax().max(b.amax());
    scale > 0.0 && (a - b).amax() <= tol * scale
}

/// Integrates to the horizon and estimates the period of the limit cycle
/// from upward crossings of the section.
pub fn detect_orbit(model: &SystemModel, x0: Vec3, opts: &OrbitOptions) -> Result<PeriodEstimate> {
    if opts.section_coord > 2 || opts.k < 1 {
        return Err(Error::InvalidParams(format!(
            "section coordinate must be 0..=2 and k >= 1, got {} / {}",
            opts.section_coord, opts.k
        )));
    }
    let value = match opts.section_value {
        Some(v) => v,
        None => model
            .analytic_equilibrium()
            .map(|(e, _)| e[opts.section_coord])
            .ok_or_else(|| {
                Error::InvalidParams("model has no analytic equilibrium; give a section value".into())
            })?,
    };
    let c = opts.section_coord;
    let mut crossings: Vec<Crossing> = Vec::new();
    // extent of each completed cycle between consecutive crossings
    let mut cycles: Vec<Vec3> = Vec::new();
    let mut lo = x0;
    let mut hi = x0;
    drive(model, x0, opts.horizon, &opts.solver, |d| {
        let (y0, y1) = (d.y0(), d.y1());
        if y0[c] - value < 0.0 && y1[c] - value >= 0.0 {
            let cr = refine_crossing(d, c, value);
            lo = lo.inf(&cr.x);
            hi = hi.sup(&cr.x);
            if !crossings.is_empty() {
                cycles.push(hi - lo);
            }
            lo = cr.x.inf(&y1);
            hi = cr.x.sup(&y1);
            crossings.push(cr);
        } else {
            lo = lo.inf(&y1);
            hi = hi.sup(&y1);
        }
        true
    })?;

    // cycle j runs from crossing j to crossing j+1
    let cap = opts.max_transient_fraction * opts.horizon;
    let mut transient = cap;
    for j in 0..cycles.len().saturating_sub(1) {
        if amplitudes_agree(&cycles[j], &cycles[j + 1], opts.amplitude_tol) {
            transient = crossings[j].t.min(cap);
            break;
        }
    }
    let first = crossings.partition_point(|cr| cr.t < transient);
    let post = &crossings[first..];
    let return_times: Vec<f64> = post.iter().map(|cr| cr.t).collect();
    let mut est = PeriodEstimate {
        period: 0.0,
        period_stderr: 0.0,
        closure_distance: f64::INFINITY,
        n_returns: post.len(),
        converged: false,
        transient_skipped: transient,
        diameter: 0.0,
        section_coord: c,
        section_value: value,
        return_times,
        note: None,
    };
    if post.len() < 2 {
        est.note = Some(format!(
            "only {} section crossings after the transient; the solution may be converging to an equilibrium or the horizon is too short",
            post.len()
        ));
        return Ok(est);
    }
    let k = opts.k.min(post.len() - 1);
    let tail = &post[post.len() - k - 1..];
    let diffs: Vec<f64> = tail.windows(2).map(|w| w[1].t - w[0].t).collect();
    let mean = diffs.iter().sum::<f64>() / k as f64;
    let var = if k > 1 {
        diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (k - 1) as f64
    } else {
        0.0
    };
    let spread = diffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - diffs.iter().cloned().fold(f64::INFINITY, f64::min);
    est.period = mean;
    est.period_stderr = (var / k as f64).sqrt();
    est.closure_distance = tail
        .windows(2)
        .map(|w| (w[1].x - w[0].x).norm())
        .fold(0.0, f64::max);

    let first_cycle = first + post.len() - k - 1;
    let tail_cycles = &cycles[first_cycle.min(cycles.len())..(first_cycle + k).min(cycles.len())];
    est.diameter = tail_cycles.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let amplitude_stable = tail_cycles.len() == k
        && tail_cycles
            .windows(2)
            .all(|w| amplitudes_agree(&w[0], &w[1], opts.amplitude_tol));
    let abs_tol = opts.abs_tol.unwrap_or(1e-6 * est.diameter);
    let nontrivial = est.diameter > 1e-9 * (1.0 + value.abs());

    let enough = post.len() >= opts.k + 2;
    est.converged = enough
        && nontrivial
        && amplitude_stable
        && est.closure_distance <= abs_tol
        && spread <= opts.rel_tol * mean;
    if !est.converged {
        let mut why = Vec::new();
        if !enough {
            why.push(format!("{} returns, need {}", post.len(), opts.k + 2));
        }
        if !nontrivial || !amplitude_stable {
            why.push("cycle amplitude not stationary".to_string());
        }
        if est.closure_distance > abs_tol {
            why.push(format!("closure {:.3e} > {:.3e}", est.closure_distance, abs_tol));
        }
        if spread > opts.rel_tol * mean {
            why.push(format!("return-time spread {:.3e} > {:.3e}", spread, opts.rel_tol * mean));
        }
        est.note = Some(why.join("; "));
    }
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignVariationSample {
    pub t: f64,
    pub s_minus: usize,
    pub s_plus: usize,
}

/// Component `c` of a solution difference is snapped to zero when
/// `|z_c| <= PAIR_SNAP_REL * max(|x_c(t,a)|, |x_c(t,b)|)`, i.e. below the
/// integration accuracy of that coordinate.
pub const PAIR_SNAP_REL: f64 = 1e-9;

/// `s⁻` and `s⁺` of `D(x(t,a) - x(t,b))` at `n_samples` equally spaced
/// times, `D` being the model's signature.
pub fn pair_sign_variation_series(
    model: &SystemModel,
    a: Vec3,
    b: Vec3,
    t_end: f64,
    n_samples: usize,
) -> Result<Vec<SignVariationSample>> {
    pair_sign_variation_series_with(model, a, b, t_end, n_samples, &SolverOptions::default())
}

pub fn pair_sign_variation_series_with(
    model: &SystemModel,
    a: Vec3,
    b: Vec3,
    t_end: f64,
    n_samples: usize,
    opts: &SolverOptions,
) -> Result<Vec<SignVariationSample>> {
    if a == b {
        return Err(Error::InvalidParams("the two initial states coincide".into()));
    }
    let ta = integrate_with(model, a, t_end, opts, Sampling::Uniform(n_samples))?;
    let tb = integrate_with(model, b, t_end, opts, Sampling::Uniform(n_samples))?;
    let n = ta.len().min(tb.len());
    Ok((0..n)
        .map(|i| {
            let (xa, xb) = (ta.states[i], tb.states[i]);
            let z: Vec<f64> = (0..3)
                .map(|c| {
                    let zc = model.signature[c] * (xa[c] - xb[c]);
                    let tol = PAIR_SNAP_REL * xa[c].abs().max(xb[c].abs());
                    if zc.abs() <= tol {
                        0.0
                    } else {
                        zc
                    }
                })
                .collect();
            SignVariationSample {
                t: ta.times[i],
                s_minus: signvar::s_minus(&z),
                s_plus: signvar::s_plus(&z),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat3::Mat3;
    use crate::models::{goodwin, Box3, GoodwinParams};

    fn decay() -> SystemModel {
        SystemModel::linear(
            "decay",
            Mat3::from_diagonal(&Vec3::new(-1.0, -2.0, -3.0)),
            Box3::new([0.0; 3], [1.0; 3]).unwrap(),
        )
    }

    fn harmonic() -> SystemModel {
        SystemModel::linear(
            "harmonic",
            Mat3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -1.0),
            Box3::new([-2.0; 3], [2.0; 3]).unwrap(),
        )
    }

    fn exact_decay(t: f64) -> Vec3 {
        Vec3::new((-t).exp(), (-2.0 * t).exp(), (-3.0 * t).exp())
    }

    #[test]
    fn linear_decay() {
        for rtol in [1e-6, 1e-8, 1e-10] {
            let tr = integrate(&decay(), Vec3::repeat(1.0), 1.0, rtol, 1e-14).unwrap();
            let (t, x) = tr.last().unwrap();
            assert_eq!(t, 1.0);
            let err = (x - exact_decay(1.0)).amax();
            assert!(err <= 10.0 * rtol, "rtol {rtol}: err {err:e}");
            assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn zero_horizon_is_empty() {
        let tr = integrate(&decay(), Vec3::repeat(1.0), 0.0, 1e-8, 1e-12).unwrap();
        assert!(tr.is_empty());
        assert_eq!(tr.to_csv_string(), "t,x1,x2,x3\n");
    }

    #[test]
    fn dense_output_accuracy() {
        let opts = SolverOptions::new(1e-10, 1e-14).unwrap();
        let tr = integrate_with(&decay(), Vec3::repeat(1.0), 2.0, &opts, Sampling::Uniform(101)).unwrap();
        assert_eq!(tr.len(), 101);
        for (t, x) in tr.times.iter().zip(&tr.states) {
            assert!((x - exact_decay(*t)).amax() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn fixed_step_halving() {
        let m = harmonic();
        let x0 = Vec3::new(1.0, 0.0, 1.0);
        let exact = Vec3::new(10f64.cos(), -(10f64.sin()), (-10f64).exp());
        let mut prev = f64::INFINITY;
        for n in [50, 100, 200, 400] {
            let err = (integrate_fixed(&m, x0, 10.0, n) - exact).norm();
            assert!(err * 4.0 <= prev, "n = {n}: {err:e} vs {prev:e}");
            prev = err;
        }
    }

    #[test]
    fn harmonic_period() {
        let opts = OrbitOptions {
            horizon: 100.0,
            section_value: Some(0.0),
            ..Default::default()
        };
        let p = detect_orbit(&harmonic(), Vec3::new(1.0, 0.0, 1.0), &opts).unwrap();
        assert!(p.converged, "{p:?}");
        assert!((p.period - std::f64::consts::TAU).abs() < 1e-6, "{}", p.period);
    }

    #[test]
    fn stable_goodwin_does_not_converge() {
        let m = goodwin(GoodwinParams {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            m: 1,
        })
        .unwrap();
        let x0 = Vec3::new(0.7, 0.2, 0.4);
        let opts = OrbitOptions {
            horizon: 300.0,
            ..Default::default()
        };
        let p = detect_orbit(&m, x0, &opts).unwrap();
        assert!(!p.converged, "{p:?}");
        let e = m.analytic_equilibrium().unwrap().0;
        let tr = integrate_with(&m, x0, 30.0, &SolverOptions::default(), Sampling::Uniform(4)).unwrap();
        let d: Vec<f64> = tr.states.iter().map(|x| (x - e).norm()).collect();
        assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
    }

    #[test]
    fn box_exit_is_flagged() {
        let m = SystemModel::linear(
            "grow",
            Mat3::identity(),
            Box3::new([0.0; 3], [2.0; 3]).unwrap(),
        );
        let tr = integrate(&m, Vec3::repeat(1.0), 5.0, 1e-8, 1e-10).unwrap();
        let exit = tr.box_exit.as_ref().unwrap();
        assert!(exit.t > 2f64.ln() && exit.t < 1.0);
        assert_eq!(tr.last().unwrap().0, exit.t);
    }

    #[test]
    fn start_outside_box_rejected() {
        assert!(integrate(&decay(), Vec3::repeat(2.0), 1.0, 1e-8, 1e-12).is_err());
        assert!(integrate(&decay(), Vec3::repeat(1.0), 1.0, 0.0, 1e-12).is_err());
    }

    #[test]
    fn discontinuous_field_reports_underflow() {
        let m = SystemModel::from_fn(
            "relay",
            |x: &Vec3| Vec3::new(-1e6 * x[0].signum(), 0.0, 0.0),
            Box3::new([-1.0; 3], [1.0; 3]).unwrap(),
        );
        let err = integrate(&m, Vec3::new(0.5, 0.0, 0.0), 1.0, 1e-8, 1e-12).unwrap_err();
        assert!(matches!(err, Error::StepUnderflow { .. }), "{err}");
        assert!(err.to_string().contains("stiff"));
    }

    #[test]
    fn csv_round_trips() {
        let tr = integrate(&decay(), Vec3::repeat(1.0), 1.0, 1e-8, 1e-12).unwrap();
        let s = tr.to_csv_string();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("t,x1,x2,x3"));
        for (line, (t, x)) in lines.zip(tr.times.iter().zip(&tr.states)) {
            let v: Vec<f64> = line.split(',').map(|p| p.parse().unwrap()).collect();
            assert_eq!(v, vec![*t, x[0], x[1], x[2]]);
        }
    }

    #[test]
    fn pair_series_small_perturbation() {
        let m = goodwin(GoodwinParams {
            alpha: 0.5,
            beta: 0.4,
            gamma: 0.6,
            m: 10,
        })
        .unwrap();
        let b = Vec3::new(0.5, 1.0, 2.0);
        let a = b + Vec3::repeat(1e-3);
        let s = pair_sign_variation_series(&m, a, b, 50.0, 200).unwrap();
        assert_eq!(s[0].s_minus, 0);
        assert!(s.iter().all(|p| p.s_plus <= 1));
    }
}
