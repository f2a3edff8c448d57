//! Hypothesis checks for convergence to a periodic orbit, the box partition
//! around the equilibrium, and the numerical construction of the
//! equilibrium-free invariant set `H_η`.
//!
//! Sign-variation quantities are evaluated in the cooperative coordinates
//! `y = D x` of the model (see [`SystemModel::cooperative_view`]); for models
//! whose Jacobian already has the 2-positivity pattern, `D = I`.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mat3::{
    self, block_schur3, charpoly3, classify_lemma1, det3, BlockSchur3, CharPoly3, Mat3, RouthVerdict,
    Spectrum3, Vec3,
};
use crate::models::{Box3, EquilibriumMethod, ModelKind, SystemModel};
use crate::parallel;
use crate::signpat::{self, SAMPLED_TOL};
use crate::signvar;
use crate::sim::{self, SolverOptions};

/// Zero-snapping tolerance for `x - e` in the B₁₆ rule.
pub const B16_SNAP_TOL: f64 = 1e-12;
/// Points with `|q|` below this are skipped in the remainder bound.
pub const M_EXCLUSION_RADIUS: f64 = 1e-6;

/// Orthant signs of the sub-boxes `B₁ … B₈` relative to `e`.
pub const SUB_BOX_SIGNS: [[i8; 3]; 8] = [
    [-1, -1, -1],
    [1, -1, -1],
    [1, 1, -1],
    [1, 1, 1],
    [-1, 1, 1],
    [-1, -1, 1],
    [1, -1, 1],
    [-1, 1, -1],
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxPartition {
    pub bounds: Box3,
    pub e: Vec3,
}

/// Splits `bounds` into eight closed orthant boxes around `e`.
pub fn partition(bounds: &Box3, e: &Vec3) -> Result<BoxPartition> {
    if !bounds.contains_interior(e) {
        return Err(Error::EquilibriumNotInterior((*e).into()));
    }
    Ok(BoxPartition { bounds: *bounds, e: *e })
}

impl BoxPartition {
    /// `B_{k+1}` for `k` in `0..8`.
    pub fn sub_box(&self, k: usize) -> Box3 {
        let mut lower = self.bounds.lower;
        let mut upper = self.bounds.upper;
        for i in 0..3 {
            if SUB_BOX_SIGNS[k][i] > 0 {
                lower[i] = self.e[i];
            } else {
                upper[i] = self.e[i];
            }
        }
        Box3 { lower, upper }
    }

    pub fn sub_boxes(&self) -> [Box3; 8] {
        std::array::from_fn(|k| self.sub_box(k))
    }

    /// Indices (0-based) of the closed sub-boxes containing `x`.
    pub fn membership(&self, x: &Vec3) -> Vec<usize> {
        (0..8).filter(|&k| self.sub_box(k).contains(x)).collect()
    }

    /// Union-of-boxes test for `B₁ ∪ … ∪ B₆`.
    pub fn b16_contains_union(&self, x: &Vec3) -> bool {
        (0..6).any(|k| self.sub_box(k).contains(x))
    }

    /// Sup-norm distance from `x` to `B₁₆`.
    pub fn distance_to_b16(&self, x: &Vec3) -> f64 {
        (0..6)
            .map(|k| self.sub_box(k).excursion(x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// `x ∈ B` and `s⁻(x - e) <= 1`.
pub fn b16_contains(part: &BoxPartition, x: &Vec3) -> bool {
    if !part.bounds.contains(x) {
        return false;
    }
    let z = signvar::snap((x - part.e).as_slice(), B16_SNAP_TOL);
    signvar::s_minus(&z) <= 1
}

/// Partition of the model's box in cooperative coordinates around `D e`.
pub fn cooperative_partition(model: &SystemModel, e: &Vec3) -> Result<BoxPartition> {
    let d = model.signature;
    partition(&model.bounds.signed(&d), &d.component_mul(e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum Conclusion {
    Certified,
    Refuted(String),
    Inconclusive(String),
}

impl Conclusion {
    pub fn is_certified(&self) -> bool {
        matches!(self, Conclusion::Certified)
    }

    /// 0 certified, 2 refuted, 3 inconclusive.
    pub fn exit_code(&self) -> i32 {
        match self {
            Conclusion::Certified => 0,
            Conclusion::Refuted(_) => 2,
            Conclusion::Inconclusive(_) => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternSource {
    /// The model's own sign pattern, checked on the grid with tolerance 0.
    Certificate,
    /// No pattern supplied; sampled Jacobians checked against the
    /// 2-positivity pattern in cooperative coordinates.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub grid_n: usize,
    pub signature: Vec3,
    pub pattern_source: PatternSource,
    /// Fraction of interior grid points where the Jacobian conforms.
    pub pattern_ok: f64,
    /// Fraction of interior grid points where the Jacobian is irreducible.
    pub irreducible_ok: f64,
    pub equilibrium: Option<Vec3>,
    pub equilibrium_method: EquilibriumMethod,
    pub unique_in_box: Option<bool>,
    pub uniqueness_note: String,
    pub jacobian_at_e: Option<Mat3>,
    pub charpoly: Option<CharPoly3>,
    pub unstable: Option<RouthVerdict>,
    pub det: Option<f64>,
    pub det_negative: Option<bool>,
    /// Spectrum of `D J(e) D`; its `ζ` is in cooperative coordinates.
    pub spectrum: Option<Spectrum3>,
    pub schur: Option<BlockSchur3>,
    pub conclusion: Conclusion,
    pub warnings: Vec<String>,
}

fn grid_fraction<F: Fn(&Vec3) -> bool + Sync + Send>(pts: &[Vec3], pred: F) -> f64 {
    let hits = parallel::map(pts, |x| pred(x)).into_iter().filter(|&b| b).count();
    hits as f64 / pts.len() as f64
}

fn newton_from(model: &SystemModel, seed: Vec3, f_scale: f64) -> Option<Vec3> {
    let width = model.bounds.width().amax().max(1.0);
    let mut x = seed;
    let mut fx = model.f(&x);
    for _ in 0..80 {
        let j = model.jac(&x);
        let dx = j.lu().solve(&(-fx))?;
        let n0 = fx.amax();
        let mut lam = 1.0;
        let mut next = x + dx;
        let mut fnext = model.f(&next);
        while !(fnext.amax() < n0) && lam > 1e-4 {
            lam *= 0.5;
            next = x + dx * lam;
            fnext = model.f(&next);
        }
        if !next.iter().all(|v| v.is_finite()) || model.bounds.excursion(&next) > width {
            return None;
        }
        let small_step = (next - x).amax() <= 1e-12 * (1.0 + x.amax());
        x = next;
        fx = fnext;
        if fx.amax() <= 1e-12 * f_scale || (small_step && fx.amax() <= 1e-8 * f_scale) {
            return Some(x);
        }
        if small_step {
            return None;
        }
    }
    None
}

/// Distinct roots of `f` in the box found by damped Newton from the grid
/// seeds, in seed order.
pub fn multistart_equilibria(model: &SystemModel, seeds: &[Vec3]) -> Vec<Vec3> {
    let f_scale = seeds.iter().map(|x| model.f(x).amax()).fold(1.0, f64::max);
    let found = parallel::map(seeds, |s| newton_from(model, *s, f_scale));
    let tol = 1e-6 * model.bounds.width().norm().max(1.0);
    let slack = model.bounds.width().map(|w| 1e-9 * w.max(1.0));
    let mut roots: Vec<Vec3> = Vec::new();
    for r in found.into_iter().flatten() {
        let inside = (0..3).all(|i| {
            r[i] >= model.bounds.lower[i] - slack[i] && r[i] <= model.bounds.upper[i] + slack[i]
        });
        if inside && roots.iter().all(|q| (q - r).norm() > tol) {
            roots.push(r);
        }
    }
    roots
}

struct Checks {
    refuted: Vec<String>,
    inconclusive: Vec<String>,
}

impl Checks {
    fn conclusion(&self) -> Conclusion {
        if let Some(r) = self.refuted.first() {
            Conclusion::Refuted(r.clone())
        } else if let Some(r) = self.inconclusive.first() {
            Conclusion::Inconclusive(r.clone())
        } else {
            Conclusion::Certified
        }
    }
}

/// Checks the hypotheses on a `grid_n³` interior grid and at the
/// equilibrium: sign pattern, irreducibility, unique interior equilibrium,
/// instability, `det J(e) < 0`, the spectral classification and the block
/// form.
pub fn check_theorem(model: &SystemModel, grid_n: usize) -> Result<CertificationReport> {
    if grid_n < 5 {
        return Err(Error::InvalidParams(format!("grid_n must be >= 5, got {grid_n}")));
    }
    let view = model.cooperative_view();
    let pts = model.bounds.interior_grid(grid_n);
    let mut checks = Checks {
        refuted: Vec::new(),
        inconclusive: Vec::new(),
    };

    let a2 = signpat::pattern_a2(3)?;
    let (pattern_source, pattern_ok, irr_tol) = match &model.sign_certificate {
        Some(cert) => {
            let compatible = view
                .sign_certificate
                .as_ref()
                .is_some_and(|p| p.is_subpattern_of(&a2));
            if !compatible {
                checks.refuted.push(format!(
                    "sign certificate {cert} is not the 2-positivity pattern under the signature {:?}",
                    model.signature.as_slice()
                ));
            }
            let frac = grid_fraction(&pts, |x| signpat::conforms(&model.jac(x), cert, 0.0).unwrap_or(false));
            (PatternSource::Certificate, frac, 0.0)
        }
        None => {
            let d = model.signature;
            let frac = grid_fraction(&pts, |x| {
                signpat::conforms(&view.jac(&d.component_mul(x)), &a2, SAMPLED_TOL).unwrap_or(false)
            });
            (PatternSource::Sampled, frac, SAMPLED_TOL)
        }
    };
    if pattern_ok < 1.0 {
        checks.refuted.push(format!(
            "Jacobian violates the sign pattern at {:.1}% of grid points",
            100.0 * (1.0 - pattern_ok)
        ));
    }
    let irreducible_ok = grid_fraction(&pts, |x| signpat::is_irreducible(&model.jac(x), irr_tol));
    if irreducible_ok == 0.0 {
        checks.refuted.push("Jacobian is reducible at every grid point".into());
    } else if irreducible_ok < 1.0 {
        checks.inconclusive.push(format!(
            "Jacobian is irreducible at only {:.1}% of grid points",
            100.0 * irreducible_ok
        ));
    }

    let (equilibrium, method, unique, note) = match (model.analytic_equilibrium(), model.kind) {
        (Some((e, m)), ModelKind::Goodwin(_)) => (
            Some(e),
            m,
            Some(true),
            "unique positive root of Q, which is strictly increasing on (0, inf)".to_string(),
        ),
        (Some((e, m)), _) => (
            Some(e),
            m,
            Some(true),
            "closed form; the other equilibria (the origin and a negative root) lie outside the box"
                .to_string(),
        ),
        (None, _) => {
            let roots = multistart_equilibria(model, &pts);
            match roots.len() {
                0 => {
                    checks
                        .inconclusive
                        .push("multi-start Newton found no equilibrium in the box".into());
                    (None, EquilibriumMethod::MultiStartNewton, None, format!("no root from {} seeds", pts.len()))
                }
                1 => (
                    Some(roots[0]),
                    EquilibriumMethod::MultiStartNewton,
                    Some(true),
                    format!("exactly one root from {} seeds (numerical evidence only)", pts.len()),
                ),
                n => {
                    checks
                        .refuted
                        .push(format!("{n} distinct equilibria found in the box"));
                    (
                        Some(roots[0]),
                        EquilibriumMethod::MultiStartNewton,
                        Some(false),
                        format!("{n} distinct roots from {} seeds", pts.len()),
                    )
                }
            }
        }
    };

    let mut report = CertificationReport {
        grid_n,
        signature: model.signature,
        pattern_source,
        pattern_ok,
        irreducible_ok,
        equilibrium,
        equilibrium_method: method,
        unique_in_box: unique,
        uniqueness_note: note,
        jacobian_at_e: None,
        charpoly: None,
        unstable: None,
        det: None,
        det_negative: None,
        spectrum: None,
        schur: None,
        conclusion: Conclusion::Certified,
        warnings: model.warnings.clone(),
    };

    if let Some(e) = equilibrium {
        if !model.bounds.contains_interior(&e) {
            checks
                .refuted
                .push(format!("equilibrium {e:?} is not in the interior of the box"));
        }
        let j = model.jac(&e);
        let p = charpoly3(&j);
        let verdict = mat3::routh_classify(&p);
        let det = det3(&j);
        report.jacobian_at_e = Some(j);
        report.charpoly = Some(p);
        report.unstable = Some(verdict);
        report.det = Some(det);
        report.det_negative = Some(det < 0.0);
        match verdict {
            RouthVerdict::Hurwitz => checks.refuted.push("equilibrium is stable (Hurwitz)".into()),
            RouthVerdict::Marginal => checks
                .inconclusive
                .push("equilibrium is marginal (a Routh equality holds)".into()),
            RouthVerdict::Unstable => {}
        }
        if det >= 0.0 {
            checks.refuted.push(format!("det J(e) = {det} is not negative"));
        }
        if verdict == RouthVerdict::Unstable && det < 0.0 {
            let a = view.jac(&model.signature.component_mul(&e));
            match classify_lemma1(&a).and_then(|s| Ok((s, block_schur3(&a, &s)?))) {
                Ok((s, b)) => {
                    report.spectrum = Some(s);
                    report.schur = Some(b);
                }
                Err(err) => checks
                    .inconclusive
                    .push(format!("spectral classification failed: {err}")),
            }
        }
    }
    report.conclusion = checks.conclusion();
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantSetOptions {
    pub grid_n: usize,
    /// `η = eta_fraction · η*`, in `(0, 1]`.
    pub eta_fraction: f64,
}

impl Default for InvariantSetOptions {
    fn default() -> Self {
        Self {
            grid_n: 20,
            eta_fraction: 0.5,
        }
    }
}

/// Constants of `H_η = {q ∈ T⁻¹B̃₁₆ : V(q₂, q₃) > η}` with
/// `q = T⁻¹(y - e_y)` and `V = (q₂² + q₃²)/2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantSetCert {
    pub xi: f64,
    #[serde(rename = "M")]
    pub m: f64,
    /// Grid part of `M`.
    pub m_grid: f64,
    /// Second-order Taylor part of `M` at the equilibrium.
    pub m_hessian: f64,
    pub kappa: f64,
    #[serde(rename = "M_prime")]
    pub m_prime: f64,
    /// Largest sampled `|s| / V^{3/2}` on the lattice points of `T⁻¹B̃₁₆`.
    pub m_prime_sampled: f64,
    pub eta_star: f64,
    pub eta: f64,
    /// `H_η` stays outside the ball of this radius around the equilibrium.
    pub excluded_radius: f64,
    pub grid_n: usize,
    pub grid_resolution: String,
    pub signature: Vec3,
    /// Equilibrium in cooperative coordinates.
    pub e_y: Vec3,
    pub t: Mat3,
    pub t_inv: Mat3,
    pub block: Mat3,
}

impl InvariantSetCert {
    /// `q = T⁻¹(D x - e_y)` for a state in original coordinates.
    pub fn q_of(&self, x: &Vec3) -> Vec3 {
        self.t_inv * (self.signature.component_mul(x) - self.e_y)
    }

    /// `V(q₂, q₃)` for a state in cooperative coordinates.
    pub fn v_y(&self, y: &Vec3) -> f64 {
        let q = self.t_inv * (y - self.e_y);
        0.5 * (q[1] * q[1] + q[2] * q[2])
    }

    pub fn v_of(&self, x: &Vec3) -> f64 {
        self.v_y(&self.signature.component_mul(x))
    }

    /// Membership of an original-coordinate state in `H_η`; `part` is the
    /// cooperative partition.
    pub fn contains(&self, part: &BoxPartition, x: &Vec3) -> bool {
        let y = self.signature.component_mul(x);
        b16_contains(part, &y) && self.v_y(&y) > self.eta
    }
}

/// Unit-cube faces of the closed orthants of `B₁ … B₆`: points with one
/// coordinate `±1` and the others on the nested grid `±i/n`.
fn b16_face_directions(n: usize) -> Vec<Vec3> {
    let mut out = Vec::new();
    for signs in &SUB_BOX_SIGNS[..6] {
        for axis in 0..3 {
            let (b, c) = ((axis + 1) % 3, (axis + 2) % 3);
            for i in 0..=n {
                for j in 0..=n {
                    let mut d = Vec3::zeros();
                    d[axis] = signs[axis] as f64;
                    d[b] = signs[b] as f64 * i as f64 / n as f64;
                    d[c] = signs[c] as f64 * j as f64 / n as f64;
                    out.push(d);
                }
            }
        }
    }
    out
}

fn abs_cos_e1(q: &Vec3) -> f64 {
    q[0].abs() / q.norm()
}

/// Builds the invariant-set constants for a certified model.
///
/// The remainder constant follows from the chain
/// `|s| <= 2MV/(1-(1-ξ)²) · (|q₂|+|q₃|)` and `|q₂|+|q₃| <= √2·√(q₂²+q₃²) = 2√V`,
/// giving `|s| <= M'·V^{3/2}` with `M' = 4M/(1-(1-ξ)²)`.
pub fn construct_invariant_set(
    model: &SystemModel,
    report: &CertificationReport,
    opts: &InvariantSetOptions,
) -> Result<InvariantSetCert> {
    if !report.conclusion.is_certified() {
        return Err(Error::NotCertified);
    }
    if opts.grid_n < 2 || !(opts.eta_fraction > 0.0 && opts.eta_fraction <= 1.0) {
        return Err(Error::InvalidParams(format!(
            "need grid_n >= 2 and eta_fraction in (0, 1], got {} / {}",
            opts.grid_n, opts.eta_fraction
        )));
    }
    let (e, schur) = match (report.equilibrium, report.schur) {
        (Some(e), Some(s)) => (e, s),
        _ => return Err(Error::NotCertified),
    };
    let view = model.cooperative_view();
    let d = model.signature;
    let e_y = d.component_mul(&e);
    let part = partition(&view.bounds, &e_y)?;
    let t = schur.t;
    let t_inv = schur.t_inverse().ok_or(Error::IllConditioned { cond: f64::INFINITY })?;
    let block = schur.block();
    let n = opts.grid_n;

    let h = |q: &Vec3| t_inv * view.f(&(e_y + t * q));
    let g = |q: &Vec3| h(q) - block * q;

    // box lattice in z = y - e_y, nested under doubling of n
    let mut lattice = Vec::with_capacity((n + 1).pow(3));
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                lattice.push(view.bounds.lattice_point([i, j, k], n) - e_y);
            }
        }
    }

    // per lattice point: (|g|/|q|², |cos| if in B̃₁₆, |s|/V^{3/2} if in B̃₁₆)
    let samples = parallel::map(&lattice, |z| {
        let q = t_inv * z;
        let in16 = b16_contains(&part, &(e_y + z));
        let qn = q.norm();
        if qn < M_EXCLUSION_RADIUS {
            return (0.0, None, None);
        }
        let gq = g(&q);
        let ratio = gq.amax() / (qn * qn);
        if !in16 {
            return (ratio, None, None);
        }
        let v = 0.5 * (q[1] * q[1] + q[2] * q[2]);
        let s = q[1] * gq[1] + q[2] * gq[2];
        let s_ratio = if v > 0.0 { Some(s.abs() / v.powf(1.5)) } else { None };
        (ratio, Some(abs_cos_e1(&q)), s_ratio)
    });
    let m_grid = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    let cos_lattice = samples.iter().filter_map(|s| s.1).fold(0.0, f64::max);
    let s_ratio_max = samples.iter().filter_map(|s| s.2).fold(0.0, f64::max);

    let dirs = b16_face_directions(n);
    let cos_faces = dirs
        .iter()
        .map(|dz| abs_cos_e1(&(t_inv * dz)))
        .fold(0.0, f64::max);
    let xi = 1.0 - cos_faces.max(cos_lattice);
    if !(xi > 0.0) {
        return Err(Error::AngleMargin { xi });
    }

    let m_hessian = hessian_bound(&view, &e_y, &t, &t_inv);
    let m = m_grid.max(m_hessian);
    let kappa = schur.kappa();
    if !(kappa > 0.0) {
        return Err(Error::Lemma1Violation(format!(
            "quadratic form is not positive definite (kappa = {kappa})"
        )));
    }
    let denom = 1.0 - (1.0 - xi).powi(2);
    let m_prime = 4.0 * m / denom;
    let eta_star = kappa * kappa / (4.0 * m_prime * m_prime);
    let eta = opts.eta_fraction * eta_star;
    let sigma_min = t.svd(false, false).singular_values.min();

    Ok(InvariantSetCert {
        xi,
        m,
        m_grid,
        m_hessian,
        kappa,
        m_prime,
        m_prime_sampled: s_ratio_max,
        eta_star,
        eta,
        excluded_radius: (2.0 * eta).sqrt() * sigma_min,
        grid_n: n,
        grid_resolution: format!(
            "numerical at resolution grid_n = {n}: {} face directions, {} box lattice points, finite-difference Hessian at e",
            dirs.len(),
            lattice.len()
        ),
        signature: d,
        e_y,
        t,
        t_inv,
        block,
    })
}

/// `½ max_i ‖∇²h_i(0)‖_F` for `h(q) = T⁻¹ f(e + T q)`, by central
/// differences of the Jacobian.
fn hessian_bound(view: &SystemModel, e_y: &Vec3, t: &Mat3, t_inv: &Mat3) -> f64 {
    // step per q-coordinate relative to the extent of T⁻¹B̃ along it
    let mut extent = Vec3::zeros();
    for c in 0..8 {
        let corner = view.bounds.lattice_point([c & 1, (c >> 1) & 1, (c >> 2) & 1], 1);
        extent = extent.sup(&(t_inv * (corner - e_y)).abs());
    }
    let jh = |q: &Vec3| t_inv * view.jac(&(e_y + t * q)) * t;
    let mut hess = [Matrix3::<f64>::zeros(); 3];
    for k in 0..3 {
        let eps = 1e-5 * extent[k].max(1e-300);
        let mut dq = Vec3::zeros();
        dq[k] = eps;
        let dj = (jh(&dq) - jh(&(-dq))) / (2.0 * eps);
        for (i, hi) in hess.iter_mut().enumerate() {
            for j in 0..3 {
                hi[(j, k)] = dj[(i, j)];
            }
        }
    }
    hess.iter()
        .map(|hi| 0.5 * (0.5 * (hi + hi.transpose())).norm())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvarianceOptions {
    pub n_traj: usize,
    pub horizon: f64,
    /// Allowed distance outside `B₁₆`.
    pub excursion_tol: f64,
    /// `V` must stay above `η·(1 - v_tol)`.
    pub v_tol: f64,
    pub seed: u64,
    pub solver: SolverOptions,
}

impl Default for InvarianceOptions {
    fn default() -> Self {
        Self {
            n_traj: 100,
            horizon: 500.0,
            excursion_tol: 1e-6,
            v_tol: 1e-3,
            seed: 0,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartCheck {
    pub start: Vec3,
    /// Reason the start lies outside `H_η`; such starts are not integrated.
    pub excluded: Option<String>,
    pub max_excursion: f64,
    pub min_v: f64,
    pub min_distance_to_e: f64,
    pub left_box: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub n_checked: usize,
    pub n_excluded: usize,
    pub horizon: f64,
    pub eta: f64,
    pub max_excursion: f64,
    pub min_v: f64,
    pub min_v_ratio: f64,
    pub min_distance_to_e: f64,
    pub excursion_ok: bool,
    pub v_ok: bool,
    pub starts: Vec<StartCheck>,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.excursion_ok && self.v_ok
    }
}

/// Integrates from each start (original coordinates) and records the
/// largest distance outside `B₁₆`, the smallest `V` and the smallest
/// distance to the equilibrium. `part` is the cooperative partition.
pub fn verify_invariance_from(
    model: &SystemModel,
    part: &BoxPartition,
    cert: &InvariantSetCert,
    starts: &[Vec3],
    opts: &InvarianceOptions,
) -> Result<InvarianceReport> {
    let view = model.cooperative_view();
    let d = model.signature;
    let checks = parallel::map(starts, |x0| -> Result<StartCheck> {
        let y0 = d.component_mul(x0);
        let mut c = StartCheck {
            start: *x0,
            excluded: None,
            max_excursion: 0.0,
            min_v: f64::INFINITY,
            min_distance_to_e: f64::INFINITY,
            left_box: false,
        };
        if !b16_contains(part, &y0) {
            c.excluded = Some("start is outside B16".into());
            return Ok(c);
        }
        if cert.v_y(&y0) <= cert.eta {
            c.excluded = Some("start has V <= eta (outside H_eta)".into());
            return Ok(c);
        }
        let tr = sim::integrate_with(&view, y0, opts.horizon, &opts.solver, sim::Sampling::Steps)?;
        c.left_box = tr.box_exit.is_some();
        for y in &tr.states {
            c.max_excursion = c.max_excursion.max(part.distance_to_b16(y));
            c.min_v = c.min_v.min(cert.v_y(y));
            c.min_distance_to_e = c.min_distance_to_e.min((y - cert.e_y).norm());
        }
        Ok(c)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let used: Vec<&StartCheck> = checks.iter().filter(|c| c.excluded.is_none()).collect();
    let max_excursion = used.iter().map(|c| c.max_excursion).fold(0.0, f64::max);
    let min_v = used.iter().map(|c| c.min_v).fold(f64::INFINITY, f64::min);
    let min_dist = used
        .iter()
        .map(|c| c.min_distance_to_e)
        .fold(f64::INFINITY, f64::min);
    let any_exit = used.iter().any(|c| c.left_box);
    Ok(InvarianceReport {
        n_checked: used.len(),
        n_excluded: checks.len() - used.len(),
        horizon: opts.horizon,
        eta: cert.eta,
        max_excursion,
        min_v,
        min_v_ratio: min_v / cert.eta,
        min_distance_to_e: min_dist,
        excursion_ok: !any_exit && max_excursion <= opts.excursion_tol,
        v_ok: min_v > cert.eta * (1.0 - opts.v_tol),
        starts: checks,
    })
}

/// Uniform samples from `H_η` by rejection, in original coordinates.
pub fn sample_h_eta(
    model: &SystemModel,
    part: &BoxPartition,
    cert: &InvariantSetCert,
    n: usize,
    seed: u64,
) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = &model.bounds;
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n && attempts < 1000 * n.max(1) {
        attempts += 1;
        let x = Vec3::from_fn(|i, _| rng.gen_range(b.lower[i]..=b.upper[i]));
        if cert.contains(part, &x) {
            out.push(x);
        }
    }
    out
}

/// Random starts in `H_η`, then [`verify_invariance_from`].
pub fn verify_invariance(
    model: &SystemModel,
    part: &BoxPartition,
    cert: &InvariantSetCert,
    opts: &InvarianceOptions,
) -> Result<InvarianceReport> {
    let starts = sample_h_eta(model, part, cert, opts.n_traj, opts.seed);
    verify_invariance_from(model, part, cert, &starts, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityViolation {
    pub a: Vec3,
    pub b: Vec3,
    pub t: f64,
    pub s_plus: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub n_pairs: usize,
    pub n_samples: usize,
    pub horizon: f64,
    pub violations: Vec<MonotonicityViolation>,
}

/// Random pairs `a, b` in the box with `s⁻(D(a - b)) <= 1`; counts samples
/// with `t > 0` where `s⁺(D(x(t,a) - x(t,b))) > 1`.
pub fn flow_monotonicity(
    model: &SystemModel,
    n_pairs: usize,
    horizon: f64,
    n_samples: usize,
    seed: u64,
    solver: &SolverOptions,
) -> Result<MonotonicityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bx = &model.bounds;
    let mut pairs = Vec::with_capacity(n_pairs);
    while pairs.len() < n_pairs {
        let a = Vec3::from_fn(|i, _| rng.gen_range(bx.lower[i]..=bx.upper[i]));
        let b = Vec3::from_fn(|i, _| rng.gen_range(bx.lower[i]..=bx.upper[i]));
        let z = (a - b).component_mul(&model.signature);
        if a != b && signvar::s_minus(z.as_slice()) <= 1 {
            pairs.push((a, b));
        }
    }
    let results = parallel::map(&pairs, |(a, b)| {
        sim::pair_sign_variation_series_with(model, *a, *b, horizon, n_samples, solver).map(|series| {
            series
                .into_iter()
                .filter(|s| s.t > 0.0 && s.s_plus > 1)
                .map(|s| MonotonicityViolation {
                    a: *a,
                    b: *b,
                    t: s.t,
                    s_plus: s.s_plus,
                })
                .collect::<Vec<_>>()
        })
    });
    let mut violations = Vec::new();
    for r in results {
        violations.extend(r?);
    }
    Ok(MonotonicityReport {
        n_pairs,
        n_samples,
        horizon,
        violations,
    })
}

/// `true` if once `s⁻ <= 1` at some sample, `s⁺ <= 1` at every later one.
pub fn once_below_stays_below(series: &[sim::SignVariationSample]) -> bool {
    match series.iter().position(|s| s.s_minus <= 1) {
        Some(i) => series[i + 1..].iter().all(|s| s.s_plus <= 1),
        None => true,
    }
}
