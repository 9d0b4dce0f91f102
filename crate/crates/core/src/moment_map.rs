//! One-dimensional moment maps: convex φ such that `e^{-φ}` is a centred
//! probability density pushed onto the target by `φ'`.
//!
//! In 1D the Monge–Ampère equation `e^{-φ} = ρ(φ')φ''` is a second-order ODE in
//! `(φ, p = φ')`. Solutions form a one-parameter family of translates. The
//! solver integrates each half inward from deep in the tail, where
//! `∫_x^∞ e^{-φ} = S_μ(φ'(x))` gives `φ` in terms of `φ'` to leading order, and
//! tunes `φ'` at the tail start so that `φ'` vanishes at the mode `x₀`. Errors
//! in the tail start decay like `exp(-(x_s² - x²)/2)` going inward.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{Factor, MeasureSpec};

const DEFAULT_NODES: usize = 4097;
const DEFAULT_HALF_WIDTH: f64 = 8.0;
/// Extra source standard deviations between the grid end and the tail start.
const TAIL_MARGIN: f64 = 4.0;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridSpec {
    /// Number of grid nodes (odd keeps 0 on the grid).
    pub nodes: usize,
    /// Grid half-width in units of the source scale `1/σ_target`.
    pub half_width: f64,
    /// Local error tolerance of the Runge–Kutta integrator.
    pub tol: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { nodes: DEFAULT_NODES, half_width: DEFAULT_HALF_WIDTH, tol: 1e-12 }
    }
}

#[derive(Debug, Clone)]
pub struct MomentMap1D {
    pub grid: Vec<f64>,
    pub phi: Vec<f64>,
    pub phi_prime: Vec<f64>,
    pub phi_second: Vec<f64>,
    /// CDF of `e^{-φ}`, by quadrature of the stored `φ`.
    pub source_cdf: Vec<f64>,
    pub target: Factor,
    /// Total source mass `∫e^{-φ}` including the tails beyond the grid.
    pub mass: f64,
    /// `∫x e^{-φ}`.
    pub source_mean: f64,
    /// Location of the minimum of `φ`.
    pub mode: f64,
    /// Mismatch of `φ(x₀)` between the two shooting halves.
    pub seam_gap: f64,
}

#[derive(Debug, Clone)]
pub struct MomentMapProduct {
    pub factors: Vec<MomentMap1D>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MapResiduals {
    pub monge_ampere: f64,
    pub pushforward: f64,
    /// Consistency of the stored `φ, φ', φ''` as successive derivatives.
    pub derivative: f64,
    pub mass_error: f64,
    pub centering: f64,
    pub seam_gap: f64,
    pub cdf_lo: f64,
    pub cdf_hi: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HessianBounds {
    pub alpha: f64,
    pub min_phi_second: f64,
    pub max_phi_second: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub pass: bool,
}

/// Tolerance for accepting a solved map.
pub const ACCEPT_TOL: f64 = 1e-6;

type State = [f64; 2];

/// Target seen through `y ↦ sign·y`, so that the left half of a solve is the
/// right half of the mirrored problem.
struct Side<'a> {
    target: &'a Factor,
    sign: f64,
}

impl Side<'_> {
    fn log_pdf(&self, y: f64) -> f64 {
        self.target.log_pdf(self.sign * y)
    }

    fn ln_sf(&self, y: f64) -> f64 {
        let s = if self.sign > 0.0 { self.target.sf(y) } else { self.target.cdf(-y) };
        s.ln()
    }

    fn rhs(&self, y: &State) -> Option<State> {
        let e = -y[0] - self.log_pdf(y[1]);
        if e > 700.0 || !e.is_finite() {
            return None;
        }
        Some([y[1], e.exp()])
    }
}

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand–Prince step; returns the 5th-order state and the error norm.
fn dp_step(side: &Side, y: &State, h: f64, tol: f64) -> Option<(State, f64)> {
    let mut k = [[0.0; 2]; 7];
    for s in 0..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            ys[0] += h * A[s][j] * kj[0];
            ys[1] += h * A[s][j] * kj[1];
        }
        k[s] = side.rhs(&ys)?;
    }
    let mut y5 = *y;
    let mut err = 0.0f64;
    for c in 0..2 {
        let mut e = 0.0;
        for s in 0..7 {
            // the 5th-order weights are the last stage row (FSAL), zero for stage 7
            let b5 = if s < 6 { A[6][s] } else { 0.0 };
            y5[c] += h * b5 * k[s][c];
            e += h * (b5 - B4[s]) * k[s][c];
        }
        err = err.max(e.abs() / (tol + tol * y[c].abs().max(y5[c].abs())));
    }
    if !(y5[0].is_finite() && y5[1].is_finite()) {
        return None;
    }
    Some((y5, err))
}

enum Shot {
    /// State at each requested stop, plus the final state at `x₀`.
    Reached(Vec<State>),
    /// `φ'` ran far below zero before reaching `x₀`.
    Under,
}

/// Integrate from `(x_s, y_s)` down through `stops` (decreasing, last one `x₀`).
fn shoot(side: &Side, x_s: f64, y_s: f64, stops: &[f64], tol: f64) -> Result<Shot> {
    let phi_s = -(y_s.ln() + side.ln_sf(y_s));
    if !phi_s.is_finite() {
        return Err(Error::Shooting(format!("tail survival underflows at y = {y_s:.3e}")));
    }
    let floor = -y_s.abs() - 1.0;
    let mut y: State = [phi_s, y_s];
    let mut x = x_s;
    let mut h = -1e-3 * (x_s - stops.last().copied().unwrap_or(0.0)).abs().max(1e-3);
    let mut out = Vec::with_capacity(stops.len());
    let mut steps = 0usize;
    for &target in stops {
        while x > target {
            steps += 1;
            if steps > 2_000_000 {
                return Err(Error::Shooting("step budget exhausted".into()));
            }
            let last = h.abs() >= x - target;
            let step = if last { target - x } else { h };
            match dp_step(side, &y, step, tol) {
                None => return Ok(Shot::Under),
                Some((next, err)) => {
                    if err <= 1.0 {
                        y = next;
                        x = if last { target } else { x + step };
                        if y[1] < floor {
                            return Ok(Shot::Under);
                        }
                    }
                    let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    if !(last && err <= 1.0) {
                        h = step * factor;
                    }
                    if h.abs() < 1e-14 {
                        return Err(Error::Shooting(format!("step size underflow at x = {x:.6}")));
                    }
                }
            }
        }
        out.push(y);
    }
    Ok(Shot::Reached(out))
}

/// Solve one half: returns states at `stops` (descending, ending at `x₀`).
fn solve_half(side: &Side, x_s: f64, stops: &[f64], alpha: f64, tol: f64) -> Result<Vec<State>> {
    let x0 = *stops.last().expect("stops end at the mode");
    let span = x_s - x0;
    let p_end = |y_s: f64| -> Result<f64> {
        Ok(match shoot(side, x_s, y_s, &[x0], tol)? {
            Shot::Reached(v) => v[0][1],
            Shot::Under => f64::NEG_INFINITY,
        })
    };
    let (mut lo, mut hi) = (0.9 * alpha * span, 1.1 * span / alpha);
    let mut tries = 0;
    while p_end(lo)? >= 0.0 {
        lo *= 0.5;
        tries += 1;
        if tries > 40 {
            return Err(Error::Shooting("no lower bracket for the tail slope".into()));
        }
    }
    while p_end(hi)? <= 0.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 40 {
            return Err(Error::Shooting("no upper bracket for the tail slope".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if p_end(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (a, b) = (shoot(side, x_s, lo, stops, tol)?, shoot(side, x_s, hi, stops, tol)?);
    match (a, b) {
        (Shot::Reached(a), Shot::Reached(b)) => {
            // the two bracket ends differ by one ulp in y_s; pick the one closer to p(x₀) = 0
            let (pa, pb) = (a.last().unwrap()[1].abs(), b.last().unwrap()[1].abs());
            Ok(if pa <= pb { a } else { b })
        }
        (Shot::Reached(a), Shot::Under) => Ok(a),
        (Shot::Under, Shot::Reached(b)) => Ok(b),
        _ => Err(Error::Shooting("both bracket ends blew up".into())),
    }
}

fn check_target(target: &Factor) -> Result<()> {
    let sd = target.variance().sqrt();
    if target.mean().abs() > 1e-8 * sd {
        return Err(Error::invalid(format!("moment maps need a centred target (mean {})", target.mean())));
    }
    if let Factor::Gibbs(g) = target {
        let (lo, _) = g.curvature_range();
        if !(lo > 0.0) {
            return Err(Error::NotLogConcave(format!("min V'' = {lo}")));
        }
    }
    Ok(())
}

fn uniform_grid(half: f64, nodes: usize) -> Vec<f64> {
    let h = 2.0 * half / (nodes - 1) as f64;
    (0..nodes).map(|i| -half + i as f64 * h).collect()
}

fn solve_at_mode(target: &Factor, grid: &[f64], x0: f64, x_s: f64, tol: f64) -> Result<MomentMap1D> {
    let alpha = target.alpha().min(1.0);
    let right_stops: Vec<f64> = grid.iter().rev().copied().filter(|&x| x >= x0).chain([x0]).collect();
    let left_stops: Vec<f64> = grid.iter().copied().filter(|&x| x < x0).map(|x| -x).chain([-x0]).collect();
    let (right, left) = rayon::join(
        || solve_half(&Side { target, sign: 1.0 }, x_s, &right_stops, alpha, tol),
        || solve_half(&Side { target, sign: -1.0 }, x_s, &left_stops, alpha, tol),
    );
    let (right, left) = (right?, left?);
    let seam_gap = (right.last().unwrap()[0] - left.last().unwrap()[0]).abs();

    let n = grid.len();
    let n_left = left.len() - 1;
    let mut phi = Vec::with_capacity(n);
    let mut dphi = Vec::with_capacity(n);
    for s in left[..n_left].iter() {
        phi.push(s[0]);
        dphi.push(-s[1]);
    }
    for s in right[..right.len() - 1].iter().rev() {
        phi.push(s[0]);
        dphi.push(s[1]);
    }
    debug_assert_eq!(phi.len(), n);
    let d2: Vec<f64> = phi.iter().zip(&dphi).map(|(f, p)| (-f - target.log_pdf(*p)).exp()).collect();
    let mut map = MomentMap1D::from_parts(grid.to_vec(), phi, dphi, d2, target.clone())?;
    map.mode = x0;
    map.seam_gap = seam_gap;
    Ok(map)
}

/// Solve the moment map of a one-dimensional, centred, log-concave target.
pub fn solve_moment_map_1d(target: &MeasureSpec, spec: GridSpec) -> Result<MomentMap1D> {
    let f = target
        .univariate()
        .ok_or_else(|| Error::invalid(format!("moment maps need a 1D target, got {}", target.describe())))?;
    solve_factor(&f, spec)
}

pub fn solve_factor(target: &Factor, spec: GridSpec) -> Result<MomentMap1D> {
    check_target(target)?;
    if spec.nodes < 3 {
        return Err(Error::invalid("grid needs at least 3 nodes"));
    }
    if !(spec.half_width > 0.0 && spec.tol > 0.0) {
        return Err(Error::invalid("grid half-width and tolerance must be positive"));
    }
    // the source scale is the reciprocal of the target scale (φ = s x²/2 for N(0, s))
    let w = 1.0 / target.variance().sqrt();
    let grid = uniform_grid(spec.half_width * w, spec.nodes);
    let x_s = (spec.half_width + TAIL_MARGIN) * w;
    let first = solve_at_mode(target, &grid, 0.0, x_s, spec.tol)?;
    if first.source_mean.abs() <= 1e-12 * w {
        return Ok(first);
    }
    solve_at_mode(target, &grid, -first.source_mean, x_s, spec.tol)
}

pub fn solve_moment_map_product(target: &MeasureSpec, spec: GridSpec) -> Result<MomentMapProduct> {
    let factors = target
        .factors()
        .ok_or_else(|| Error::invalid(format!("{} is not a product measure", target.describe())))?;
    let maps: Result<Vec<_>> = factors.par_iter().map(|f| solve_factor(f, spec)).collect();
    tensorize(maps?)
}

pub fn tensorize(factors: Vec<MomentMap1D>) -> Result<MomentMapProduct> {
    if factors.is_empty() {
        return Err(Error::invalid("tensorize needs at least one factor"));
    }
    Ok(MomentMapProduct { factors })
}

/// `∫_a^b f` from endpoint values and derivatives (corrected trapezoid).
fn hermite_cell(h: f64, f0: f64, f1: f64, d0: f64, d1: f64) -> f64 {
    0.5 * h * (f0 + f1) + h * h / 12.0 * (d0 - d1)
}

impl MomentMap1D {
    /// Assemble a map from grid samples; the source CDF, mass and mean are
    /// recomputed from `φ` by quadrature.
    pub fn from_parts(
        grid: Vec<f64>,
        phi: Vec<f64>,
        phi_prime: Vec<f64>,
        phi_second: Vec<f64>,
        target: Factor,
    ) -> Result<Self> {
        let n = grid.len();
        if n < 3 || phi.len() != n || phi_prime.len() != n || phi_second.len() != n {
            return Err(Error::invalid("grid arrays must share a length of at least 3"));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("grid must be strictly increasing"));
        }
        if let Some(i) = phi_second.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::NotLogConcave(format!("φ'' = {} at x = {}", phi_second[i], grid[i])));
        }
        let dens: Vec<f64> = phi.iter().map(|f| (-f).exp()).collect();
        // (e^{-φ})' = -φ' e^{-φ}, (x e^{-φ})' = (1 - xφ') e^{-φ}
        let mills = |k: usize| dens[k] / phi_prime[k].abs();
        let left_tail = mills(0);
        let right_tail = mills(n - 1);
        let mut cdf = vec![0.0; n];
        cdf[0] = left_tail;
        let mut mean = grid[0] * left_tail + grid[n - 1] * right_tail;
        for i in 0..n - 1 {
            let h = grid[i + 1] - grid[i];
            let (d0, d1) = (-phi_prime[i] * dens[i], -phi_prime[i + 1] * dens[i + 1]);
            cdf[i + 1] = cdf[i] + hermite_cell(h, dens[i], dens[i + 1], d0, d1);
            let (x0, x1) = (grid[i], grid[i + 1]);
            mean += hermite_cell(
                h,
                x0 * dens[i],
                x1 * dens[i + 1],
                (1.0 - x0 * phi_prime[i]) * dens[i],
                (1.0 - x1 * phi_prime[i + 1]) * dens[i + 1],
            );
        }
        let mass = cdf[n - 1] + right_tail;
        // mode estimate: sign change of φ'
        let k = phi_prime.partition_point(|p| *p < 0.0).clamp(1, n - 1);
        let (p0, p1) = (phi_prime[k - 1], phi_prime[k]);
        let mode = if p1 > p0 { grid[k - 1] - p0 * (grid[k] - grid[k - 1]) / (p1 - p0) } else { grid[k] };
        Ok(MomentMap1D {
            grid,
            phi,
            phi_prime,
            phi_second,
            source_cdf: cdf,
            target,
            mass,
            source_mean: mean,
            mode,
            seam_gap: 0.0,
        })
    }

    /// The exact map of `N(0, s)`: `φ = s x²/2 + ln√(2π/s)`.
    pub fn gaussian(s: f64, spec: GridSpec) -> Result<Self> {
        if !(s > 0.0) {
            return Err(Error::invalid(format!("variance {s} must be positive")));
        }
        let grid = uniform_grid(spec.half_width / s.sqrt(), spec.nodes);
        let c = 0.5 * (2.0 * std::f64::consts::PI / s).ln();
        let phi = grid.iter().map(|x| 0.5 * s * x * x + c).collect();
        let dphi = grid.iter().map(|x| s * x).collect();
        let d2 = vec![s; grid.len()];
        Self::from_parts(grid, phi, dphi, d2, Factor::Normal { mean: 0.0, sd: s.sqrt() })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// `φ'''` from the ODE: `φ''·(-φ' - (ln ρ)'(φ')·φ'')`.
    fn third(&self, i: usize) -> f64 {
        let (dl, _) = self.target.dlog_pdf(self.phi_prime[i]);
        self.phi_second[i] * (-self.phi_prime[i] - dl * self.phi_second[i])
    }

    pub fn residuals(&self) -> MapResiduals {
        let n = self.len();
        let mut deriv = 0.0f64;
        for i in 0..n - 1 {
            let h = self.grid[i + 1] - self.grid[i];
            let dp = self.phi_prime[i + 1] - self.phi_prime[i];
            let ip = hermite_cell(h, self.phi_second[i], self.phi_second[i + 1], self.third(i), self.third(i + 1));
            let df = self.phi[i + 1] - self.phi[i];
            let iff = hermite_cell(
                h,
                self.phi_prime[i],
                self.phi_prime[i + 1],
                self.phi_second[i],
                self.phi_second[i + 1],
            );
            deriv = deriv.max(((dp - ip) / h).abs()).max(((df - iff) / h).abs());
        }
        MapResiduals {
            monge_ampere: monge_ampere_residual(self),
            pushforward: pushforward_residual(self),
            derivative: deriv,
            mass_error: (self.mass - 1.0).abs(),
            centering: self.source_mean.abs(),
            seam_gap: self.seam_gap,
            cdf_lo: self.source_cdf[0],
            cdf_hi: 1.0 - self.source_cdf[n - 1],
        }
    }

    /// Whether every residual is within [`ACCEPT_TOL`] and the source tails are below 1e-8.
    pub fn accepted(&self) -> bool {
        let r = self.residuals();
        r.monge_ampere < ACCEPT_TOL
            && r.pushforward < ACCEPT_TOL
            && r.derivative < ACCEPT_TOL
            && r.mass_error < ACCEPT_TOL
            && r.centering < ACCEPT_TOL
            && r.seam_gap < ACCEPT_TOL
            && r.cdf_lo < 1e-8
            && r.cdf_hi < 1e-8
    }

    /// Write `x, phi, phi_prime, phi_second, G` rows.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "phi", "phi_prime", "phi_second", "G"])?;
        for i in 0..self.len() {
            out.write_record(&[
                format!("{:.17e}", self.grid[i]),
                format!("{:.17e}", self.phi[i]),
                format!("{:.17e}", self.phi_prime[i]),
                format!("{:.17e}", self.phi_second[i]),
                format!("{:.17e}", self.source_cdf[i]),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `sup |e^{-φ} - ρ(φ')φ''| / max(e^{-φ}, 1e-300)` over the grid.
pub fn monge_ampere_residual(map: &MomentMap1D) -> f64 {
    (0..map.len())
        .map(|i| {
            let lhs = (-map.phi[i]).exp();
            let rhs = map.target.pdf(map.phi_prime[i]) * map.phi_second[i];
            (lhs - rhs).abs() / lhs.max(1e-300)
        })
        .fold(0.0, f64::max)
}

/// `sup |F_μ(φ'(x)) - G(x)|` over the grid.
pub fn pushforward_residual(map: &MomentMap1D) -> f64 {
    (0..map.len())
        .map(|i| (map.target.cdf(map.phi_prime[i]) - map.source_cdf[i]).abs())
        .fold(0.0, f64::max)
}

/// Check `α ≤ φ'' ≤ 1/α` on the grid with tolerance 1e-6.
pub fn hessian_bounds_check(map: &MomentMap1D, alpha: f64) -> HessianBounds {
    let min = map.phi_second.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = map.phi_second.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lower_ok = min >= alpha - ACCEPT_TOL;
    let upper_ok = max <= 1.0 / alpha + ACCEPT_TOL;
    HessianBounds { alpha, min_phi_second: min, max_phi_second: max, lower_ok, upper_ok, pass: lower_ok && upper_ok }
}

impl MomentMapProduct {
    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn pushforward_residual(&self) -> f64 {
        self.factors.iter().map(pushforward_residual).fold(0.0, f64::max)
    }

    pub fn monge_ampere_residual(&self) -> f64 {
        self.factors.iter().map(monge_ampere_residual).fold(0.0, f64::max)
    }

    pub fn accepted(&self) -> bool {
        self.factors.iter().all(MomentMap1D::accepted)
    }
}
