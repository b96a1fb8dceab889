//! Residuals for the conduction PDE, the convective boundary conditions and
//! the initial condition, the λ-weighted composite loss, and the adaptive
//! normalization-factor update.
//!
//! Everything here works in nondimensional variables: x̂, ŷ ∈ [0,1],
//! t̂ = t/t_ref, T̂ = T/T_ref, ĥ = h/h_ref. The PDE residual is
//! α̂x·∂²f/∂x̂² (+ α̂y·∂²f/∂ŷ²) − ∂f/∂t̂ with α̂ = α·t_ref/L², and the
//! convective residual carries k/(h·L) on the gradient term, with the
//! spatial derivative taken along the outward normal of each face.

use crate::autodiff::{EvalResult, InputPoint, JetParts};
use crate::error::{CoreError, Result};
use crate::physics::AirProfile;
use serde::{Deserialize, Serialize};

/// Domain face identifier. 1D problems use X0 (x̂ = 0) and X1 (x̂ = 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideId {
    X0,
    X1,
    Y0,
    Y1,
}

/// One term of the composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    Pde,
    Initial,
    Side(SideId),
}

impl TermKind {
    /// Stable short name used in logs and CSV columns.
    pub fn name(&self) -> &'static str {
        match self {
            TermKind::Pde => "pde",
            TermKind::Initial => "bc0",
            TermKind::Side(SideId::X0) => "bc1",
            TermKind::Side(SideId::X1) => "bc2",
            TermKind::Side(SideId::Y0) => "bc3",
            TermKind::Side(SideId::Y1) => "bc4",
        }
    }
}

/// Where a boundary point's heat transfer coefficient comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HSource {
    /// Fixed nondimensional coefficient ĥ = h/h_ref.
    Fixed(f64),
    /// Read the point's ĥ1 (network input mode).
    PointH1,
    /// Read the point's ĥ2.
    PointH2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideCondition {
    Convective { h: HSource },
    /// Zero-gradient residual ∂f/∂n = 0 (the convective form is undefined at h = 0).
    Insulated,
}

/// Nondimensional PDE coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeCoeffs {
    /// α·t_ref/Lx².
    pub alpha_x: f64,
    /// α·t_ref/Ly² for 2D problems.
    pub alpha_y: Option<f64>,
}

/// Air profile bridged into nondimensional time and temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct NondimAir {
    pub profile: AirProfile,
    pub time_ref_s: f64,
    pub temp_ref: f64,
}

impl NondimAir {
    pub fn hat_at(&self, t_hat: f64) -> Result<f64> {
        let t_min = t_hat * self.time_ref_s / 60.0;
        Ok(self.profile.temperature(t_min)? / self.temp_ref)
    }
}

/// Everything needed to evaluate all residuals of one training problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LossDefinition {
    pub pde: PdeCoeffs,
    /// Faces and their conditions, in canonical order (X0, X1[, Y0, Y1]).
    pub sides: Vec<(SideId, SideCondition)>,
    /// Part conductivity k, W/(m·K).
    pub conductivity: f64,
    /// Reference h used for ĥ scaling, W/(m²·K).
    pub h_ref: f64,
    /// Physical lengths backing x̂ and ŷ, m.
    pub length_x: f64,
    pub length_y: Option<f64>,
    pub air: NondimAir,
}

impl LossDefinition {
    /// Canonical term ordering: PDE, initial condition, then sides.
    pub fn term_kinds(&self) -> Vec<TermKind> {
        let mut terms = vec![TermKind::Pde, TermKind::Initial];
        terms.extend(self.sides.iter().map(|(s, _)| TermKind::Side(*s)));
        terms
    }

    pub fn air_hat_at(&self, t_hat: f64) -> Result<f64> {
        self.air.hat_at(t_hat)
    }

    fn side_condition(&self, side: SideId) -> Result<SideCondition> {
        self.sides
            .iter()
            .find(|(s, _)| *s == side)
            .map(|(_, c)| *c)
            .ok_or_else(|| CoreError::contract(format!("loss definition has no side {side:?}")))
    }

    fn side_length(&self, side: SideId) -> f64 {
        match side {
            SideId::X0 | SideId::X1 => self.length_x,
            SideId::Y0 | SideId::Y1 => self.length_y.expect("y side on a 1D problem"),
        }
    }
}

/// PDE residual and seed from raw jet components.
pub(crate) fn pde_residual_parts(parts: &JetParts, coeffs: &PdeCoeffs) -> Result<(f64, JetParts)> {
    let mut r = coeffs.alpha_x * parts.dxx - parts.dt;
    let mut seed = JetParts { dxx: coeffs.alpha_x, dt: -1.0, ..JetParts::default() };
    if let Some(ay) = coeffs.alpha_y {
        r += ay * parts.dyy;
        seed.dyy = ay;
    }
    Ok((r, seed))
}

/// Initial-condition residual T̂∞(0) − f and its seed.
pub(crate) fn ic_residual_parts(parts: &JetParts, t_inf_zero_hat: f64) -> (f64, JetParts) {
    (
        t_inf_zero_hat - parts.v,
        JetParts { v: -1.0, ..JetParts::default() },
    )
}

/// Boundary residual and seed at a face, resolving ĥ from the side condition.
pub(crate) fn bc_residual_parts(
    side: SideId,
    parts: &JetParts,
    point: &InputPoint,
    t_inf_hat: f64,
    def: &LossDefinition,
) -> Result<(f64, JetParts)> {
    let (grad, seed_grad): (f64, fn(f64) -> JetParts) = match side {
        SideId::X0 | SideId::X1 => (parts.dx, |c| JetParts { dx: c, ..JetParts::default() }),
        SideId::Y0 | SideId::Y1 => (parts.dy, |c| JetParts { dy: c, ..JetParts::default() }),
    };
    // +1 on the low faces where the outward normal is −x̂/−ŷ
    let normal_flip = match side {
        SideId::X0 | SideId::Y0 => 1.0,
        SideId::X1 | SideId::Y1 => -1.0,
    };
    match def.side_condition(side)? {
        SideCondition::Insulated => {
            // outward-normal gradient must vanish
            let r = -normal_flip * grad;
            Ok((r, seed_grad(-normal_flip)))
        }
        SideCondition::Convective { h } => {
            let h_hat = match h {
                HSource::Fixed(v) => v,
                HSource::PointH1 => point.h1,
                HSource::PointH2 => point.h2,
            };
            if !(h_hat > 0.0) {
                return Err(CoreError::contract(
                    "convective residual needs h > 0; use the insulated condition (FE oracle) otherwise",
                ));
            }
            let kappa = def.conductivity / (def.h_ref * h_hat * def.side_length(side));
            // low face:  −(T̂∞ − f) − κ ∂f/∂x̂ ;  high face: (T̂∞ − f) − κ ∂f/∂x̂
            let r = normal_flip * (-(t_inf_hat - parts.v)) - kappa * grad;
            let mut seed = seed_grad(-kappa);
            seed.v = normal_flip;
            Ok((r, seed))
        }
    }
}

fn parts_from_eval(eval: &EvalResult) -> JetParts {
    JetParts {
        v: eval.value,
        dx: eval.d_dx.unwrap_or(0.0),
        dy: eval.d_dy.unwrap_or(0.0),
        dt: eval.d_dt.unwrap_or(0.0),
        dxx: eval.d2_dx2.unwrap_or(0.0),
        dyy: eval.d2_dy2.unwrap_or(0.0),
    }
}

/// PDE residual α̂x·∂²f/∂x̂² (+ α̂y·∂²f/∂ŷ²) − ∂f/∂t̂ from an evaluation.
pub fn pde_residual(eval: &EvalResult, coeffs: &PdeCoeffs) -> Result<f64> {
    if eval.d_dt.is_none() || eval.d2_dx2.is_none() {
        return Err(CoreError::contract("pde_residual needs d_dt and d2_dx2"));
    }
    if coeffs.alpha_y.is_some() && eval.d2_dy2.is_none() {
        return Err(CoreError::contract("2D pde_residual needs d2_dy2"));
    }
    Ok(pde_residual_parts(&parts_from_eval(eval), coeffs)?.0)
}

/// Per-side coefficients for the standalone boundary residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcCoeffs {
    pub conductivity: f64,
    pub h_ref: f64,
    /// Physical length backing the side's coordinate, m.
    pub length: f64,
}

/// Convective boundary residual at a face. `h_hat` must be positive; the
/// h = 0 (insulated) case is not expressible in this form.
pub fn bc_residual(
    side: SideId,
    eval: &EvalResult,
    t_inf_hat: f64,
    h_hat: f64,
    coeffs: &BcCoeffs,
) -> Result<f64> {
    if !(h_hat > 0.0) {
        return Err(CoreError::contract(
            "convective residual needs h > 0; use the insulated condition (FE oracle) otherwise",
        ));
    }
    let grad = match side {
        SideId::X0 | SideId::X1 => eval
            .d_dx
            .ok_or_else(|| CoreError::contract("bc_residual needs d_dx"))?,
        SideId::Y0 | SideId::Y1 => eval
            .d_dy
            .ok_or_else(|| CoreError::contract("bc_residual needs d_dy"))?,
    };
    let normal_flip = match side {
        SideId::X0 | SideId::Y0 => 1.0,
        SideId::X1 | SideId::Y1 => -1.0,
    };
    let kappa = coeffs.conductivity / (coeffs.h_ref * h_hat * coeffs.length);
    Ok(normal_flip * (-(t_inf_hat - eval.value)) - kappa * grad)
}

/// Initial-condition residual T̂∞(0) − f(x̂, 0, ĥ1, ĥ2).
pub fn ic_residual(eval: &EvalResult, t_inf_zero_hat: f64) -> f64 {
    t_inf_zero_hat - eval.value
}

/// Collocation points for one epoch, one list per loss term.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationBatch {
    pub interior: Vec<InputPoint>,
    pub sides: Vec<(SideId, Vec<InputPoint>)>,
    pub initial: Vec<InputPoint>,
}

impl CollocationBatch {
    pub fn points_for(&self, term: TermKind) -> Option<&Vec<InputPoint>> {
        match term {
            TermKind::Pde => Some(&self.interior),
            TermKind::Initial => Some(&self.initial),
            TermKind::Side(side) => self
                .sides
                .iter()
                .find(|(s, _)| *s == side)
                .map(|(_, pts)| pts),
        }
    }
}

/// Per-term mean-squared losses, normalization factors, and their λ-weighted sum.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub terms: Vec<TermKind>,
    pub losses: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub composite: f64,
}

impl LossBreakdown {
    pub fn new(terms: Vec<TermKind>, losses: Vec<f64>, lambdas: Vec<f64>) -> Self {
        debug_assert_eq!(terms.len(), losses.len());
        debug_assert_eq!(terms.len(), lambdas.len());
        let composite = losses.iter().zip(&lambdas).map(|(l, lam)| l * lam).sum();
        Self { terms, losses, lambdas, composite }
    }

    pub fn loss_of(&self, term: TermKind) -> Option<f64> {
        self.terms.iter().position(|t| *t == term).map(|i| self.losses[i])
    }
}

/// Mean-squared losses from raw residual lists, combined per the composite rule.
pub fn composite_loss(
    terms: &[TermKind],
    residuals: &[Vec<f64>],
    lambdas: &[f64],
) -> Result<LossBreakdown> {
    if terms.len() != residuals.len() || terms.len() != lambdas.len() {
        return Err(CoreError::contract("terms, residual lists, and lambdas must align"));
    }
    let mut losses = Vec::with_capacity(terms.len());
    for (term, list) in terms.iter().zip(residuals) {
        if list.is_empty() {
            return Err(CoreError::contract(format!("empty residual list for {term:?}")));
        }
        losses.push(list.iter().map(|r| r * r).sum::<f64>() / list.len() as f64);
    }
    Ok(LossBreakdown::new(terms.to_vec(), losses, lambdas.to_vec()))
}

/// Adaptive normalization: each term's λ is 1 when its loss is within
/// `threshold` of the largest term, and loss_ratio/threshold below that.
/// Zero-loss terms (and the all-zero case) get λ = 1: they are converged and
/// their gradient contribution vanishes regardless.
pub fn update_normalization(losses: &[f64], threshold: f64) -> Result<Vec<f64>> {
    if losses.is_empty() {
        return Err(CoreError::contract("update_normalization needs at least one loss"));
    }
    if !(threshold > 0.0) {
        return Err(CoreError::contract("threshold must be > 0"));
    }
    if losses.iter().any(|l| !l.is_finite() || *l < 0.0) {
        return Err(CoreError::contract("losses must be finite and non-negative"));
    }
    let max = losses.iter().cloned().fold(0.0_f64, f64::max);
    if max == 0.0 {
        return Ok(vec![1.0; losses.len()]);
    }
    Ok(losses
        .iter()
        .map(|&l| {
            if l == 0.0 {
                return 1.0;
            }
            let ratio = l / max;
            if ratio >= threshold {
                1.0
            } else {
                ratio / threshold
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn eval_1d(v: f64, dx: f64, dt: f64, dxx: f64) -> EvalResult {
        EvalResult {
            value: v,
            d_dx: Some(dx),
            d_dt: Some(dt),
            d2_dx2: Some(dxx),
            ..EvalResult::default()
        }
    }

    const COEFFS_1D: PdeCoeffs = PdeCoeffs { alpha_x: 1.0, alpha_y: None };

    #[test]
    fn pde_residual_constant_network() {
        let r = pde_residual(&eval_1d(0.7, 0.0, 0.0, 0.0), &COEFFS_1D).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn pde_residual_of_x_squared() {
        // f = x̂² → ∂²f/∂x̂² = 2, ∂f/∂t̂ = 0 → residual 2 at α̂ = 1
        let x = 0.4;
        let r = pde_residual(&eval_1d(x * x, 2.0 * x, 0.0, 2.0), &COEFFS_1D).unwrap();
        assert_eq!(r, 2.0);
    }

    #[test]
    fn pde_residual_of_exact_mode_vanishes() {
        // f = exp(−α̂ π² t̂)·cos(π x̂) solves the nondimensional PDE exactly
        let alpha = 0.83;
        let coeffs = PdeCoeffs { alpha_x: alpha, alpha_y: None };
        for &(x, t) in &[(0.1, 0.0), (0.37, 0.5), (0.9, 1.0)] {
            let decay = (-alpha * PI * PI * t).exp();
            let f = decay * (PI * x).cos();
            let d_dt = -alpha * PI * PI * f;
            let d2_dx2 = -PI * PI * f;
            let r = pde_residual(&eval_1d(f, 0.0, d_dt, d2_dx2), &coeffs).unwrap();
            assert!(r.abs() < 1e-12, "residual {r} at ({x},{t})");
        }
    }

    #[test]
    fn pde_residual_requires_derivatives() {
        let eval = EvalResult { value: 1.0, ..EvalResult::default() };
        assert!(pde_residual(&eval, &COEFFS_1D).is_err());
    }

    fn bc_coeffs(length: f64) -> BcCoeffs {
        BcCoeffs { conductivity: 0.47, h_ref: 100.0, length }
    }

    #[test]
    fn bc_residual_zero_when_surface_tracks_air() {
        let eval = eval_1d(1.0, 0.0, 0.0, 0.0);
        let c = bc_coeffs(0.01);
        assert_eq!(bc_residual(SideId::X0, &eval, 1.0, 1.0, &c).unwrap(), 0.0);
        assert_eq!(bc_residual(SideId::X1, &eval, 1.0, 0.5, &c).unwrap(), 0.0);
    }

    #[test]
    fn bc_residual_low_side_sign() {
        // side 1, f = 0, T̂∞ = 1, zero gradient → residual −1
        let eval = eval_1d(0.0, 0.0, 0.0, 0.0);
        let r = bc_residual(SideId::X0, &eval, 1.0, 1.0, &bc_coeffs(0.01)).unwrap();
        assert_eq!(r, -1.0);
        assert_eq!(r.abs(), 1.0);
    }

    #[test]
    fn bc_residual_gradient_weight_halves_with_doubled_h() {
        let eval = eval_1d(1.0, 0.8, 0.0, 0.0); // T̂∞ term vanishes, gradient term remains
        let c = bc_coeffs(0.01);
        let r1 = bc_residual(SideId::X1, &eval, 1.0, 1.0, &c).unwrap();
        let r2 = bc_residual(SideId::X1, &eval, 1.0, 2.0, &c).unwrap();
        assert!((r1 - 2.0 * r2).abs() < 1e-15);
    }

    #[test]
    fn bc_residual_rejects_zero_h() {
        let eval = eval_1d(0.0, 0.0, 0.0, 0.0);
        assert!(bc_residual(SideId::X0, &eval, 1.0, 0.0, &bc_coeffs(0.01)).is_err());
    }

    #[test]
    fn ic_residual_examples() {
        assert_eq!(ic_residual(&eval_1d(0.0, 0.0, 0.0, 0.0), 0.0), 0.0);
        assert!((ic_residual(&eval_1d(0.2, 0.0, 0.0, 0.0), 0.0) + 0.2).abs() < 1e-15);
    }

    #[test]
    fn composite_loss_examples() {
        let terms = vec![
            TermKind::Pde,
            TermKind::Initial,
            TermKind::Side(SideId::X0),
            TermKind::Side(SideId::X1),
        ];

        // all residuals zero → composite 0
        let zeros = vec![vec![0.0; 3]; 4];
        let b = composite_loss(&terms, &zeros, &[1.0; 4]).unwrap();
        assert_eq!(b.composite, 0.0);

        // residuals {1, −1} → mean square 1
        let lists = vec![vec![1.0, -1.0], vec![0.0], vec![0.0], vec![0.0]];
        let b = composite_loss(&terms, &lists, &[1.0; 4]).unwrap();
        assert_eq!(b.losses[0], 1.0);

        // λ = {1, 0.5, 1, 1}, losses {2, 4, 1, 1} → 2 + 2 + 1 + 1 = 6
        let b = LossBreakdown::new(terms, vec![2.0, 4.0, 1.0, 1.0], vec![1.0, 0.5, 1.0, 1.0]);
        assert_eq!(b.composite, 6.0);
    }

    #[test]
    fn composite_loss_rejects_empty_list() {
        let terms = vec![TermKind::Pde];
        assert!(composite_loss(&terms, &[vec![]], &[1.0]).is_err());
    }

    #[test]
    fn composite_recomputable_from_fields() {
        let terms = vec![TermKind::Pde, TermKind::Initial, TermKind::Side(SideId::X0)];
        let b = LossBreakdown::new(terms, vec![0.31, 0.007, 1.9], vec![1.0, 0.7, 1.0]);
        let recomputed: f64 = b.losses.iter().zip(&b.lambdas).map(|(l, lam)| l * lam).sum();
        assert!((recomputed - b.composite).abs() < 1e-15);
    }

    #[test]
    fn normalization_rule_examples() {
        let lam = update_normalization(&[1.0, 0.5, 0.005, 1e-4], 0.01).unwrap();
        assert_eq!(lam, vec![1.0, 1.0, 0.5, 0.01]);

        let lam = update_normalization(&[0.3, 0.3, 0.3], 0.01).unwrap();
        assert_eq!(lam, vec![1.0, 1.0, 1.0]);

        let lam = update_normalization(&[0.0, 0.0], 0.01).unwrap();
        assert_eq!(lam, vec![1.0, 1.0]);
    }

    #[test]
    fn normalization_is_scale_invariant() {
        let base = [2.0, 0.9, 0.004, 3e-5];
        let lam0 = update_normalization(&base, 0.01).unwrap();
        for &c in &[1e-6, 0.1, 7.0, 1e9] {
            let scaled: Vec<f64> = base.iter().map(|l| l * c).collect();
            let lam = update_normalization(&scaled, 0.01).unwrap();
            for (a, b) in lam0.iter().zip(&lam) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalization_stays_in_unit_interval() {
        let lam = update_normalization(&[5.0, 1e-9, 0.04, 0.0], 0.01).unwrap();
        for &l in &lam {
            assert!(l > 0.0 && l <= 1.0);
        }
        // no nonzero term's normalized magnitude falls below threshold × max
        let losses = [5.0, 1e-9, 0.04];
        let lam = update_normalization(&losses, 0.01).unwrap();
        for (l, lm) in losses.iter().zip(&lam) {
            if *l > 0.0 {
                assert!(lm * l >= 0.01 * 5.0 * (l / 5.0) - 1e-18);
            }
        }
    }
}
