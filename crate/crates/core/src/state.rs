//! Physical parameters, the packed traceless stress and the relaxed state.

use crate::error::{Error, Result};
use crate::spectral::{dealias, linf_norm, ScalarField, TorusGrid};

/// How the normalised relaxation times shrink with the Mach number.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum TauRule {
    /// `τ = ε`.
    #[default]
    Linear,
    /// `τ = c · ε`.
    Scaled(f64),
    /// `τ = ε^p`.
    Power(f64),
}

impl TauRule {
    pub fn eval(&self, epsilon: f64) -> f64 {
        match *self {
            TauRule::Linear => epsilon,
            TauRule::Scaled(c) => c * epsilon,
            TauRule::Power(p) => epsilon.powf(p),
        }
    }

    /// Parses `linear`, `scaled:<c>` or `power:<p>`.
    pub fn parse(s: &str) -> Option<TauRule> {
        let s = s.trim();
        if s == "linear" {
            return Some(TauRule::Linear);
        }
        let (kind, arg) = s.split_once(':')?;
        let v: f64 = arg.trim().parse().ok()?;
        if !(v.is_finite() && v > 0.0) {
            return None;
        }
        match kind.trim() {
            "scaled" => Some(TauRule::Scaled(v)),
            "power" => Some(TauRule::Power(v)),
            _ => None,
        }
    }
}

impl std::fmt::Display for TauRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TauRule::Linear => write!(f, "linear"),
            TauRule::Scaled(c) => write!(f, "scaled:{c}"),
            TauRule::Power(p) => write!(f, "power:{p}"),
        }
    }
}

/// Non-dimensional coefficients at Mach number `ε`.
///
/// The gas constant is normalised to one, so `C_V = 1/(γ-1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysParams {
    pub epsilon: f64,
    pub gamma: f64,
    pub mu_eps: f64,
    pub lambda_eps: f64,
    pub kappa_eps: f64,
    pub tau1_eps: f64,
    pub tau2_eps: f64,
    pub mu_bar: f64,
    pub lambda_bar: f64,
    pub kappa_bar: f64,
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be a positive finite number",
        })
    }
}

/// Builds the parameter set for one Mach number. The normalised transport
/// coefficients are held at their limits and both relaxation times follow
/// `tau_rule`.
pub fn scaled_params(
    epsilon: f64,
    mu_bar: f64,
    lambda_bar: f64,
    kappa_bar: f64,
    gamma: f64,
    tau_rule: TauRule,
) -> Result<PhysParams> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            value: epsilon,
            reason: "must lie in (0, 1)",
        });
    }
    positive("mu_bar", mu_bar)?;
    positive("lambda_bar", lambda_bar)?;
    positive("kappa_bar", kappa_bar)?;
    if !(gamma.is_finite() && gamma > 1.0) {
        return Err(Error::InvalidParameter {
            name: "gamma",
            value: gamma,
            reason: "must exceed 1",
        });
    }
    let tau = tau_rule.eval(epsilon);
    positive("tau", tau)?;
    Ok(PhysParams {
        epsilon,
        gamma,
        mu_eps: mu_bar,
        lambda_eps: lambda_bar,
        kappa_eps: kappa_bar,
        tau1_eps: tau,
        tau2_eps: tau,
        mu_bar,
        lambda_bar,
        kappa_bar,
    })
}

impl PhysParams {
    /// Checks every coefficient; used for hand-assembled parameter sets.
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                value: self.epsilon,
                reason: "must lie in (0, 1)",
            });
        }
        if !(self.gamma.is_finite() && self.gamma > 1.0) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                value: self.gamma,
                reason: "must exceed 1",
            });
        }
        positive("mu_eps", self.mu_eps)?;
        positive("lambda_eps", self.lambda_eps)?;
        positive("kappa_eps", self.kappa_eps)?;
        positive("tau1_eps", self.tau1_eps)?;
        positive("tau2_eps", self.tau2_eps)?;
        positive("mu_bar", self.mu_bar)?;
        positive("lambda_bar", self.lambda_bar)?;
        positive("kappa_bar", self.kappa_bar)
    }

    /// Dimensional shear viscosity `μ = ε μ^ε`.
    pub fn mu(&self) -> f64 {
        self.epsilon * self.mu_eps
    }

    /// Dimensional bulk coefficient `λ = ε λ^ε`.
    pub fn lambda(&self) -> f64 {
        self.epsilon * self.lambda_eps
    }

    /// Dimensional conductivity `κ = ε κ^ε`.
    pub fn kappa(&self) -> f64 {
        self.epsilon * self.kappa_eps
    }

    /// Dimensional shear relaxation time `τ₁ = τ₁^ε / ε`.
    pub fn tau1(&self) -> f64 {
        self.tau1_eps / self.epsilon
    }

    pub fn tau2(&self) -> f64 {
        self.tau2_eps / self.epsilon
    }

    pub fn heat_capacity(&self) -> f64 {
        1.0 / (self.gamma - 1.0)
    }
}

const STRESS_TOL: f64 = 1e-12;

/// The five free entries of a symmetric traceless 3×3 stress field.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedStress {
    pub a11: ScalarField,
    pub a12: ScalarField,
    pub a13: ScalarField,
    pub a22: ScalarField,
    pub a23: ScalarField,
}

/// Row-major 3×3 matrix of fields.
pub type FieldMatrix = [[ScalarField; 3]; 3];

impl PackedStress {
    pub fn zeros(grid: &TorusGrid) -> Self {
        let z = ScalarField::zeros(grid);
        Self {
            a11: z.clone(),
            a12: z.clone(),
            a13: z.clone(),
            a22: z.clone(),
            a23: z,
        }
    }

    pub fn components(&self) -> [&ScalarField; 5] {
        [&self.a11, &self.a12, &self.a13, &self.a22, &self.a23]
    }

    pub fn components_mut(&mut self) -> [&mut ScalarField; 5] {
        [
            &mut self.a11,
            &mut self.a12,
            &mut self.a13,
            &mut self.a22,
            &mut self.a23,
        ]
    }

    pub fn from_components(c: [ScalarField; 5]) -> Self {
        let [a11, a12, a13, a22, a23] = c;
        Self {
            a11,
            a12,
            a13,
            a22,
            a23,
        }
    }

    /// `m₃₃ = -(a₁₁ + a₂₂)`.
    pub fn a33(&self) -> ScalarField {
        self.a11.zip_map(&self.a22, |a, b| -(a + b))
    }

    pub fn map(&self, f: impl Fn(&ScalarField) -> ScalarField) -> PackedStress {
        PackedStress {
            a11: f(&self.a11),
            a12: f(&self.a12),
            a13: f(&self.a13),
            a22: f(&self.a22),
            a23: f(&self.a23),
        }
    }
}

/// Packs a symmetric traceless field matrix.
pub fn pack_stress(m: &FieldMatrix) -> Result<PackedStress> {
    let mut asym = 0.0_f64;
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        asym = asym.max(linf_norm(&(&m[i][j] - &m[j][i])));
    }
    if asym > STRESS_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let trace = &(&m[0][0] + &m[1][1]) + &m[2][2];
    let tr = linf_norm(&trace);
    if tr > STRESS_TOL {
        return Err(Error::NotTraceless(tr));
    }
    Ok(PackedStress {
        a11: m[0][0].clone(),
        a12: m[0][1].clone(),
        a13: m[0][2].clone(),
        a22: m[1][1].clone(),
        a23: m[1][2].clone(),
    })
}

pub fn unpack_stress(p: &PackedStress) -> FieldMatrix {
    [
        [p.a11.clone(), p.a12.clone(), p.a13.clone()],
        [p.a12.clone(), p.a22.clone(), p.a23.clone()],
        [p.a13.clone(), p.a23.clone(), p.a33()],
    ]
}

/// Unknowns `(η, u, φ, S₁, S₂)` with `ρ = 1 + εη` and `θ = 1 + εφ`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedState {
    pub eta: ScalarField,
    pub u: [ScalarField; 3],
    pub phi: ScalarField,
    pub s1: PackedStress,
    pub s2: ScalarField,
}

/// Time derivative of a [`RelaxedState`], stored in the same layout.
pub type Tendency = RelaxedState;

impl RelaxedState {
    pub const COMPONENT_NAMES: [&'static str; 11] = [
        "eta", "u1", "u2", "u3", "phi", "a11", "a12", "a13", "a22", "a23", "s2",
    ];

    pub fn zeros(grid: &TorusGrid) -> Self {
        let z = ScalarField::zeros(grid);
        Self {
            eta: z.clone(),
            u: [z.clone(), z.clone(), z.clone()],
            phi: z.clone(),
            s1: PackedStress::zeros(grid),
            s2: z,
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        self.eta.grid()
    }

    pub fn components(&self) -> [&ScalarField; 11] {
        [
            &self.eta,
            &self.u[0],
            &self.u[1],
            &self.u[2],
            &self.phi,
            &self.s1.a11,
            &self.s1.a12,
            &self.s1.a13,
            &self.s1.a22,
            &self.s1.a23,
            &self.s2,
        ]
    }

    pub fn components_mut(&mut self) -> [&mut ScalarField; 11] {
        let [u1, u2, u3] = &mut self.u;
        let PackedStress {
            a11,
            a12,
            a13,
            a22,
            a23,
        } = &mut self.s1;
        [
            &mut self.eta,
            u1,
            u2,
            u3,
            &mut self.phi,
            a11,
            a12,
            a13,
            a22,
            a23,
            &mut self.s2,
        ]
    }

    pub fn from_components(c: [ScalarField; 11]) -> Self {
        let [eta, u1, u2, u3, phi, a11, a12, a13, a22, a23, s2] = c;
        Self {
            eta,
            u: [u1, u2, u3],
            phi,
            s1: PackedStress {
                a11,
                a12,
                a13,
                a22,
                a23,
            },
            s2,
        }
    }

    pub fn map(&self, f: impl Fn(&ScalarField) -> ScalarField) -> RelaxedState {
        Self::from_components(self.components().map(f))
    }

    /// `self += a · other`, componentwise.
    pub fn axpy(&mut self, a: f64, other: &RelaxedState) {
        for (s, o) in self.components_mut().into_iter().zip(other.components()) {
            s.axpy(a, o);
        }
    }

    pub fn scale(&self, c: f64) -> RelaxedState {
        self.map(|f| f.scale(c))
    }

    pub fn dealiased(&self) -> RelaxedState {
        self.map(dealias)
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|f| f.is_finite())
    }

    /// Largest pointwise absolute difference over all components.
    pub fn max_abs_diff(&self, other: &RelaxedState) -> f64 {
        self.components()
            .iter()
            .zip(other.components())
            .map(|(a, b)| linf_norm(&(*a - b)))
            .fold(0.0, f64::max)
    }
}

/// Concrete admissible region: `1+εη ≥ δ_G`, `1+εφ ≥ δ_G` and every field
/// bounded by `M_G` in sup norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateSpaceBounds {
    pub delta_g: f64,
    pub m_g: f64,
}

impl Default for StateSpaceBounds {
    fn default() -> Self {
        Self {
            delta_g: 0.5,
            m_g: 10.0,
        }
    }
}

impl StateSpaceBounds {
    pub fn new(delta_g: f64, m_g: f64) -> Result<Self> {
        if !(delta_g > 0.0 && delta_g < 1.0) {
            return Err(Error::InvalidParameter {
                name: "delta_g",
                value: delta_g,
                reason: "must lie in (0, 1)",
            });
        }
        positive("m_g", m_g)?;
        Ok(Self { delta_g, m_g })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StateSpaceReport {
    pub inside: bool,
    /// `min (1 + εη)` over the grid.
    pub min_density: f64,
    /// `min (1 + εφ)` over the grid.
    pub min_temperature: f64,
    /// Largest sup norm over all components, with its component name.
    pub max_sup: f64,
    pub max_sup_field: &'static str,
    /// Worst violation (negative) or tightest margin (non-negative), and the
    /// field it belongs to.
    pub worst_margin: f64,
    pub worst_field: &'static str,
}

impl StateSpaceReport {
    pub fn density_margin(&self, b: &StateSpaceBounds) -> f64 {
        self.min_density - b.delta_g
    }

    pub fn temperature_margin(&self, b: &StateSpaceBounds) -> f64 {
        self.min_temperature - b.delta_g
    }
}

pub fn in_state_space(st: &RelaxedState, epsilon: f64, b: &StateSpaceBounds) -> StateSpaceReport {
    let min_density = 1.0 + epsilon * st.eta.min();
    let min_temperature = 1.0 + epsilon * st.phi.min();
    let (mut max_sup, mut max_sup_field) = (0.0, RelaxedState::COMPONENT_NAMES[0]);
    for (f, name) in st.components().iter().zip(RelaxedState::COMPONENT_NAMES) {
        let v = linf_norm(f);
        if v > max_sup || v.is_nan() {
            max_sup = v;
            max_sup_field = name;
        }
    }
    let margins = [
        (min_density - b.delta_g, "density"),
        (min_temperature - b.delta_g, "temperature"),
        (b.m_g - max_sup, max_sup_field),
    ];
    let (worst_margin, worst_field) = margins
        .iter()
        .copied()
        .fold((f64::INFINITY, "density"), |acc, m| if m.0 < acc.0 || m.0.is_nan() { m } else { acc });
    StateSpaceReport {
        inside: worst_margin >= 0.0 && st.is_finite(),
        min_density,
        min_temperature,
        max_sup,
        max_sup_field,
        worst_margin,
        worst_field,
    }
}

/// Vacuum guard used before every right-hand-side evaluation.
pub(crate) fn check_no_vacuum(st: &RelaxedState, epsilon: f64, b: &StateSpaceBounds) -> Result<()> {
    let d = 1.0 + epsilon * st.eta.min() - b.delta_g;
    if !(d >= 0.0) {
        return Err(Error::OutsideStateSpace {
            field: "density",
            margin: d,
        });
    }
    let t = 1.0 + epsilon * st.phi.min() - b.delta_g;
    if !(t >= 0.0) {
        return Err(Error::OutsideStateSpace {
            field: "temperature",
            margin: t,
        });
    }
    Ok(())
}
