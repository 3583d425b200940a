//! First-order system matrices of the relaxed system and a sampling check of
//! their symmetrizability.
//!
//! Unknowns are ordered `U = (η, u₁, u₂, u₃, a₁₁, a₁₂, a₁₃, a₂₂, a₂₃, S₂)`;
//! the temperature is carried separately as the parabolic part. The flux
//! matrices are built from the principal symbol of the solved-form equations
//! and then weighted row by row with the diagonal of `A₀`.
//!
//! The `(a₁₁, a₂₂)` pair is not symmetric under a diagonal weight. Changing
//! variables to `b₁₁ = (a₁₁+a₂₂)/2`, `b₂₂ = (a₁₁-a₂₂)/2` and taking the
//! equations `2(row a₁₁ + row a₂₂)` and `(2/3)(row a₁₁ - row a₂₂)` gives a
//! system whose flux matrices are symmetric and whose `Ã₀`, `B̃` stay
//! diagonal: `Ã₀` carries `3τ₁/μ` and `τ₁/μ` in the `b` slots.

use nalgebra::{SMatrix, SVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::state::{PhysParams, StateSpaceBounds};

pub type Matrix10 = SMatrix<f64, 10, 10>;
pub type Vector10 = SVector<f64, 10>;

pub const ETA: usize = 0;
pub const U1: usize = 1;
pub const A11: usize = 4;
pub const A22: usize = 7;
pub const S2: usize = 9;

/// Pointwise values of the relaxed unknowns.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StatePoint {
    pub eta: f64,
    pub u: [f64; 3],
    pub phi: f64,
    pub s1: [f64; 5],
    pub s2: f64,
}

fn factors(eta: f64, phi: f64, p: &PhysParams) -> Result<(f64, f64)> {
    let rho = 1.0 + p.epsilon * eta;
    let theta = 1.0 + p.epsilon * phi;
    if !(rho > 0.0) {
        return Err(Error::OutsideStateSpace {
            field: "density",
            margin: rho,
        });
    }
    if !(theta > 0.0) {
        return Err(Error::OutsideStateSpace {
            field: "temperature",
            margin: theta,
        });
    }
    Ok((rho, theta))
}

fn a0_diagonal(rho: f64, theta: f64, p: &PhysParams) -> [f64; 10] {
    let t1 = p.tau1_eps / p.mu_eps;
    [
        theta / rho,
        rho,
        rho,
        rho,
        0.75 * t1,
        t1,
        t1,
        0.75 * t1,
        t1,
        p.tau2_eps / p.lambda_eps,
    ]
}

/// Diagonal symmetrizer `A₀(η, φ)`.
pub fn assemble_a0(eta: f64, phi: f64, p: &PhysParams) -> Result<Matrix10> {
    let (rho, theta) = factors(eta, phi, p)?;
    Ok(Matrix10::from_diagonal(&Vector10::from(a0_diagonal(rho, theta, p))))
}

/// Constant relaxation matrix `B`.
pub fn assemble_b(p: &PhysParams) -> Matrix10 {
    let m = 1.0 / p.mu_eps;
    Matrix10::from_diagonal(&Vector10::from([
        0.0,
        0.0,
        0.0,
        0.0,
        0.75 * m,
        m,
        m,
        0.75 * m,
        m,
        1.0 / p.lambda_eps,
    ]))
}

/// Coefficients of `(div S₁)ᵢ` on the packed columns `(a₁₁, a₁₂, a₁₃, a₂₂, a₂₃)`
/// for the symbol `ξ`.
fn div_stress_symbol(xi: [f64; 3]) -> [[f64; 5]; 3] {
    let [x1, x2, x3] = xi;
    [
        [x1, x2, x3, 0.0, 0.0],
        [0.0, x1, 0.0, x2, x3],
        [-x3, 0.0, x1, -x3, x2],
    ]
}

/// Coefficients of the packed entries of `∇u + ∇uᵀ - (2/3) div u I` on the
/// velocity columns.
fn strain_symbol(xi: [f64; 3]) -> [[f64; 3]; 5] {
    let [x1, x2, x3] = xi;
    let t = 2.0 / 3.0;
    [
        [2.0 * x1 - t * x1, -t * x2, -t * x3],
        [x2, x1, 0.0],
        [x3, 0.0, x1],
        [-t * x1, 2.0 * x2 - t * x2, -t * x3],
        [0.0, x3, x2],
    ]
}

/// Principal symbol `M(ξ)` of the solved-form system `∂ₜU + Σ Mⱼ∂ⱼU + …`.
pub fn solved_symbol(pt: &StatePoint, p: &PhysParams, xi: [f64; 3]) -> Result<Matrix10> {
    let (rho, theta) = factors(pt.eta, pt.phi, p)?;
    let eps = p.epsilon;
    let u_xi = pt.u[0] * xi[0] + pt.u[1] * xi[1] + pt.u[2] * xi[2];
    let mut m = Matrix10::zeros();

    m[(ETA, ETA)] = u_xi;
    for i in 0..3 {
        m[(ETA, U1 + i)] = rho / eps * xi[i];
    }

    let div = div_stress_symbol(xi);
    for i in 0..3 {
        let row = U1 + i;
        m[(row, ETA)] = theta / (eps * rho) * xi[i];
        m[(row, row)] = u_xi;
        for c in 0..5 {
            m[(row, A11 + c)] = -div[i][c] / rho;
        }
        m[(row, S2)] = -xi[i] / rho;
    }

    let strain = strain_symbol(xi);
    let shear = p.mu_eps / p.tau1_eps;
    for c in 0..5 {
        for j in 0..3 {
            m[(A11 + c, U1 + j)] = -shear * strain[c][j];
        }
    }
    let bulk = p.lambda_eps / p.tau2_eps;
    for j in 0..3 {
        m[(S2, U1 + j)] = -bulk * xi[j];
    }
    Ok(m)
}

/// `Σⱼ Aⱼ ξⱼ = A₀ M(ξ)`.
pub fn assemble_aj(pt: &StatePoint, p: &PhysParams, xi: [f64; 3]) -> Result<Matrix10> {
    let a0 = assemble_a0(pt.eta, pt.phi, p)?;
    Ok(a0 * solved_symbol(pt, p, xi)?)
}

/// Zeroth-order source `F` of the hyperbolic part: the temperature gradient
/// in the momentum rows, moved to the right-hand side.
pub fn source_f(pt: &StatePoint, grad_phi: [f64; 3], p: &PhysParams) -> Result<Vector10> {
    let (rho, _) = factors(pt.eta, pt.phi, p)?;
    let mut f = Vector10::zeros();
    for i in 0..3 {
        f[U1 + i] = -rho / p.epsilon * grad_phi[i];
    }
    Ok(f)
}

/// Right-hand side `H` of `(1+εη)∂ₜφ - κ^εΔφ = H`.
///
/// `grad_u[i][j] = ∂ⱼuᵢ`.
pub fn parabolic_h(
    pt: &StatePoint,
    grad_u: [[f64; 3]; 3],
    grad_phi: [f64; 3],
    p: &PhysParams,
) -> Result<f64> {
    let (rho, theta) = factors(pt.eta, pt.phi, p)?;
    let div = grad_u[0][0] + grad_u[1][1] + grad_u[2][2];
    let [b11, b12, b13, b22, b23] = pt.s1;
    let s = [
        [b11 + pt.s2, b12, b13],
        [b12, b22 + pt.s2, b23],
        [b13, b23, -(b11 + b22) + pt.s2],
    ];
    let mut contraction = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            contraction += s[i][j] * grad_u[i][j];
        }
    }
    let adv: f64 = (0..3).map(|i| pt.u[i] * grad_phi[i]).sum();
    Ok(p.epsilon * contraction - (p.gamma - 1.0) / p.epsilon * theta * rho * div - rho * adv)
}

/// Change of stress variables `(a₁₁, a₂₂) ↔ (b₁₁, b₂₂)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct BTransform;

impl BTransform {
    pub fn forward(a11: f64, a22: f64) -> (f64, f64) {
        (0.5 * (a11 + a22), 0.5 * (a11 - a22))
    }

    pub fn inverse(b11: f64, b22: f64) -> (f64, f64) {
        (b11 + b22, b11 - b22)
    }

    /// Column map `U = P Ũ`.
    pub fn column_map() -> Matrix10 {
        let mut m = Matrix10::identity();
        m[(A11, A11)] = 1.0;
        m[(A11, A22)] = 1.0;
        m[(A22, A11)] = 1.0;
        m[(A22, A22)] = -1.0;
        m
    }

    pub fn column_map_inverse() -> Matrix10 {
        let mut m = Matrix10::identity();
        m[(A11, A11)] = 0.5;
        m[(A11, A22)] = 0.5;
        m[(A22, A11)] = 0.5;
        m[(A22, A22)] = -0.5;
        m
    }

    /// Row combination producing the `b₁₁` and `b₂₂` equations.
    pub fn row_map() -> Matrix10 {
        let mut m = Matrix10::identity();
        m[(A11, A11)] = 2.0;
        m[(A11, A22)] = 2.0;
        m[(A22, A11)] = 2.0 / 3.0;
        m[(A22, A22)] = -2.0 / 3.0;
        m
    }

    pub fn row_map_inverse() -> Matrix10 {
        let mut m = Matrix10::identity();
        m[(A11, A11)] = 0.25;
        m[(A11, A22)] = 0.75;
        m[(A22, A11)] = 0.25;
        m[(A22, A22)] = -0.75;
        m
    }
}

/// Rewrites a system matrix in the `Ũ` variables.
pub fn apply_b_transform(a: &Matrix10) -> Matrix10 {
    BTransform::row_map() * a * BTransform::column_map()
}

pub fn invert_b_transform(a: &Matrix10) -> Matrix10 {
    BTransform::row_map_inverse() * a * BTransform::column_map_inverse()
}

/// The `C₃ₓ₅` and `D₅ₓ₃` blocks exactly as printed in the source display.
pub fn printed_blocks(xi: [f64; 3]) -> (SMatrix<f64, 3, 5>, SMatrix<f64, 5, 3>) {
    let [x1, x2, x3] = xi;
    let c = SMatrix::<f64, 3, 5>::from_row_slice(&[
        -x1, -x2, -x3, 0.0, 0.0, //
        0.0, -x1, 0.0, -x2, -x3, //
        x3, 0.0, -x1, x3, -x2,
    ]);
    let d = SMatrix::<f64, 5, 3>::from_row_slice(&[
        -x1, 0.5 * x2, 0.5 * x3, //
        -x2, -x1, 0.0, //
        -x3, 0.0, -x1, //
        0.5 * x1, -x2, 0.5 * x3, //
        0.0, -x3, -x2,
    ]);
    (c, d)
}

/// Largest entry difference between the derived and printed `C`, `D` blocks.
pub fn compare_printed_blocks(
    pt: &StatePoint,
    p: &PhysParams,
    xi: [f64; 3],
) -> Result<(f64, f64)> {
    let a = assemble_aj(pt, p, xi)?;
    let (c, d) = printed_blocks(xi);
    let derived_c = a.fixed_view::<3, 5>(U1, A11).into_owned();
    let derived_d = a.fixed_view::<5, 3>(A11, U1).into_owned();
    Ok(((derived_c - c).amax(), (derived_d - d).amax()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymmetrizerSample {
    pub index: usize,
    pub point: StatePoint,
    pub xi: [f64; 3],
    /// `max|Ã - Ãᵀ| / max|Ã|` for the transformed flux symbol.
    pub asymmetry: f64,
    /// Smallest eigenvalue of `A₀`.
    pub min_eig_a0: f64,
    /// Smallest diagonal entry of `Ã₀`.
    pub min_diag_a0_tilde: f64,
    /// Largest off-diagonal entry of `Ã₀`, relative to its largest entry.
    pub a0_tilde_offdiag: f64,
    /// Smallest eigenvalue of `B̃` (symmetrised).
    pub min_eig_b_tilde: f64,
    pub zero_eigs_b_tilde: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SymmetrizerReport {
    pub samples: Vec<SymmetrizerSample>,
    pub worst_asymmetry: f64,
    pub min_eigenvalue: f64,
    pub passed: bool,
}

pub const ASYMMETRY_TOL: f64 = 1e-12;

fn symmetric_min_eig(m: &Matrix10) -> (f64, Vec<f64>) {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym).eigenvalues;
    let v: Vec<f64> = eig.iter().copied().collect();
    (v.iter().copied().fold(f64::INFINITY, f64::min), v)
}

/// Evaluates one `(state, ξ)` sample.
pub fn examine(pt: &StatePoint, p: &PhysParams, xi: [f64; 3], index: usize) -> Result<SymmetrizerSample> {
    let a0 = assemble_a0(pt.eta, pt.phi, p)?;
    let a = apply_b_transform(&assemble_aj(pt, p, xi)?);
    let a0t = apply_b_transform(&a0);
    let bt = apply_b_transform(&assemble_b(p));

    let scale = a.amax().max(f64::MIN_POSITIVE);
    let asymmetry = (a - a.transpose()).amax() / scale;
    let (min_eig_a0, _) = symmetric_min_eig(&a0);
    let diag = a0t.diagonal();
    let min_diag = diag.iter().copied().fold(f64::INFINITY, f64::min);
    let off = a0t - Matrix10::from_diagonal(&diag);
    let (min_eig_b, eigs_b) = symmetric_min_eig(&bt);
    let b_scale = bt.amax();
    let zero_eigs = eigs_b.iter().filter(|e| e.abs() <= 1e-12 * b_scale).count();
    Ok(SymmetrizerSample {
        index,
        point: *pt,
        xi,
        asymmetry,
        min_eig_a0,
        min_diag_a0_tilde: min_diag,
        a0_tilde_offdiag: off.amax() / a0t.amax(),
        min_eig_b_tilde: min_eig_b,
        zero_eigs_b_tilde: zero_eigs,
    })
}

/// Draws a state from the admissible region and a unit direction.
pub fn random_sample(rng: &mut impl Rng, p: &PhysParams, b: &StateSpaceBounds) -> (StatePoint, [f64; 3]) {
    let lo = (-b.m_g).max((b.delta_g - 1.0) / p.epsilon);
    let mut draw = |lo: f64, hi: f64| rng.random_range(lo..=hi);
    let pt = StatePoint {
        eta: draw(lo, b.m_g),
        u: [draw(-b.m_g, b.m_g), draw(-b.m_g, b.m_g), draw(-b.m_g, b.m_g)],
        phi: draw(lo, b.m_g),
        s1: std::array::from_fn(|_| draw(-b.m_g, b.m_g)),
        s2: draw(-b.m_g, b.m_g),
    };
    let xi = loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-8 {
            break [v[0] / n, v[1] / n, v[2] / n];
        }
    };
    (pt, xi)
}

/// Samples the admissible region and checks that the transformed system is
/// symmetric hyperbolic: `Ã₀` diagonal positive, `Σ Ãⱼξⱼ` symmetric and `B̃`
/// positive semidefinite.
pub fn check_symmetrizable(
    p: &PhysParams,
    samples: usize,
    seed: u64,
    bounds: &StateSpaceBounds,
) -> Result<SymmetrizerReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(samples);
    for index in 0..samples {
        let (pt, xi) = random_sample(&mut rng, p, bounds);
        out.push(examine(&pt, p, xi, index)?);
    }
    let worst_asymmetry = out.iter().map(|s| s.asymmetry).fold(0.0, f64::max);
    let min_eigenvalue = out.iter().map(|s| s.min_eig_a0).fold(f64::INFINITY, f64::min);
    let passed = out.iter().all(|s| {
        s.asymmetry <= ASYMMETRY_TOL
            && s.min_diag_a0_tilde > 0.0
            && s.a0_tilde_offdiag == 0.0
            && s.min_eig_b_tilde >= -1e-12
            && s.zero_eigs_b_tilde == 4
    });
    Ok(SymmetrizerReport {
        samples: out,
        worst_asymmetry,
        min_eigenvalue,
        passed,
    })
}
