//! Normalized Bernoulli density law for a polytropic gas, its subsonic
//! truncation, and the ellipticity data of the resulting coefficient matrix.
//!
//! All quantities are in critical-speed units: the sonic state is
//! `(q, rho) = (1, 1)`, the momentum `rho(q^2) * q` peaks at exactly 1 there,
//! and subsonic means `q < 1`.

use thiserror::Error;

/// Number of grid points used to certify truncation properties at build time.
const CERTIFY_GRID: usize = 100_000;
/// Upper end of the speed-squared certification grid.
const CERTIFY_S_SQ_MAX: f64 = 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum GasError {
    #[error("adiabatic exponent must satisfy gamma > 1, got {0}")]
    InvalidGamma(f64),
    #[error("truncation parameter must lie in (0, 1/4), got {0}")]
    InvalidEpsilon(f64),
    #[error("speed squared must be nonnegative, got {0}")]
    NegativeInput(f64),
    #[error("no positive density solves the Bernoulli relation at q^2 = {0}")]
    OutOfRange(f64),
    #[error("momentum {0} admits no subsonic speed (maximum is 1)")]
    Supersonic(f64),
    #[error("truncation loses ellipticity: H + 2 H' s^2 = {value} at s^2 = {s_sq}")]
    EllipticityViolation { s_sq: f64, value: f64 },
}

/// Polytropic gas with pressure `p = A rho^gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GasModel {
    /// Adiabatic exponent, strictly greater than 1.
    pub gamma: f64,
    /// Pressure constant `A`. After the critical-speed normalization it drops
    /// out of every computed quantity; kept for documentation only.
    pub pressure_scale: f64,
}

impl GasModel {
    pub fn new(gamma: f64) -> Result<Self, GasError> {
        if !(gamma > 1.0) || !gamma.is_finite() {
            return Err(GasError::InvalidGamma(gamma));
        }
        Ok(Self {
            gamma,
            pressure_scale: 1.0,
        })
    }
}

/// The map `q^2 -> rho(q^2)` defined by the normalized Bernoulli relation
/// `q^2 / 2 + h(rho) = 1/2 + h(1)` with `h'(rho) = p'(rho) / rho`.
///
/// For the polytropic gas this inverts in closed form:
/// `rho = (1 + (gamma-1)(1 - q^2)/2)^(1/(gamma-1))`.
#[derive(Debug, Clone, Copy)]
pub struct DensityLaw {
    pub gas: GasModel,
}

impl DensityLaw {
    pub fn new(gas: GasModel) -> Self {
        Self { gas }
    }

    /// Speed squared at which the density reaches vacuum; the Bernoulli
    /// relation has no positive root beyond it.
    pub fn vacuum_q_sq(&self) -> f64 {
        let g = self.gas.gamma;
        1.0 + 2.0 / (g - 1.0)
    }

    /// Normalized density at speed squared `q_sq`.
    pub fn density(&self, q_sq: f64) -> Result<f64, GasError> {
        if q_sq < 0.0 || q_sq.is_nan() {
            return Err(GasError::NegativeInput(q_sq));
        }
        let g = self.gas.gamma;
        let bracket = 1.0 + 0.5 * (g - 1.0) * (1.0 - q_sq);
        if bracket <= 0.0 {
            return Err(GasError::OutOfRange(q_sq));
        }
        Ok(bracket.powf(1.0 / (g - 1.0)))
    }

    /// `d rho / d(q^2)`. Strictly negative wherever the density is defined.
    pub fn density_prime(&self, q_sq: f64) -> Result<f64, GasError> {
        let rho = self.density(q_sq)?;
        Ok(-0.5 * rho.powf(2.0 - self.gas.gamma))
    }

    /// `d^2 rho / d(q^2)^2`.
    pub fn density_second(&self, q_sq: f64) -> Result<f64, GasError> {
        let rho = self.density(q_sq)?;
        let g = self.gas.gamma;
        Ok(0.25 * (2.0 - g) * rho.powf(3.0 - 2.0 * g))
    }

    /// Stagnation density `rho(0)`, the maximum of the density law.
    pub fn stagnation_density(&self) -> f64 {
        let g = self.gas.gamma;
        (0.5 * (g + 1.0)).powf(1.0 / (g - 1.0))
    }

    /// Normalized sound speed at density `rho`.
    pub fn sound_speed(&self, rho: f64) -> f64 {
        rho.powf(0.5 * (self.gas.gamma - 1.0))
    }

    /// Momentum `rho(q^2) * q`. Increasing on `[0, 1]` with maximum 1 at the
    /// sonic speed.
    pub fn momentum(&self, q: f64) -> Result<f64, GasError> {
        if q < 0.0 || q.is_nan() {
            return Err(GasError::NegativeInput(q));
        }
        Ok(self.density(q * q)? * q)
    }

    /// The unique subsonic speed with `rho(q^2) q = m`, for `0 <= m < 1`.
    pub fn invert_momentum_subsonic(&self, m: f64) -> Result<f64, GasError> {
        if m < 0.0 || m.is_nan() {
            return Err(GasError::NegativeInput(m));
        }
        if m >= 1.0 {
            return Err(GasError::Supersonic(m));
        }
        if m == 0.0 {
            return Ok(0.0);
        }
        // Momentum is strictly increasing on [0, 1]; bisect.
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.momentum(mid)? < m {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-16 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Quintic polynomial in the scaled blend variable `u in [0, 1]`.
#[derive(Debug, Clone, Copy)]
struct Quintic {
    c: [f64; 6],
}

impl Quintic {
    /// Hermite interpolant matching value / first / second derivative at both
    /// ends of an interval of width `w` (derivatives given per unit of the
    /// unscaled variable).
    fn hermite(w: f64, v0: f64, m0: f64, s0: f64, v1: f64, m1: f64, s1: f64) -> Self {
        let (d0, d1) = (m0 * w, m1 * w);
        let (e0, e1) = (s0 * w * w, s1 * w * w);
        // Monomial coefficients of the standard quintic Hermite basis.
        let mut c = [0.0; 6];
        let add = |c: &mut [f64; 6], basis: [f64; 6], scale: f64| {
            for (ck, bk) in c.iter_mut().zip(basis) {
                *ck += bk * scale;
            }
        };
        add(&mut c, [1.0, 0.0, 0.0, -10.0, 15.0, -6.0], v0);
        add(&mut c, [0.0, 1.0, 0.0, -6.0, 8.0, -3.0], d0);
        add(&mut c, [0.0, 0.0, 0.5, -1.5, 1.5, -0.5], e0);
        add(&mut c, [0.0, 0.0, 0.0, 10.0, -15.0, 6.0], v1);
        add(&mut c, [0.0, 0.0, 0.0, -4.0, 7.0, -3.0], d1);
        add(&mut c, [0.0, 0.0, 0.0, 0.5, -1.0, 0.5], e1);
        Self { c }
    }

    fn eval(&self, u: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, ck| acc * u + ck)
    }

    fn deriv(&self, u: f64) -> f64 {
        (1..6)
            .rev()
            .fold(0.0, |acc, k| acc * u + k as f64 * self.c[k])
    }

    /// Antiderivative with value 0 at `u = 0`.
    fn integral(&self, u: f64) -> f64 {
        (0..6)
            .rev()
            .fold(0.0, |acc, k| acc * u + self.c[k] / (k + 1) as f64)
            * u
    }
}

/// The truncated density pair `(H_eps, F_eps)`.
///
/// `H_eps` equals the density law below speed squared `1 - 2 eps`, a quintic
/// Hermite blend on `[1 - 2 eps, 1 - eps]`, and the constant
/// `rho(1 - 3 eps / 2)` beyond; both junctions are C^2. The ellipticity
/// constants are certified by a dense grid scan at construction.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedDensity {
    pub law: DensityLaw,
    pub epsilon: f64,
    /// Constant value of `H_eps` above the blend window.
    pub plateau: f64,
    /// Certified lower ellipticity bound of the coefficient matrix.
    pub lambda: f64,
    /// Certified upper ellipticity bound, `H_eps(0)`.
    pub lambda_cap: f64,
    blend: Quintic,
    /// Blend window `[t_lo, t_hi]` in the speed-squared variable.
    t_lo: f64,
    t_hi: f64,
    /// `F_eps` values accumulated at the window edges.
    f_at_lo: f64,
    f_at_hi: f64,
    stagnation: f64,
}

impl TruncatedDensity {
    pub fn build(law: DensityLaw, epsilon: f64) -> Result<Self, GasError> {
        if !(epsilon > 0.0 && epsilon < 0.25) {
            return Err(GasError::InvalidEpsilon(epsilon));
        }
        let t_lo = 1.0 - 2.0 * epsilon;
        let t_hi = 1.0 - epsilon;
        let w = t_hi - t_lo;
        let plateau = law.density(1.0 - 1.5 * epsilon)?;
        let blend = Quintic::hermite(
            w,
            law.density(t_lo)?,
            law.density_prime(t_lo)?,
            law.density_second(t_lo)?,
            plateau,
            0.0,
            0.0,
        );
        let stagnation = law.stagnation_density();
        let f_at_lo = (stagnation.powf(law.gas.gamma) - law.density(t_lo)?.powf(law.gas.gamma))
            / law.gas.gamma;
        let f_at_hi = f_at_lo + 0.5 * w * blend.integral(1.0);

        let mut trunc = Self {
            law,
            epsilon,
            plateau,
            lambda: 0.0,
            lambda_cap: 0.0,
            blend,
            t_lo,
            t_hi,
            f_at_lo,
            f_at_hi,
            stagnation,
        };
        trunc.certify()?;
        Ok(trunc)
    }

    /// Dense-grid certification of monotonicity and ellipticity; fills in
    /// `(lambda, Lambda)`.
    fn certify(&mut self) -> Result<(), GasError> {
        let mut lambda = f64::INFINITY;
        let mut cap: f64 = 0.0;
        let mut prev = f64::INFINITY;
        for k in 0..=CERTIFY_GRID {
            let s_sq = CERTIFY_S_SQ_MAX * k as f64 / CERTIFY_GRID as f64;
            let h = self.h_eps(s_sq);
            let hp = self.h_eps_prime(s_sq);
            let modulus = h + 2.0 * hp * s_sq;
            if modulus <= 0.0 {
                return Err(GasError::EllipticityViolation {
                    s_sq,
                    value: modulus,
                });
            }
            if h > prev + 1e-12 {
                return Err(GasError::EllipticityViolation {
                    s_sq,
                    value: modulus,
                });
            }
            prev = h;
            lambda = lambda.min(modulus);
            cap = cap.max(h);
        }
        self.lambda = lambda;
        self.lambda_cap = cap;
        Ok(())
    }

    /// `H_eps(s^2)`.
    pub fn h_eps(&self, s_sq: f64) -> f64 {
        if s_sq < self.t_lo {
            // Below the window the truncation is the density law itself; the
            // window keeps the argument away from vacuum, so this cannot fail.
            self.law.density(s_sq.max(0.0)).expect("subcritical density")
        } else if s_sq <= self.t_hi {
            self.blend.eval((s_sq - self.t_lo) / (self.t_hi - self.t_lo))
        } else {
            self.plateau
        }
    }

    /// `d H_eps / d(s^2)`.
    pub fn h_eps_prime(&self, s_sq: f64) -> f64 {
        if s_sq < self.t_lo {
            self.law.density_prime(s_sq.max(0.0)).expect("subcritical density")
        } else if s_sq <= self.t_hi {
            let w = self.t_hi - self.t_lo;
            self.blend.deriv((s_sq - self.t_lo) / w) / w
        } else {
            0.0
        }
    }

    /// Energy integrand `F_eps(q^2) = 1/2 * integral of H_eps from 0 to q^2`,
    /// evaluated by the exact piecewise antiderivative.
    pub fn f_eps(&self, q_sq: f64) -> Result<f64, GasError> {
        if q_sq < 0.0 || q_sq.is_nan() {
            return Err(GasError::NegativeInput(q_sq));
        }
        let g = self.law.gas.gamma;
        if q_sq <= self.t_lo {
            let rho = self.law.density(q_sq)?;
            Ok((self.stagnation.powf(g) - rho.powf(g)) / g)
        } else if q_sq <= self.t_hi {
            let w = self.t_hi - self.t_lo;
            let u = (q_sq - self.t_lo) / w;
            Ok(self.f_at_lo + 0.5 * w * self.blend.integral(u))
        } else {
            Ok(self.f_at_hi + 0.5 * self.plateau * (q_sq - self.t_hi))
        }
    }

    /// Coefficient matrix `a_ij = H_eps |p|^2 delta_ij + 2 H_eps' p_i p_j`,
    /// the Hessian of `p -> F_eps(|p|^2)`.
    pub fn coefficient_matrix(&self, grad: [f64; 3]) -> [[f64; 3]; 3] {
        let p_sq = grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2];
        let h = self.h_eps(p_sq);
        let hp2 = 2.0 * self.h_eps_prime(p_sq);
        let mut a = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] = hp2 * grad[i] * grad[j];
            }
            a[i][i] += h;
        }
        a
    }
}
