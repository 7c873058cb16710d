"""Coupled Euler and HMP_N relaxation system in scaled form.

State vector layout (length N+4): ``(rho, m, En, f0, alpha, f2, ..., fN)``
with ``m = rho v`` and ``En = rho E``. All functions accept a leading batch
axis. The system reads

    U_t + (1/eps) A(U; eps) U_x = (1/eps^2) Q(U; eps).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .closure import (
    ALPHA_MAX,
    DegeneracyError,
    check_d_tilde,
    closure_tables,
    d_tilde_matrix,
)

EPS0 = 0.5


class StateError(ValueError):
    """Non-physical state (rho, theta or alpha out of range)."""


class EntropyError(ArithmeticError):
    """Entropy Hessian lost positive definiteness."""


@dataclass(frozen=True)
class ThermoRadiationModel:
    """Ideal gas with power-law Planck function and constant opacities.

    p = rho theta, e = theta/(gamma-1), s = log(theta^{1/(gamma-1)}/rho),
    b = planck_scale * theta**planck_exponent.
    """

    gamma: float = 5.0 / 3.0
    planck_exponent: float = 4.0
    planck_scale: float = 1.0
    sigma_a: float = 1.0
    sigma_s: float = 1.0
    N: int = 3
    alpha_max: float = ALPHA_MAX
    epsilon0: float = EPS0
    nodes: int = field(default=128, repr=False)

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise ValueError("gamma must exceed 1")
        if self.planck_scale < 0 or self.planck_exponent < 0:
            raise ValueError("Planck function must be non-negative and non-decreasing")
        if not (self.sigma_a > 0 and self.sigma_s > 0):
            raise ValueError("opacities must be positive")
        if not 2 <= self.N <= 8:
            raise ValueError("N must lie in [2, 8]")
        if not 0 < self.alpha_max < 1:
            raise ValueError("alpha_max must lie in (0, 1)")

    @property
    def size(self):
        return self.N + 4

    def tables(self, alpha, nodes=-1):
        """Closure tables at ``alpha``; ``nodes=None`` selects the rule adaptively."""
        return closure_tables(alpha, self.N, self.nodes if nodes == -1 else nodes, self.alpha_max)

    # thermodynamics
    def pressure(self, rho, theta):
        return rho * theta

    def p_rho(self, rho, theta):
        return theta

    def p_theta(self, rho, theta):
        return rho

    def energy(self, rho, theta):
        return theta / (self.gamma - 1.0)

    def e_theta(self, rho, theta):
        return np.ones_like(np.asarray(theta, dtype=float)) / (self.gamma - 1.0)

    def theta_from_e(self, rho, e):
        return (self.gamma - 1.0) * e

    def entropy(self, rho, e):
        theta = self.theta_from_e(rho, e)
        return np.log(theta ** (1.0 / (self.gamma - 1.0)) / rho)

    def sound_speed(self, rho, theta):
        return np.sqrt(self.gamma * theta)

    def planck(self, theta):
        return self.planck_scale * np.asarray(theta, dtype=float) ** self.planck_exponent

    def dplanck(self, theta):
        k = self.planck_exponent
        if k == 0:
            return np.zeros_like(np.asarray(theta, dtype=float))
        return self.planck_scale * k * np.asarray(theta, dtype=float) ** (k - 1.0)

    def sigmas(self, theta):
        t = np.asarray(theta, dtype=float)
        return np.full_like(t, self.sigma_a), np.full_like(t, self.sigma_s)

    # conserved hydro variables
    def theta_and_partials(self, u):
        """theta and its partials w.r.t. (rho, m, En)."""
        u = np.asarray(u, dtype=float)
        rho, m, En = u[..., 0], u[..., 1], u[..., 2]
        g1 = self.gamma - 1.0
        e = En / rho - 0.5 * m * m / (rho * rho)
        if np.any(rho <= 0) or np.any(e <= 0):
            raise StateError("non-physical hydro state (rho <= 0 or e <= 0)")
        theta = g1 * e
        t_rho = g1 * (-En / rho**2 + m * m / rho**3)
        t_m = -g1 * m / rho**2
        t_E = g1 / rho
        return theta, t_rho, t_m, t_E

    def theta(self, u):
        u = np.asarray(u, dtype=float)
        return (self.gamma - 1.0) * (u[..., 2] / u[..., 0] - 0.5 * (u[..., 1] / u[..., 0]) ** 2)

    def hydro_flux(self, u, extra_pressure=0.0):
        u = np.asarray(u, dtype=float)
        rho, m, En = u[..., 0], u[..., 1], u[..., 2]
        v = m / rho
        p = self.pressure(rho, self.theta(u))
        return np.stack([m, m * v + p + extra_pressure, (En + p) * v], axis=-1)

    def flux_jacobian(self, u):
        u = np.asarray(u, dtype=float)
        g = self.gamma
        rho, m, En = u[..., 0], u[..., 1], u[..., 2]
        v = m / rho
        p = (g - 1.0) * (En - 0.5 * m * v)
        H = (En + p) / rho
        F = np.zeros(u.shape[:-1] + (3, 3))
        F[..., 0, 1] = 1.0
        F[..., 1, 0] = 0.5 * (g - 3.0) * v * v
        F[..., 1, 1] = (3.0 - g) * v
        F[..., 1, 2] = g - 1.0
        F[..., 2, 0] = v * (0.5 * (g - 1.0) * v * v - H)
        F[..., 2, 1] = H - (g - 1.0) * v * v
        F[..., 2, 2] = g * v
        return F

    def entropy_hessian(self, u):
        """Hessian of eta = -rho s in conserved variables, via entropy variables."""
        u = np.asarray(u, dtype=float)
        g1 = self.gamma - 1.0
        rho = u[..., 0]
        v = u[..., 1] / rho
        theta = self.theta(u)
        e = theta / g1
        # d V / d (rho, v, theta), V = ((e + p/rho - theta s - v^2/2)/theta, v/theta, -1/theta)
        dV = np.zeros(u.shape[:-1] + (3, 3))
        dV[..., 0, 0] = 1.0 / rho
        dV[..., 0, 1] = -v / theta
        dV[..., 0, 2] = -1.0 / (g1 * theta) + 0.5 * v * v / theta**2
        dV[..., 1, 1] = 1.0 / theta
        dV[..., 1, 2] = -v / theta**2
        dV[..., 2, 2] = 1.0 / theta**2
        du = np.zeros_like(dV)
        du[..., 0, 0] = 1.0
        du[..., 1, 0] = v
        du[..., 1, 1] = rho
        du[..., 2, 0] = e + 0.5 * v * v
        du[..., 2, 1] = rho * v
        du[..., 2, 2] = rho / g1
        H = np.linalg.solve(np.swapaxes(du, -1, -2), np.swapaxes(dV, -1, -2))
        H = np.swapaxes(H, -1, -2)
        return 0.5 * (H + np.swapaxes(H, -1, -2))

    def entropy_density(self, u):
        u = np.asarray(u, dtype=float)
        rho = u[..., 0]
        e = u[..., 2] / rho - 0.5 * (u[..., 1] / rho) ** 2
        return -rho * self.entropy(rho, e)


DEFAULT_MODEL = ThermoRadiationModel()


@dataclass(frozen=True)
class FullState:
    """Hydro conserved variables plus radiation closure variables and eps."""

    U: np.ndarray
    epsilon: float
    model: ThermoRadiationModel = DEFAULT_MODEL

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        object.__setattr__(self, "U", U)
        if U.shape[-1] != self.model.size:
            raise ValueError(f"state length {U.shape[-1]} does not match N+4 = {self.model.size}")
        if not 0 < self.epsilon <= self.model.epsilon0:
            raise StateError(f"epsilon must lie in (0, {self.model.epsilon0}]")
        validate_state(U, self.model)

    @property
    def u(self):
        return self.U[..., :3]

    @property
    def w(self):
        return self.U[..., 3:]


def validate_state(U, model=DEFAULT_MODEL):
    U = np.asarray(U, dtype=float)
    if not np.all(np.isfinite(U)):
        raise StateError("state contains NaN or Inf")
    if np.any(U[..., 0] <= 0):
        raise StateError("density must be positive")
    if np.any(model.theta(U[..., :3]) <= 0):
        raise StateError("temperature must be positive")
    if np.any(np.abs(U[..., 4]) > model.alpha_max):
        raise StateError(f"|alpha| exceeds {model.alpha_max}")
    return U


def _tables(U, model, tables):
    return model.tables(np.asarray(U)[..., 4]) if tables is None else tables


def alpha_from_moments(E0, E1):
    """alpha = -3r / (2 + sqrt(4 - 3 r^2)), r = E1/E0."""
    E0 = np.asarray(E0, dtype=float)
    if np.any(E0 <= 0):
        raise ValueError("E0 must be positive")
    r = np.asarray(E1, dtype=float) / E0
    if np.any(np.abs(r) > 1.0):
        raise ValueError("flux ratio |E1/E0| exceeds 1")
    return -3.0 * r / (2.0 + np.sqrt(4.0 - 3.0 * r * r))


def flux_ratio(alpha):
    """r = E1/E0 = kappa10/kappa00 = -4 alpha / (3 + alpha^2)."""
    a = np.asarray(alpha, dtype=float)
    return -4.0 * a / (3.0 + a * a)


def _f(w):
    f = np.array(w, dtype=float, copy=True)
    f[..., 1] = 0.0
    return f


def moments_from_w(w, tables):
    """(E0, E1, E2, E_{N+1}) from the closure variables."""
    w = np.asarray(w, dtype=float)
    k = tables.kappa
    N = tables.N
    f = _f(w)
    E0 = k[..., 0, 0] * f[..., 0]
    E1 = k[..., 1, 0] * f[..., 0]
    E2 = k[..., 2, 2] * f[..., 2] + k[..., 2, 0] * f[..., 0]
    EN1 = np.einsum("...k,...k->...", k[..., N + 1, : N + 1], f)
    return E0, E1, E2, EN1


def equilibrium_state(rho, v, theta, N=None, model=DEFAULT_MODEL):
    """U on the equilibrium manifold: f0 = b/2, alpha = 0, f_i = 0."""
    N = model.N if N is None else N
    rho, v, theta = np.broadcast_arrays(*(np.asarray(z, dtype=float) for z in (rho, v, theta)))
    if np.any(rho <= 0) or np.any(theta <= 0):
        raise StateError("rho and theta must be positive")
    U = np.zeros(rho.shape + (N + 4,))
    U[..., 0] = rho
    U[..., 1] = rho * v
    U[..., 2] = rho * (model.energy(rho, theta) + 0.5 * v * v)
    U[..., 3] = 0.5 * model.planck(theta)
    return U


def equilibrium_w(u, model=DEFAULT_MODEL):
    theta = model.theta(u)
    w = np.zeros(np.shape(u)[:-1] + (model.N + 1,))
    w[..., 0] = 0.5 * model.planck(theta)
    return w


def s_hat(U, eps, tables, model=DEFAULT_MODEL):
    """Radiation source in Phi~-coordinates."""
    U = np.asarray(U, dtype=float)
    rho = U[..., 0]
    theta = model.theta(U[..., :3])
    b = model.planck(theta)
    sa, ss = model.sigmas(theta)
    w = U[..., 3:]
    f = _f(w)
    alpha = w[..., 1]
    kt = tables.diag_tilde
    k00 = tables.kappa[..., 0, 0]
    e2 = eps * eps
    gain = rho * (sa * b + e2 * ss * k00 * f[..., 0])
    S = gain[..., None] * tables.R / (2.0 * kt)
    fm1 = np.zeros_like(f)
    fm1[..., 1:] = f[..., :-1]
    S -= (rho * (sa + e2 * ss))[..., None] * (alpha[..., None] * fm1 + tables.beta * f)
    return S


def source_Q(U, eps, tables=None, model=DEFAULT_MODEL):
    """Q(U; eps) = (q1, D~^{-1} S^)."""
    U = np.asarray(U, dtype=float)
    tables = _tables(U, model, tables)
    rho = U[..., 0]
    theta = model.theta(U[..., :3])
    sa, ss = model.sigmas(theta)
    f0 = U[..., 3]
    Q = np.zeros_like(U)
    Q[..., 1] = rho * (eps * sa + eps**3 * ss) * tables.kappa[..., 1, 0] * f0
    Q[..., 2] = rho * sa * (tables.kappa[..., 0, 0] * f0 - model.planck(theta))
    D = d_tilde_matrix(U[..., 3:], tables)
    check_d_tilde(D)
    Q[..., 3:] = np.linalg.solve(D, s_hat(U, eps, tables, model)[..., None])[..., 0]
    return Q


def assemble_A(U, eps, tables=None, model=DEFAULT_MODEL):
    U = np.asarray(U, dtype=float)
    tables = _tables(U, model, tables)
    n = U.shape[-1]
    A = np.zeros(U.shape[:-1] + (n, n))
    A[..., :3, :3] = eps * model.flux_jacobian(U[..., :3])
    D = d_tilde_matrix(U[..., 3:], tables)
    check_d_tilde(D)
    A[..., 3:, 3:] = np.linalg.solve(D, tables.M_tilde @ D)
    return A


def symmetrizer_A0(U, tables=None, model=DEFAULT_MODEL, radiation_scale=None):
    """diag(eta_uu, D~^T Lambda~ D~); independent of eps.

    ``radiation_scale`` multiplies the radiation block (diagnostic use only).
    """
    U = np.asarray(U, dtype=float)
    tables = _tables(U, model, tables)
    n = U.shape[-1]
    A0 = np.zeros(U.shape[:-1] + (n, n))
    H = model.entropy_hessian(U[..., :3])
    if np.any(np.linalg.eigvalsh(H)[..., 0] <= 0):
        raise EntropyError("entropy Hessian is not positive definite")
    A0[..., :3, :3] = H
    D = d_tilde_matrix(U[..., 3:], tables)
    rad = np.swapaxes(D, -1, -2) @ (tables.diag_tilde[..., :, None] * D)
    if radiation_scale is not None:
        rad = rad * np.asarray(radiation_scale)[..., None, None]
    A0[..., 3:, 3:] = 0.5 * (rad + np.swapaxes(rad, -1, -2))
    return A0


@dataclass(frozen=True)
class TildeResult:
    Ut: np.ndarray
    D: np.ndarray
    det: np.ndarray
    Dinv: np.ndarray


def tilde_variables(U, eps, tables=None, model=DEFAULT_MODEL):
    U = np.asarray(U, dtype=float)
    tables = _tables(U, model, tables)
    k00 = tables.kappa[..., 0, 0]
    k10 = tables.kappa[..., 1, 0]
    f0 = U[..., 3]
    Ut = U.copy()
    Ut[..., 1] = U[..., 1] + eps * k10 * f0
    Ut[..., 2] = U[..., 2] + k00 * f0
    Ut[..., 3] = k00 * f0 - model.planck(model.theta(U[..., :3]))
    return Ut


def tilde_jacobian(U, eps, tables=None, model=DEFAULT_MODEL):
    """D_{U Ũ} = dŨ/dU and its determinant."""
    U = np.asarray(U, dtype=float)
    tables = _tables(U, model, tables)
    n = U.shape[-1]
    k00 = tables.kappa[..., 0, 0]
    k10 = tables.kappa[..., 1, 0]
    dk00 = tables.dkappa[..., 0, 0]
    dk10 = tables.dkappa[..., 1, 0]
    f0 = U[..., 3]
    theta, t_rho, t_m, t_E = model.theta_and_partials(U[..., :3])
    bp = model.dplanck(theta)
    D = np.zeros(U.shape[:-1] + (n, n)) + np.eye(n)
    D[..., 1, 3] = eps * k10
    D[..., 1, 4] = eps * dk10 * f0
    D[..., 2, 3] = k00
    D[..., 2, 4] = dk00 * f0
    D[..., 3, 0] = -bp * t_rho
    D[..., 3, 1] = -bp * t_m
    D[..., 3, 2] = -bp * t_E
    D[..., 3, 3] = k00
    D[..., 3, 4] = dk00 * f0
    det = k00 + bp * t_E * k00 + eps * bp * t_m * k10
    return D, det


def tilde_inverse_eps0(U, tables=None, model=DEFAULT_MODEL):
    """Closed-form inverse of D_{U Ũ} at eps = 0."""
    U = np.asarray(U, dtype=float)
    tables = _tables(U, model, tables)
    n = U.shape[-1]
    k00 = tables.kappa[..., 0, 0]
    dk00 = tables.dkappa[..., 0, 0]
    f0 = U[..., 3]
    theta, t_rho, t_m, t_E = model.theta_and_partials(U[..., :3])
    bp = model.dplanck(theta)
    c = 1.0 + bp * t_E
    Di = np.zeros(U.shape[:-1] + (n, n)) + np.eye(n)
    Di[..., 2, 0] = -bp * t_rho / c
    Di[..., 2, 1] = -bp * t_m / c
    Di[..., 2, 2] = 1.0 / c
    Di[..., 2, 3] = -1.0 / c
    # the entries below carry a plus sign (the minus signs printed for this
    # row do not invert D_{U Ũ})
    Di[..., 3, 0] = bp * t_rho / (c * k00)
    Di[..., 3, 1] = bp * t_m / (c * k00)
    Di[..., 3, 2] = bp * t_E / (c * k00)
    Di[..., 3, 3] = 1.0 / (c * k00)
    Di[..., 3, 4] = -dk00 * f0 / k00
    return Di


def tilde_transform(U, eps, tables=None, model=DEFAULT_MODEL):
    """Ũ, D_{U Ũ}, its determinant and its inverse."""
    U = np.asarray(U, dtype=float)
    tables = _tables(U, model, tables)
    D, det = tilde_jacobian(U, eps, tables, model)
    scale = tables.kappa[..., 0, 0]
    if np.any(np.abs(det) <= 1e-10 * scale):
        raise DegeneracyError("tilde transform is degenerate (det too small)")
    Dinv = np.linalg.inv(D)
    return TildeResult(tilde_variables(U, eps, tables, model), D, det, Dinv)


def tilde_system(U, eps, tables=None, model=DEFAULT_MODEL):
    """(Ã, Q̃) = (D A D^{-1}, D Q) in tilde variables."""
    tables = _tables(U, model, tables)
    tr = tilde_transform(U, eps, tables, model)
    A = assemble_A(U, eps, tables, model)
    Q = source_Q(U, eps, tables, model)
    return tr.D @ A @ tr.Dinv, np.einsum("...ij,...j->...i", tr.D, Q)


def inverse_tilde(Ut, eps, model=DEFAULT_MODEL, tol=1e-14):
    """Recover U from Ũ by a scalar solve for theta (one state)."""
    Ut = np.asarray(Ut, dtype=float)
    if Ut.ndim != 1:
        return np.stack([inverse_tilde(x, eps, model, tol) for x in Ut.reshape(-1, Ut.shape[-1])]).reshape(Ut.shape)
    rho, mt, Et, g0, alpha = Ut[:5]
    t = model.tables(alpha)
    k00 = t.kappa[0, 0]
    k10 = t.kappa[1, 0]
    g1 = model.gamma - 1.0

    def parts(theta):
        f0 = (g0 + model.planck(theta)) / k00
        m = mt - eps * k10 * f0
        En = Et - k00 * f0
        return f0, m, En

    def resid(theta):
        _, m, En = parts(theta)
        return g1 * (En / rho - 0.5 * m * m / rho**2) - theta

    lo, hi = 1e-300, 1.0
    while resid(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            raise StateError("no positive temperature for the given tilde state")
    if resid(lo) < 0:
        raise StateError("no positive temperature for the given tilde state")
    theta = brentq(resid, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    f0, m, En = parts(theta)
    U = Ut.copy()
    U[1], U[2], U[3] = m, En, f0
    return U


def theta_from_total_energy(rho, m, Z, model=DEFAULT_MODEL, tol=1e-15, max_iter=100):
    """Solve rho e(theta) + m^2/(2 rho) + b(theta) = Z for theta > 0.

    Newton from the right of the root with a bisection safeguard; the left
    side is increasing in theta so the root is unique. Vectorised.
    """
    rho, m, Z = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (rho, m, Z)))
    R = Z - 0.5 * m * m / rho
    if np.any(rho <= 0) or np.any(R <= 0):
        raise StateError("no positive temperature: internal plus radiation energy must be positive")
    c = rho / (model.gamma - 1.0)
    lo = np.zeros_like(R)
    hi = R / c
    s = model.planck_scale
    if s > 0 and model.planck_exponent > 0:
        hi = np.minimum(hi, (R / s) ** (1.0 / model.planck_exponent))
    theta = hi.copy()
    for _ in range(max_iter):
        g = c * theta + model.planck(theta) - R
        dg = c + model.dplanck(theta)
        hi = np.where(g > 0, theta, hi)
        lo = np.where(g <= 0, theta, lo)
        step = g / dg
        new = theta - step
        bad = (new <= lo) | (new >= hi) | ~np.isfinite(new)
        new = np.where(bad, 0.5 * (lo + hi), new)
        done = np.abs(new - theta) <= tol * np.abs(theta)
        theta = new
        if np.all(done):
            break
    else:
        raise StateError("temperature recovery did not converge")
    return theta
