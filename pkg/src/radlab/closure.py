"""Weighted orthogonal polynomials and the alpha-dependent closure tables.

The MP_N weight is (1 + alpha mu)^-4 and the HMP_N weight is
(1 + alpha mu)^-5 on mu in [-1, 1]. Both families are built as monic
orthogonal polynomials by Gram-Schmidt on Gauss-Legendre nodes.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels

ALPHA_MAX = 0.95
QUAD_NODES = 128
DEFAULT_N = 3


class ClosureDomainError(ValueError):
    """Alpha outside the admissible interval."""


class DegeneracyError(ArithmeticError):
    """Loss of orthogonality or a singular closure matrix."""


@lru_cache(maxsize=None)
def gauss_legendre(n=QUAD_NODES):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _check_alpha(alpha, alpha_max=ALPHA_MAX):
    a = np.asarray(alpha, dtype=float)
    if not np.all(np.isfinite(a)) or np.any(np.abs(a) > alpha_max):
        raise ClosureDomainError(f"|alpha| must not exceed {alpha_max}, got {alpha!r}")
    return a


@dataclass(frozen=True)
class WeightFamily:
    exponent: int

    def __post_init__(self):
        if self.exponent not in (4, 5):
            raise ValueError("weight exponent must be 4 or 5")

    def __call__(self, mu, alpha):
        return (1.0 + alpha * np.asarray(mu, dtype=float)) ** (-self.exponent)


MP = WeightFamily(4)
HMP = WeightFamily(5)


def _family(family):
    if isinstance(family, WeightFamily):
        return family
    return WeightFamily(int(family))


def weighted_moment(j, alpha, family=MP):
    """int_{-1}^{1} mu^j (1 + alpha mu)^-p dmu by Gauss-Legendre."""
    if j < 0:
        raise ValueError("moment index must be non-negative")
    a = float(_check_alpha(alpha))
    fam = _family(family)
    x, w = gauss_legendre()
    return float(np.sum(w * x**j * fam(x, a)))


@dataclass(frozen=True)
class OrthoBasis:
    """Monic orthogonal family phi_0..phi_N; ``coeffs[j, m]`` multiplies mu^m."""

    alpha: float
    degree: int
    family: WeightFamily
    coeffs: np.ndarray

    def __call__(self, mu):
        """Values of every phi_j at ``mu``; shape (N+1,) + mu.shape."""
        mu = np.asarray(mu, dtype=float)
        out = np.zeros((self.degree + 1,) + mu.shape)
        for j in range(self.degree + 1):
            out[j] = np.polynomial.polynomial.polyval(mu, self.coeffs[j, : j + 1])
        return out

    def weighted(self, mu):
        """Values of Phi_j = phi_j times the weight."""
        return self(mu) * self.family(mu, self.alpha)

    def gram(self):
        """Weighted Gram matrix <phi_j, phi_k> by quadrature."""
        x, w = gauss_legendre()
        v = self(x)
        return np.einsum("jq,kq,q->jk", v, v, w * self.family(x, self.alpha))


def build_basis(alpha, N, family=MP):
    if N < 1:
        raise ValueError("degree must be at least 1")
    a = float(_check_alpha(alpha))
    fam = _family(family)
    t = closure_tables(a, N)
    kap = t.kappa if fam.exponent == 4 else t.kappa_tilde
    if np.min(np.diagonal(kap)) <= 1e-14:
        raise DegeneracyError("vanishing norm in Gram-Schmidt")
    coeffs = t.coeffs if fam.exponent == 4 else t.coeffs_tilde
    c = np.array(coeffs[: N + 1, : N + 1])
    c.setflags(write=False)
    return OrthoBasis(a, N, fam, c)


_CLOSED = {
    "kappa00": lambda a: 2.0 * (3.0 + a * a) / (3.0 * (1.0 - a * a) ** 3),
    "kappa_t00": lambda a: 2.0 * (a * a + 1.0) / (a * a - 1.0) ** 4,
    "kappa10": lambda a: 8.0 * a / (3.0 * (a * a - 1.0) ** 3),
    "kappa_t10": lambda a: -2.0 * a * (a * a + 5.0) / (3.0 * (a * a - 1.0) ** 4),
    "kappa_t11": lambda a: 2.0 * (3.0 - a * a) / (9.0 * (1.0 - a * a) ** 2 * (1.0 + a * a)),
}
_ALIASES = {"κ₀₀": "kappa00", "κ̃₀₀": "kappa_t00", "κ₁₀": "kappa10", "κ̃₁₀": "kappa_t10", "κ̃₁₁": "kappa_t11"}
CLOSED_FORM_NAMES = tuple(_CLOSED)


def closed_form_kappa(name, alpha):
    """Rational closed forms for the low-order kappa coefficients."""
    key = _ALIASES.get(name, name)
    if key not in _CLOSED:
        raise KeyError(f"unknown closed form {name!r}; choose from {CLOSED_FORM_NAMES}")
    a = np.asarray(alpha, dtype=float)
    if np.any(np.abs(a) >= 1.0):
        raise ClosureDomainError("closed forms need |alpha| < 1")
    return _CLOSED[key](a)


def r1_closed_form(alpha):
    a = np.asarray(alpha, dtype=float)
    return 2.0 * a * (a * a + 5.0) / (3.0 * (a * a + 1.0))


@dataclass(frozen=True)
class ClosureTables:
    """All alpha-dependent coefficients for one alpha, or a batch of them.

    Arrays carry an optional leading batch axis. ``kappa[..., j, k]`` is
    int mu^j phi_k omega for 0 <= j, k <= N+1, likewise ``kappa_tilde``.
    ``dkappa`` is d kappa / d alpha. ``dproj[..., k, i]`` is the coefficient
    of Phi~_k in d Phi_i / d alpha.
    """

    alpha: np.ndarray
    N: int
    kappa: np.ndarray
    kappa_tilde: np.ndarray
    dkappa: np.ndarray
    R: np.ndarray
    M_tilde: np.ndarray
    dproj: np.ndarray
    coeffs: np.ndarray
    coeffs_tilde: np.ndarray

    @property
    def diag(self):
        return np.diagonal(self.kappa, axis1=-2, axis2=-1)[..., : self.N + 1]

    @property
    def diag_tilde(self):
        return np.diagonal(self.kappa_tilde, axis1=-2, axis2=-1)[..., : self.N + 1]

    @property
    def beta(self):
        return self.diag / self.diag_tilde

    @property
    def Lambda_tilde(self):
        d = self.diag_tilde
        return d[..., :, None] * np.eye(self.N + 1)

    def __getitem__(self, idx):
        """Select a sub-batch along the leading axis."""
        return ClosureTables(
            self.alpha[idx], self.N,
            *(getattr(self, f)[idx] for f in
              ("kappa", "kappa_tilde", "dkappa", "R", "M_tilde", "dproj", "coeffs", "coeffs_tilde")),
        )


def auto_nodes(alphas):
    """Shortest Gauss rule that reproduces the 128-node tables to round-off.

    The weight's pole sits at mu = -1/alpha, so the rule can shrink when
    every |alpha| is moderate (checked for N <= 8 in the test suite).
    """
    amax = float(np.max(np.abs(alphas))) if np.size(alphas) else 0.0
    if amax <= 0.5:
        return 32
    if amax <= 0.8:
        return 64
    return QUAD_NODES


def _build(alphas, N, nodes):
    alphas = np.asarray(alphas, dtype=float)
    if nodes is None:
        nodes = auto_nodes(alphas)
    x, w = gauss_legendre(nodes)
    uniq, inv = np.unique(alphas, return_inverse=True)
    if uniq.size < alphas.size:
        raw = kernels.closure_batch(uniq, N, x, w)
        return {k: v[inv] for k, v in raw.items()}
    return kernels.closure_batch(alphas, N, x, w)


@lru_cache(maxsize=4096)
def _cached(key, N, nodes):
    a = key * 1e-12
    raw = _build(np.array([a]), N, nodes)
    for v in raw.values():
        v.setflags(write=False)
    return a, {k: v[0] for k, v in raw.items()}


def closure_tables(alpha, N=DEFAULT_N, nodes=QUAD_NODES, alpha_max=ALPHA_MAX):
    """Closure tables for a scalar alpha (memoised) or an array of alphas.

    ``nodes=None`` picks the rule size from the largest |alpha| (arrays only).
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    a = _check_alpha(alpha, alpha_max)
    if a.ndim == 0:
        aq, raw = _cached(int(round(float(a) * 1e12)), int(N), int(nodes or QUAD_NODES))
        alpha_out = np.float64(aq)
    else:
        shape = a.shape
        raw = _build(a.reshape(-1), N, nodes)
        raw = {k: v.reshape(shape + v.shape[1:]) for k, v in raw.items()}
        alpha_out = a
    return ClosureTables(
        alpha_out, int(N), raw["kappa"], raw["kappa_t"], raw["dkappa"], raw["R"],
        raw["Mt"], raw["dproj"], raw["coeffs"], raw["coeffs_t"],
    )


def r_coefficient(i, alpha, N=None):
    """R_i = int phi~_i dmu."""
    N = max(DEFAULT_N, i) if N is None else N
    if not 0 <= i <= N:
        raise ValueError("index out of range")
    return float(closure_tables(float(alpha), N).R[i])


def d_tilde_matrix(w, tables):
    """Jacobian of the Phi~-coordinates of sum_i f_i Phi_i w.r.t. w.

    ``w = (f0, alpha, f2, ..., fN)``, optionally batched. Column i (i != 1)
    has beta_i on row i and alpha on row i+1; column 1 is the projection of
    sum_i f_i d Phi_i / d alpha.
    """
    w = np.asarray(w, dtype=float)
    N = tables.N
    n = N + 1
    alpha = w[..., 1]
    f = w.copy()
    f[..., 1] = 0.0
    beta = tables.beta
    D = np.zeros(w.shape[:-1] + (n, n))
    idx = np.arange(n)
    D[..., idx, idx] = beta
    D[..., idx[1:], idx[:-1]] = alpha[..., None]
    D[..., :, 1] = np.einsum("...ki,...i->...k", tables.dproj, f)
    return D


def check_d_tilde(D, scale=1.0):
    det = np.linalg.det(D)
    if np.any(np.abs(det) <= 1e-12 * scale) or not np.all(np.isfinite(det)):
        raise DegeneracyError("singular D~ at the given radiation state")
    return det


def radiation_matrix(w, tables):
    """D~^{-1} M~ D~ for the radiation block."""
    D = d_tilde_matrix(w, tables)
    check_d_tilde(D)
    return np.linalg.solve(D, tables.M_tilde @ D)


def radiation_spectrum(w, tables):
    """Eigenvalues of D~^{-1} M~ D~ as (spectral radius, max |imag part|)."""
    ev = np.linalg.eigvals(radiation_matrix(w, tables))
    return np.max(np.abs(ev), axis=-1), np.max(np.abs(ev.imag), axis=-1)
