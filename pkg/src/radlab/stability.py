"""Numerical certification of the structural stability condition.

The three requirements checked at equilibrium states U_eq (eps = 0) are

  (i)   P Q_U P^{-1} = diag(0, S) with S invertible;
  (ii)  A0 A(U; eps) symmetric with A0 symmetric positive definite;
  (iii) A0 Q_U + Q_U^T A0 + P^T diag(0, 0, 0, 1, I_N) P <= 0.

Everything is evaluated in floating point with scale-relative tolerances.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .model import (
    DEFAULT_MODEL,
    assemble_A,
    equilibrium_state,
    inverse_tilde,
    source_Q,
    symmetrizer_A0,
    tilde_system,
    tilde_transform,
)


class PreconditionError(ValueError):
    """Input state is not on the equilibrium manifold."""


class CertificationError(ValueError):
    """Invalid certification parameter a."""


SAMPLE_BOX = {"rho": (0.5, 2.0), "theta": (0.5, 2.0), "v": (-1.0, 1.0)}


def _eq_check(U, model, tol=1e-10):
    q = source_Q(U, 0.0, model=model)
    scale = max(1.0, float(np.max(np.abs(U))))
    if np.max(np.abs(q)) > tol * scale:
        raise PreconditionError("state is off the equilibrium manifold")


def fd_jacobian(fun, U, rel_step=1e-6):
    """Central-difference Jacobian with per-component scaled steps."""
    U = np.asarray(U, dtype=float)
    f0 = np.asarray(fun(U))
    J = np.zeros((f0.size, U.size))
    for j in range(U.size):
        h = rel_step * max(1.0, abs(U[j]))
        e = np.zeros_like(U)
        e[j] = h
        J[:, j] = (np.asarray(fun(U + e)) - np.asarray(fun(U - e))) / (2.0 * h)
    return J


def _hydro_parts(U, model):
    theta, t_rho, t_m, t_E = model.theta_and_partials(U[:3])
    bp = model.dplanck(theta)
    sa, _ = model.sigmas(theta)
    return float(theta), np.array([t_rho, t_m, t_E], dtype=float), float(bp), float(sa)


def q1_block(U_eq, model=DEFAULT_MODEL):
    """Rank-one 4x4 block of Q_U on (rho, m, En, f0)."""
    rho = U_eq[0]
    _, tu, bp, sa = _hydro_parts(U_eq, model)
    K = rho * sa * np.concatenate([-bp * tu, [2.0]])
    Q1 = np.zeros((4, 4))
    Q1[2] = K
    Q1[3] = -0.5 * K
    return Q1, K


def jacobian_QU(U_eq, tables=None, model=DEFAULT_MODEL, check=True):
    """Analytic d Q / d U at an equilibrium state for eps = 0."""
    U_eq = np.asarray(U_eq, dtype=float)
    if check:
        _eq_check(U_eq, model)
    n = U_eq.size
    _, _, _, sa = _hydro_parts(U_eq, model)
    QU = np.zeros((n, n))
    QU[:4, :4] = q1_block(U_eq, model)[0]
    QU[4:, 4:] = -U_eq[0] * sa * np.eye(n - 4)
    return QU


def fd_jacobian_QU(U_eq, model=DEFAULT_MODEL, rel_step=1e-6):
    return fd_jacobian(lambda V: source_Q(V, 0.0, model=model), U_eq, rel_step)


def build_P(U_eq, a, model=DEFAULT_MODEL):
    """P = a diag(P1, I_N)."""
    if a == 0:
        raise CertificationError("a must be non-zero")
    U_eq = np.asarray(U_eq, dtype=float)
    _, tu, bp, _ = _hydro_parts(U_eq, model)
    n = U_eq.size
    P = np.eye(n)
    P[2, 3] = 2.0
    P[3, :3] = -bp * tu
    P[3, 3] = 2.0
    return a * P


def det_P_formula(U_eq, a, model=DEFAULT_MODEL):
    """det P = a^{N+4} 2 (1 + b' theta_E)."""
    _, tu, bp, _ = _hydro_parts(np.asarray(U_eq, dtype=float), model)
    return a ** len(U_eq) * 2.0 * (1.0 + bp * tu[2])


def a_max_branches(U_eq, tables=None, model=DEFAULT_MODEL):
    """The three upper bounds for a^2 (radiation, alpha, hydro)."""
    U_eq = np.asarray(U_eq, dtype=float)
    rho = U_eq[0]
    theta, tu, bp, sa = _hydro_parts(U_eq, model)
    b = float(model.planck(theta))
    t0 = model.tables(0.0) if tables is None else tables
    N = len(U_eq) - 4
    kt = t0.diag_tilde
    beta = t0.beta
    rad = min(2.0 * rho * sa * beta[k] * kt[k] for k in range(2, N + 1))
    alp = 16.0 / 3.0 * rho * sa * b * b
    Th = float(np.dot(tu, tu))
    hyd = rho * sa * (4.0 + 2.0 * bp * Th / theta**2) / (4.0 + bp * bp * Th)
    return rad, alp, hyd


def a_max(U_eq, tables=None, model=DEFAULT_MODEL):
    return float(np.sqrt(min(a_max_branches(U_eq, tables, model))))


def _check_a(U_eq, a, model):
    if a == 0:
        raise CertificationError("a must be non-zero")
    am = a_max(U_eq, model=model)
    if a * a > am * am * (1.0 + 1e-12):
        raise CertificationError(f"a^2 = {a * a:g} exceeds a_max^2 = {am * am:g}")


@dataclass
class ConditionI:
    block_residual: float
    min_singular: float
    singular_bound: float
    hydro_scalar: float
    passed: bool


def check_condition_i(U_eq, a=None, model=DEFAULT_MODEL, tol=1e-10):
    U_eq = np.asarray(U_eq, dtype=float)
    _eq_check(U_eq, model)
    a = 0.9 * a_max(U_eq, model=model) if a is None else a
    _check_a(U_eq, a, model)
    QU = jacobian_QU(U_eq, model=model, check=False)
    P = build_P(U_eq, a, model)
    M = P @ QU @ np.linalg.inv(P)
    scale = np.linalg.norm(QU, np.inf)
    res = max(np.abs(M[:3, :3]).max(), np.abs(M[:3, 3:]).max(), np.abs(M[3:, :3]).max())
    S = M[3:, 3:]
    smin = np.linalg.svd(S, compute_uv=False)[-1]
    _, tu, bp, sa = _hydro_parts(U_eq, model)
    bound = U_eq[0] * sa * min(1.0, 1.0 + bp * tu[2]) * (1.0 - 1e-6)
    passed = res <= tol * scale and smin >= bound
    return ConditionI(float(res / scale), float(smin), float(bound), float(M[3, 3]), bool(passed))


def condition_ii_residual(U, eps, tables=None, model=DEFAULT_MODEL):
    """Relative asymmetry of A0 A and the smallest eigenvalue of A0."""
    A0 = symmetrizer_A0(U, tables, model)
    A = assemble_A(U, eps, tables, model)
    S = A0 @ A
    res = np.abs(S - np.swapaxes(S, -1, -2)).max() / max(np.abs(S).max(), 1e-300)
    lam = np.linalg.eigvalsh(A0)[..., 0]
    return float(res), float(np.min(lam))


def condition_iii_matrix(U_eq, a, model=DEFAULT_MODEL, radiation_scale=None):
    U_eq = np.asarray(U_eq, dtype=float)
    A0 = symmetrizer_A0(U_eq, model=model, radiation_scale=radiation_scale)
    QU = jacobian_QU(U_eq, model=model, check=False)
    P = build_P(U_eq, a, model) if a != 0 else np.zeros_like(QU)
    sel = np.eye(len(U_eq))
    sel[[0, 1, 2], [0, 1, 2]] = 0.0
    return A0 @ QU + QU.T @ A0 + P.T @ sel @ P, A0 @ QU


def check_condition_iii(U_eq, a=None, model=DEFAULT_MODEL, radiation_scale=None):
    """(lambda_max, scale) of the condition-(iii) matrix."""
    U_eq = np.asarray(U_eq, dtype=float)
    _eq_check(U_eq, model)
    if a is None:
        a = 0.9 * a_max(U_eq, model=model)
    if a != 0 and radiation_scale is None:
        _check_a(U_eq, a, model)
    W, AQ = condition_iii_matrix(U_eq, a, model, radiation_scale)
    lam = np.linalg.eigvalsh(0.5 * (W + W.T))[-1]
    return float(lam), float(np.linalg.norm(AQ, np.inf))


def repaired_radiation_scale(U_eq, model=DEFAULT_MODEL):
    """Radiation-block weight 2/(theta^2 b') aligning the hydro coupling terms."""
    theta, _, bp, _ = _hydro_parts(np.asarray(U_eq, dtype=float), model)
    return 2.0 / (theta * theta * bp)


def repaired_a_max(U_eq, model=DEFAULT_MODEL):
    U_eq = np.asarray(U_eq, dtype=float)
    s = repaired_radiation_scale(U_eq, model)
    theta, _, bp, sa = _hydro_parts(U_eq, model)
    rho = U_eq[0]
    rad, alp, _ = a_max_branches(U_eq, model=model)
    return float(np.sqrt(min(s * rad, s * alp, 2.0 * rho * sa / (theta * theta * bp))))


def rank_one_identity_residual(U_eq, a, model=DEFAULT_MODEL):
    """|| P1^T diag(0,0,0,1) P1 - a^2 K^T K / (rho sigma_a)^2 ||."""
    P = build_P(U_eq, a, model)[:4, :4]
    _, K = q1_block(U_eq, model)
    _, _, _, sa = _hydro_parts(U_eq, model)
    lhs = np.outer(P[3], P[3])
    rhs = a * a * np.outer(K, K) / (U_eq[0] * sa) ** 2
    return float(np.abs(lhs - rhs).max() / np.abs(rhs).max())


@dataclass
class TildeStructure:
    a11_norm: float
    da11_norm: float
    a21_singular: tuple
    a0_offdiag: float
    a0_offdiag_repaired: float
    passed: bool


def check_tilde_structure(U_eq, model=DEFAULT_MODEL, fd_step=1e-6):
    """Structure of the tilde system at eps = 0: A~11, its derivative and the rank of A~21."""
    U_eq = np.asarray(U_eq, dtype=float)
    _eq_check(U_eq, model)
    At, _ = tilde_system(U_eq, 0.0, model=model)
    a11 = np.abs(At[:3, :3]).max()
    sv = np.linalg.svd(At[3:, :3], compute_uv=False)
    Ut = tilde_transform(U_eq, 0.0, model=model).Ut
    da = 0.0
    for j in range(3):
        h = fd_step * max(1.0, abs(Ut[j]))
        blocks = []
        for sgn in (1.0, -1.0):
            V = Ut.copy()
            V[j] += sgn * h
            Uj = inverse_tilde(V, 0.0, model)
            blocks.append(tilde_system(Uj, 0.0, model=model)[0][:3, :3])
        da = max(da, np.abs(blocks[0] - blocks[1]).max() / (2.0 * h))
    tr = tilde_transform(U_eq, 0.0, model=model)
    off = []
    for s in (None, repaired_radiation_scale(U_eq, model)):
        A0t = tr.Dinv.T @ symmetrizer_A0(U_eq, model=model, radiation_scale=s) @ tr.Dinv
        off.append(np.abs(A0t[:3, 3:]).max() / np.abs(A0t).max())
    passed = a11 <= 1e-10 and da <= 1e-6 and sv[1] <= 1e-8 * sv[0] and sv[0] > 0
    return TildeStructure(float(a11), float(da), tuple(float(x) for x in sv), float(off[0]), float(off[1]), bool(passed))


@dataclass
class StateRecord:
    rho: float
    v: float
    theta: float
    N: int
    a: float
    a_max: float
    cond_i_residual: float
    cond_i_min_singular: float
    cond_i_pass: bool
    cond_ii_residual: float
    cond_ii_pass: bool
    cond_iii_lambda: float
    cond_iii_scale: float
    cond_iii_pass: bool
    repaired_lambda: float
    repaired_pass: bool
    a11_norm: float
    da11_norm: float
    a21_sigma1: float
    a21_sigma2: float
    tilde_pass: bool
    a_certified: float

    @property
    def passed(self):
        return self.cond_i_pass and self.cond_ii_pass and self.cond_iii_pass and self.tilde_pass


@dataclass
class StabilityReport:
    records: list = field(default_factory=list)
    offeq_residual: float = 0.0
    offeq_pass: bool = True

    @property
    def n_pass(self):
        return sum(r.passed for r in self.records)

    @property
    def passed(self):
        return self.offeq_pass and self.n_pass == len(self.records)

    @property
    def worst_cond_iii(self):
        return max((r.cond_iii_lambda / r.cond_iii_scale for r in self.records), default=0.0)

    def summary(self):
        k = len(self.records)
        if self.passed:
            return f"PASS {k}/{k}"
        return (f"FAIL {self.n_pass}/{k} passed; worst condition-(iii) margin "
                f"lambda_max/scale = {self.worst_cond_iii:.6e}; off-equilibrium symmetry "
                f"residual = {self.offeq_residual:.3e}")


def largest_certifiable_a(U_eq, model=DEFAULT_MODEL, tol=1e-10, iters=40):
    """Bisection for the largest a with condition (iii) certified; 0 if none."""
    am = a_max(U_eq, model=model)
    lam0, scale = check_condition_iii(U_eq, 1e-300, model)
    if lam0 > tol * scale:
        return 0.0
    lo, hi = 0.0, am
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        lam, scale = check_condition_iii(U_eq, mid, model)
        lo, hi = (mid, hi) if lam <= tol * scale else (lo, mid)
    return lo


def certify_state(rho, v, theta, N, model=DEFAULT_MODEL, tol=1e-10):
    m = replace(model, N=N)
    U = equilibrium_state(rho, v, theta, N, m)
    am = a_max(U, model=m)
    a = 0.9 * am
    ci = check_condition_i(U, a, m, tol)
    res2, lam0 = condition_ii_residual(U, 0.0, model=m)
    lam3, scale = check_condition_iii(U, a, m)
    s = repaired_radiation_scale(U, m)
    lam3r, scale_r = check_condition_iii(U, 0.9 * repaired_a_max(U, m), m, radiation_scale=s)
    ts = check_tilde_structure(U, m)
    return StateRecord(
        float(rho), float(v), float(theta), int(N), float(a), float(am),
        ci.block_residual, ci.min_singular, ci.passed,
        res2, bool(res2 <= tol and lam0 > 0),
        lam3, scale, bool(lam3 <= tol * scale),
        lam3r, bool(lam3r <= tol * scale_r),
        ts.a11_norm, ts.da11_norm, ts.a21_singular[0], ts.a21_singular[1], ts.passed,
        largest_certifiable_a(U, m, tol),
    )


def sample_states(rng, n, Ns=(2, 3, 4), box=SAMPLE_BOX):
    out = []
    for _ in range(n):
        rho = rng.uniform(*box["rho"])
        theta = rng.uniform(*box["theta"])
        v = rng.uniform(*box["v"])
        N = int(rng.choice(Ns))
        out.append((rho, v, theta, N))
    return out


def random_offeq_state(rng, N, model=DEFAULT_MODEL, amp=0.2):
    m = replace(model, N=N)
    rho = rng.uniform(*SAMPLE_BOX["rho"])
    theta = rng.uniform(*SAMPLE_BOX["theta"])
    v = rng.uniform(*SAMPLE_BOX["v"])
    U = equilibrium_state(rho, v, theta, N, m)
    w = U[3:]
    w[0] *= rng.uniform(0.5, 1.5)
    w[1] = rng.uniform(-0.8, 0.8)
    w[2:] = amp * w[0] * rng.uniform(-1.0, 1.0, N - 1)
    return U, m


def run_stability_sweep(seed=0, n_states=100, Ns=(2, 3, 4), model=DEFAULT_MODEL, tol=1e-10,
                        n_offeq=100, eps_list=(0.0, 0.1, 0.5)):
    rng = np.random.Generator(np.random.Philox(seed))
    report = StabilityReport()
    for rho, v, theta, N in sample_states(rng, n_states, Ns):
        report.records.append(certify_state(rho, v, theta, N, model, tol))
    worst = 0.0
    for i in range(n_offeq):
        N = int(rng.choice(Ns))
        U, m = random_offeq_state(rng, N, model)
        eps = eps_list[i % len(eps_list)]
        res, lam = condition_ii_residual(U, eps, model=m)
        worst = max(worst, res)
        if lam <= 0:
            report.offeq_pass = False
    report.offeq_residual = worst
    report.offeq_pass = report.offeq_pass and worst <= tol
    return report
