"""Non-relativistic limit: limit system, first corrector, initial layer, eps sweep.

The eps -> 0 limit of the coupled system is

    rho_t + (rho v)_x = 0,
    (rho v)_t + (rho v^2 + p + b/3)_x = 0,
    (rho E + b)_t + (rho E v + p v)_x = ((1/(3 rho sigma_a)) b_x)_x.
"""

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp
from scipy.sparse import block_diag

from .closure import d_tilde_matrix
from .model import (
    DEFAULT_MODEL,
    StateError,
    inverse_tilde,
    moments_from_w,
    s_hat,
    tilde_system,
    tilde_transform,
    theta_from_total_energy,
)
from .solver import (
    FieldState,
    Grid1D,
    SolverConfig,
    diffusion_speed,
    error_norms,
    hydro_speed,
    run,
)


class LayerError(ArithmeticError):
    """Initial layer did not decay."""


class InconclusiveError(RuntimeError):
    """Grid-sensitivity guard tripped."""


def recover_theta(rho, m, Z, model=DEFAULT_MODEL):
    """theta solving rho e(theta) + m^2/(2 rho) + b(theta) = Z."""
    return theta_from_total_energy(rho, m, Z, model)


@dataclass
class LimitField:
    """Per-cell (rho, m, Z = rho E + b) on a periodic grid."""

    q: np.ndarray
    t: float
    grid: Grid1D

    def copy(self):
        return LimitField(self.q.copy(), self.t, self.grid)

    def theta(self, model=DEFAULT_MODEL):
        return recover_theta(self.q[:, 0], self.q[:, 1], self.q[:, 2], model)

    def to_full(self, model=DEFAULT_MODEL):
        """Equilibrium U = (rho, m, En, b/2, 0, ...) from the limit variables."""
        theta = self.theta(model)
        b = model.planck(theta)
        U = np.zeros((self.q.shape[0], model.N + 4))
        U[:, :2] = self.q[:, :2]
        U[:, 2] = self.q[:, 2] - b
        U[:, 3] = 0.5 * b
        return U


def limit_field_from_full(state, model=DEFAULT_MODEL):
    """Limit data (rho, m + eps E1, En + E0) from a full state (totals)."""
    U = state.U
    tb = model.tables(U[:, 4], nodes=None)
    E0, E1, _, _ = moments_from_w(U[:, 3:], tb)
    q = np.stack([U[:, 0], U[:, 1] + state.eps * E1, U[:, 2] + E0], axis=1)
    return LimitField(q, state.t, state.grid)


def limit_rhs_parts(field, model=DEFAULT_MODEL):
    q = field.q
    dx = field.grid.dx
    rho, m, Z = q[:, 0], q[:, 1], q[:, 2]
    theta = recover_theta(rho, m, Z, model)
    b = model.planck(theta)
    v = m / rho
    p = model.pressure(rho, theta)
    En = Z - b
    F = np.stack([m, m * v + p + b / 3.0, (En + p) * v], axis=1)
    u = np.stack([rho, m, En], axis=1)
    c = hydro_speed(u, model)
    ci = np.maximum(c, np.roll(c, -1))
    Fi = 0.5 * (F + np.roll(F, -1, axis=0)) - 0.5 * ci[:, None] * (np.roll(q, -1, axis=0) - q)
    sa, _ = model.sigmas(theta)
    kap = 1.0 / (3.0 * rho * sa)
    ki = 0.5 * (kap + np.roll(kap, -1))
    Gi = ki * (np.roll(b, -1) - b) / dx
    return Fi, Gi, c, u


def limit_dt(field, cfl=0.8, parabolic_cfl=0.4, model=DEFAULT_MODEL):
    _, _, c, u = limit_rhs_parts(field, model)
    dx = field.grid.dx
    dmax = float(np.max(diffusion_speed(np.concatenate([u, np.zeros((u.shape[0], 1))], axis=1), model)))
    return min(cfl * dx / float(np.max(c)), parabolic_cfl * dx * dx / dmax)


def diffusion_operator(b, rho, grid, model=DEFAULT_MODEL, theta=None):
    """Discrete ((1/(3 rho sigma_a)) b_x)_x with the scheme's stencil."""
    theta = np.ones_like(rho) if theta is None else theta
    sa, _ = model.sigmas(theta)
    kap = 1.0 / (3.0 * rho * sa)
    ki = 0.5 * (kap + np.roll(kap, -1))
    Gi = ki * (np.roll(b, -1) - b) / grid.dx
    return (Gi - np.roll(Gi, 1)) / grid.dx


def limit_step(field, dt, model=DEFAULT_MODEL):
    Fi, Gi, _, _ = limit_rhs_parts(field, model)
    dx = field.grid.dx
    flux = Fi.copy()
    flux[:, 2] -= Gi
    qn = field.q - dt / dx * (flux - np.roll(flux, 1, axis=0))
    if np.any(qn[:, 0] <= 0):
        raise StateError("negative density in the limit solver")
    return LimitField(qn, field.t + dt, field.grid)


@dataclass
class LimitTrajectory:
    final: LimitField
    times: list = field(default_factory=list)
    integrals: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    steps: int = 0


def limit_run(initial, T, cfl=0.8, parabolic_cfl=0.4, model=DEFAULT_MODEL, snapshot_every=0):
    """Explicit finite-volume integration of the limit system to time T."""
    f = initial.copy()
    traj = LimitTrajectory(final=f)
    traj.times.append(f.t)
    traj.integrals.append(f.q.sum(axis=0) * f.grid.dx)
    t_end = initial.t + T
    while f.t < t_end * (1 - 1e-14):
        dt = min(limit_dt(f, cfl, parabolic_cfl, model), t_end - f.t)
        f = limit_step(f, dt, model)
        traj.steps += 1
        traj.times.append(f.t)
        traj.integrals.append(f.q.sum(axis=0) * f.grid.dx)
        if snapshot_every and traj.steps % snapshot_every == 0:
            traj.snapshots.append(f.copy())
    traj.final = f
    return traj


def _tilde_blocks(U_eq, model):
    """(A~21, q_w) at an equilibrium state with eps = 0."""
    At, _ = tilde_system(U_eq, 0.0, model=model)
    tr = tilde_transform(U_eq, 0.0, model=model)
    from .stability import jacobian_QU

    QU = jacobian_QU(U_eq, model=model, check=False)
    Qt = tr.D @ QU @ tr.Dinv
    return At[3:, :3], Qt[3:, 3:]


def corrector_w1(field, model=DEFAULT_MODEL):
    """w1 = q_w^{-1} A~21 d_x u0 per cell, in tilde radiation variables."""
    U = field.to_full(model)
    dx = field.grid.dx
    du = (np.roll(field.q, -1, axis=0) - np.roll(field.q, 1, axis=0)) / (2.0 * dx)
    w1 = np.zeros((U.shape[0], model.N + 1))
    for i in range(U.shape[0]):
        A21, qw = _tilde_blocks(U[i], model)
        w1[i] = np.linalg.solve(qw, A21 @ du[i])
    return w1


def alpha1_identity(field, model=DEFAULT_MODEL):
    """alpha1 from kappa10'(0) alpha1 f0 = -(1/(3 rho sigma_a)) d_x b, kappa10'(0) = -8/3."""
    theta = field.theta(model)
    b = model.planck(theta)
    rho = field.q[:, 0]
    sa, _ = model.sigmas(theta)
    db = (np.roll(b, -1) - np.roll(b, 1)) / (2.0 * field.grid.dx)
    k10p = float(model.tables(0.0).dkappa[1, 0])
    return -(db / (3.0 * rho * sa)) / (k10p * 0.5 * b)


@dataclass
class LayerProfile:
    tau: np.ndarray
    I: np.ndarray
    norm: np.ndarray
    rate: float
    window: tuple
    linear_rate: float = float("nan")


def _layer_rhs_factory(q, model):
    M = q.shape[0]
    n = model.N + 1

    def unpack(y):
        w = y.reshape(M, n)
        tb = model.tables(np.clip(w[:, 1], -model.alpha_max, model.alpha_max), nodes=None)
        E0, _, _, _ = moments_from_w(w, tb)
        U = np.empty((M, n + 3))
        U[:, 0] = q[:, 0]
        U[:, 1] = q[:, 1]
        U[:, 2] = q[:, 2] - E0
        U[:, 3:] = w
        return U, tb

    def rhs(tau, y):
        U, tb = unpack(y)
        D = d_tilde_matrix(U[:, 3:], tb)
        return np.linalg.solve(D, s_hat(U, 0.0, tb, model)[..., None])[..., 0].ravel()

    return rhs, unpack


def layer_variables(U, model=DEFAULT_MODEL):
    """I = w~ = (kappa00 f0 - b(theta), alpha, f2, ...) per cell."""
    tb = model.tables(U[:, 4], nodes=None)
    I = U[:, 3:].copy()
    I[:, 0] = tb.kappa[:, 0, 0] * U[:, 3] - model.planck(model.theta(U[:, :3]))
    return I


def layer_linear_rate(U_eq, model=DEFAULT_MODEL):
    """min |Re eig(q_w)| at equilibrium."""
    _, qw = _tilde_blocks(U_eq, model)
    return float(np.min(np.abs(np.linalg.eigvals(qw).real)))


def integrate_layer(U0, tau_eval, model=DEFAULT_MODEL, rtol=1e-10, atol=None):
    """Integrate the layer ODE dw/dtau = q(u, w; 0) at fixed totals for all cells.

    The unknown is the offset from the equilibrium of the frozen totals, so
    the tolerances act on the decaying part rather than on f0 itself. The
    default ``atol`` is 1e-10 of the initial offset; tighter values only
    chase round-off once the layer has died out.
    """
    U0 = np.atleast_2d(np.asarray(U0, dtype=float))
    M = U0.shape[0]
    n = model.N + 1
    tb = model.tables(U0[:, 4], nodes=None)
    E0, _, _, _ = moments_from_w(U0[:, 3:], tb)
    q = np.stack([U0[:, 0], U0[:, 1], U0[:, 2] + E0], axis=1)
    w_eq = np.zeros((M, n))
    w_eq[:, 0] = 0.5 * model.planck(theta_from_total_energy(q[:, 0], q[:, 1], q[:, 2], model))
    base = w_eq.ravel()
    y0 = (U0[:, 3:] - w_eq).ravel()
    if atol is None:
        atol = max(1e-10 * float(np.max(np.abs(y0))), 1e-15)
    rhs_w, unpack = _layer_rhs_factory(q, model)
    sparsity = block_diag([np.ones((n, n))] * M, format="csr")
    tau_eval = np.asarray(tau_eval, dtype=float)
    sol = solve_ivp(lambda tau, y: rhs_w(tau, base + y), (0.0, float(tau_eval[-1])),
                    y0, method="Radau", t_eval=tau_eval, rtol=rtol,
                    atol=atol, jac_sparsity=sparsity)
    if not sol.success:
        raise LayerError(f"layer integration failed: {sol.message}")
    out = np.empty((tau_eval.size, M, n + 3))
    for k in range(tau_eval.size):
        out[k], _ = unpack(base + sol.y[:, k])
    return out


def initial_layer(u0_bar, w0_bar, tau_max, model=DEFAULT_MODEL, n_tau=400, threshold=0.5,
                  window=(1e-7, 1e-9)):
    """Layer profile I0(tau) and its fitted exponential decay rate.

    The rate is fitted to log ||I0|| where the relative norm lies inside
    ``window`` (falling back to the final decade of the run).
    """
    u0 = np.atleast_2d(np.asarray(u0_bar, dtype=float))
    w0 = np.atleast_2d(np.asarray(w0_bar, dtype=float))
    U0 = np.concatenate([u0, w0], axis=1)
    I_start = layer_variables(U0, model)
    base = np.linalg.norm(u0, axis=1)
    if np.max(np.linalg.norm(I_start, axis=1) / base) > threshold:
        raise ValueError("initial radiation data too far from equilibrium for the layer analysis")
    tau = np.linspace(0.0, tau_max, n_tau)
    if np.allclose(I_start, 0.0, atol=0.0, rtol=0.0):
        z = np.zeros((n_tau,) + I_start.shape)
        return LayerProfile(tau, z, np.zeros(n_tau), float("inf"), (0.0, 0.0))
    traj = integrate_layer(U0, tau, model)
    I = np.stack([layer_variables(traj[k], model) for k in range(n_tau)])
    norm = np.sqrt(np.sum(I * I, axis=(1, 2)))
    rel = norm / norm[0]
    hi, lo = window
    mask = (rel <= hi) & (rel >= lo)
    if np.count_nonzero(mask) < 5:
        mask = tau >= 0.9 * tau_max
    slope = np.polyfit(tau[mask], np.log(norm[mask]), 1)[0]
    rate = -float(slope)
    if not rate > 0:
        raise LayerError("initial layer does not decay")
    lin = layer_linear_rate(equilibrium_of(u0[0], model), model)
    return LayerProfile(tau, I, norm, rate, (float(tau[mask][0]), float(tau[mask][-1])), lin)


def equilibrium_of(u, model=DEFAULT_MODEL):
    U = np.zeros(model.N + 4)
    U[:3] = u
    U[3] = 0.5 * model.planck(model.theta(u))
    return U


def layer_corrected_state(limit_field, U_initial, t, eps, model=DEFAULT_MODEL, layer=True):
    """Comparator with tilde variables (u0(t), I0(t/eps^2)) mapped back at ``eps``.

    ``layer=False`` drops I0 and gives the plain limit comparator through
    the same map, so the two differ only by the layer term.
    """
    Uinit = np.atleast_2d(np.asarray(U_initial, dtype=float))
    if layer:
        traj = integrate_layer(Uinit, np.array([0.0, t / eps**2]), model)
        I = layer_variables(traj[-1], model)
    else:
        I = np.zeros((Uinit.shape[0], model.N + 1))
    Ut = np.concatenate([limit_field.q, I], axis=1)
    return np.stack([inverse_tilde(Ut[i], eps, model) for i in range(Ut.shape[0])])


@dataclass
class LayerComparison:
    eps: float
    t: float
    err_plain: float
    err_layer: float

    @property
    def ratio(self):
        return self.err_plain / self.err_layer


def layer_comparison(eps=0.1, M=64, profile="sine", amplitude=0.02, perturbation=None,
                     config=SolverConfig(), model=DEFAULT_MODEL):
    """L2 error at t = eps^2 of unprepared data against U0 and against U0 + I0."""
    grid = Grid1D(M)
    st = initial_field(grid, eps, profile, amplitude, False, False, model, perturbation)
    t = eps**2
    U = run(st, t, config, model).final.U
    ref = limit_run(limit_field_from_full(st, model), t, model=model).final
    plain = layer_corrected_state(ref, st.U, t, eps, model, layer=False)
    corrected = layer_corrected_state(ref, st.U, t, eps, model)
    return LayerComparison(eps, t, error_norms(U, plain, 0, grid), error_norms(U, corrected, 0, grid))


# ---------------------------------------------------------------- eps sweep

PROFILES = {
    "sine": lambda x, A: (np.ones_like(x), np.zeros_like(x), 1.0 + A * np.sin(2 * np.pi * x)),
    "sine_flow": lambda x, A: (1.0 + 0.5 * A * np.cos(2 * np.pi * x), A * np.sin(2 * np.pi * x),
                               1.0 + A * np.sin(2 * np.pi * x)),
}


def initial_field(grid, eps, profile="sine", amplitude=0.1, prepared=True, corrector=False,
                  model=DEFAULT_MODEL, perturbation=None):
    x = grid.x
    rho, v, theta = PROFILES[profile](x / grid.L, amplitude)
    from .model import equilibrium_state

    U = equilibrium_state(rho, v, theta, model.N, model)
    if corrector:
        lf = limit_field_from_full(FieldState(U, 0.0, eps, grid), model)
        U[:, 4] += eps * corrector_w1(lf, model)[:, 1]
    if not prepared:
        pert = default_perturbation(x / grid.L, model) if perturbation is None else perturbation
        U[:, 3:] += pert
    return FieldState(U, 0.0, eps, grid)


def default_perturbation(x, model=DEFAULT_MODEL, amplitude=0.1):
    """Smooth non-equilibrium radiation offset used for unprepared data."""
    p = np.zeros((x.size, model.N + 1))
    p[:, 0] = amplitude * (1.0 + 0.5 * np.cos(2 * np.pi * x))
    p[:, 1] = amplitude * (1.0 + 0.5 * np.sin(2 * np.pi * x))
    if model.N >= 2:
        p[:, 2] = amplitude * 0.5
    return p


@dataclass
class ConvergenceResult:
    eps: list
    err_L2: list
    err_H1: list
    order_pairwise_L2: list
    order_pairwise_H1: list
    order_L2: float
    order_H1: float
    guard_change: float
    guard_eps: float
    monotone: bool
    inconclusive: bool
    runtime_steps: list = field(default_factory=list)

    def rows(self):
        for i, e in enumerate(self.eps):
            yield (e, self.err_L2[i], self.err_H1[i],
                   self.order_pairwise_L2[i - 1] if i else float("nan"))


def lsq_order(eps, err):
    return float(np.polyfit(np.log(eps), np.log(err), 1)[0])


def _one(args):
    eps, M, T, L, profile, amplitude, corrector, config, model = args
    grid = Grid1D(M, L)
    st = initial_field(grid, eps, profile, amplitude, True, corrector, model)
    art = run(st, T, config, model)
    return art.final.U, art.steps, art.mass_drift


def _workers(n):
    cap = int(os.environ.get("RADLAB_THREADS", "0") or 0)
    if cap <= 0:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n))


def _map(args_list):
    nw = _workers(len(args_list))
    if nw == 1:
        return [_one(a) for a in args_list]
    with ProcessPoolExecutor(max_workers=nw) as ex:
        return list(ex.map(_one, args_list))


def limit_reference(grid, T, profile="sine", amplitude=0.1, model=DEFAULT_MODEL, eps=0.1):
    st = initial_field(grid, eps, profile, amplitude, True, False, model)
    lf = limit_field_from_full(st, model)
    return limit_run(lf, T, model=model).final


def convergence_study(eps_list=(0.2, 0.1, 0.05, 0.025), M=256, T=0.1, L=1.0, profile="sine",
                      amplitude=0.1, corrector=False, config=SolverConfig(), model=DEFAULT_MODEL,
                      guard=True, guard_tol=0.1, guard_eps=None):
    """Errors ||U^eps(T) - U^0(T)|| for well-prepared data and the fitted order."""
    eps_list = [float(e) for e in eps_list]
    if any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be positive and strictly decreasing")
    grid = Grid1D(M, L)
    args = [(e, M, T, L, profile, amplitude, corrector, config, model) for e in eps_list]
    guard_eps = eps_list[-1] if guard_eps is None else guard_eps
    if guard:
        args.append((guard_eps, 2 * M, T, L, profile, amplitude, corrector, config, model))
    results = _map(args)

    ref = limit_reference(grid, T, profile, amplitude, model).to_full(model)
    e0, e1, steps = [], [], []
    for e, (U, n, _) in zip(eps_list, results):
        e0.append(error_norms(U, ref, 0, grid))
        e1.append(error_norms(U, ref, 1, grid))
        steps.append(n)
    change = 0.0
    if guard:
        g2 = Grid1D(2 * M, L)
        ref2 = limit_reference(g2, T, profile, amplitude, model).to_full(model)
        e_fine = error_norms(results[-1][0], ref2, 0, g2)
        e_coarse = e0[eps_list.index(guard_eps)]
        change = abs(e_fine - e_coarse) / e_coarse
    le = np.log(eps_list)
    pw0 = list(np.diff(np.log(e0)) / np.diff(le))
    pw1 = list(np.diff(np.log(e1)) / np.diff(le))
    monotone = all(b < a for a, b in zip(e0, e0[1:])) and all(b < a for a, b in zip(e1, e1[1:]))
    return ConvergenceResult(eps_list, e0, e1, pw0, pw1, lsq_order(eps_list, e0), lsq_order(eps_list, e1),
                             change, guard_eps, monotone, bool(guard and change >= guard_tol), steps)
