"""Split transport/relaxation integrator on a periodic 1D grid.

The conserved totals (rho, m + eps E1, En + E0) are advanced with
physical fluxes and local Lax-Friedrichs dissipation at the hydrodynamic
speed only, so the scheme stays consistent with the diffusion limit when
eps -> 0. The radiation variables w are advanced quasi-linearly with an
interface-frozen Jacobian and Rusanov dissipation at the radiation speed.
The stiff source is solved implicitly per cell with the totals held fixed,
which conserves them exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from .closure import d_tilde_matrix
from .model import (
    DEFAULT_MODEL,
    StateError,
    equilibrium_w,
    moments_from_w,
    s_hat,
    theta_from_total_energy,
)


class CFLError(ValueError):
    """Time step larger than the stability limit."""


class NewtonError(ArithmeticError):
    """Implicit relaxation solve failed after all step halvings."""


class HyperbolicityAlarm(ArithmeticError):
    """Radiation block with complex eigenvalues."""


@dataclass(frozen=True)
class Grid1D:
    M: int
    L: float = 1.0

    def __post_init__(self):
        if self.M < 8:
            raise ValueError("need at least 8 cells")
        if not self.L > 0:
            raise ValueError("domain length must be positive")

    @property
    def dx(self):
        return self.L / self.M

    @property
    def x(self):
        return (np.arange(self.M) + 0.5) * self.dx


@dataclass
class FieldState:
    U: np.ndarray
    t: float
    eps: float
    grid: Grid1D

    def copy(self):
        return FieldState(self.U.copy(), self.t, self.eps, self.grid)


@dataclass(frozen=True)
class SolverConfig:
    cfl: float = 0.8
    newton_tol: float = 1e-12
    newton_max_iter: int = 30
    splitting: str = "lie"
    snapshot_every: int = 0
    parabolic_cfl: float = 0.4
    source: bool = True
    check_hyperbolicity: bool = False

    def __post_init__(self):
        if not 0 < self.cfl <= 0.9:
            raise ValueError("cfl must lie in (0, 0.9]")
        if self.splitting not in ("lie", "strang"):
            raise ValueError("splitting must be 'lie' or 'strang'")
        if self.newton_tol <= 0 or self.newton_max_iter < 1:
            raise ValueError("invalid Newton settings")


@dataclass
class RunArtifacts:
    final: FieldState
    snapshots: list = field(default_factory=list)
    times: list = field(default_factory=list)
    mass: list = field(default_factory=list)
    momentum: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    steps: int = 0
    newton_iterations: int = 0

    @property
    def mass_drift(self):
        m = np.asarray(self.mass)
        return float(np.max(np.abs(m - m[0])) / abs(m[0]))


def _tab(model, alpha):
    return model.tables(alpha, nodes=None)


def _plus(a):
    return np.roll(a, -1, axis=0)


def totals(U, eps, tables, model=DEFAULT_MODEL):
    """(rho, m + eps E1, En + E0) per cell."""
    E0, E1, _, _ = moments_from_w(U[:, 3:], tables)
    return np.stack([U[:, 0], U[:, 1] + eps * E1, U[:, 2] + E0], axis=1)


def hydro_speed(u, model=DEFAULT_MODEL):
    theta = model.theta(u)
    if np.any(theta <= 0):
        raise StateError("non-positive temperature")
    return np.abs(u[..., 1] / u[..., 0]) + model.sound_speed(u[..., 0], theta)


def radiation_jacobian(w, tables):
    D = d_tilde_matrix(w, tables)
    return np.linalg.solve(D, tables.M_tilde @ D)


def max_wave_speed(state, model=DEFAULT_MODEL, radiation=True, check=False, tables=None):
    """max over cells of the spectral radius of A(U; eps)/eps."""
    U = state.U
    s = float(np.max(hydro_speed(U[:, :3], model)))
    if radiation:
        tb = _tab(model, U[:, 4]) if tables is None else tables
        ev = np.linalg.eigvals(radiation_jacobian(U[:, 3:], tb))
        if check and np.max(np.abs(ev.imag)) > 1e-8:
            raise HyperbolicityAlarm("complex eigenvalues in the radiation block")
        s = max(s, float(np.max(np.abs(ev))) / state.eps)
    return s


def diffusion_speed(U, model=DEFAULT_MODEL):
    """Linearised diffusivity of the relaxed energy equation per cell."""
    theta = model.theta(U[:, :3])
    rho = U[:, 0]
    bp = model.dplanck(theta)
    sa, _ = model.sigmas(theta)
    return bp / (rho * model.e_theta(rho, theta) + bp) / (3.0 * rho * sa)


def stable_dt(state, config, model=DEFAULT_MODEL, tables=None):
    """Hyperbolic CFL step, with a parabolic guard once relaxation is stiff."""
    U = state.U
    dx = state.grid.dx
    speed = max_wave_speed(state, model, check=config.check_hyperbolicity, tables=tables)
    dt = config.cfl * dx / speed
    if config.source:
        rho = U[:, 0]
        sa, _ = model.sigmas(model.theta(U[:, :3]))
        relax = state.eps**2 / float(np.min(rho * sa))
        dpar = config.parabolic_cfl * dx * dx / float(np.max(diffusion_speed(U, model)))
        if dt > relax and dt > dpar:
            dt = max(dpar, relax)
    return dt


def transport_substep(state, dt, config=SolverConfig(), model=DEFAULT_MODEL, tables=None):
    U = state.U
    eps = state.eps
    dx = state.grid.dx
    w = U[:, 3:]
    tb = _tab(model, U[:, 4]) if tables is None else tables
    E0, E1, E2, _ = moments_from_w(w, tb)
    q = np.stack([U[:, 0], U[:, 1] + eps * E1, U[:, 2] + E0], axis=1)

    u = U[:, :3]
    rho = U[:, 0]
    v = U[:, 1] / rho
    p = model.pressure(rho, model.theta(u))
    F = np.stack([U[:, 1], U[:, 1] * v + p + E2, (U[:, 2] + p) * v + E1 / eps], axis=1)
    c = hydro_speed(u, model)
    ci = np.maximum(c, _plus(c))
    Fi = 0.5 * (F + _plus(F)) - 0.5 * ci[:, None] * (_plus(q) - q)
    qn = q - dt / dx * (Fi - np.roll(Fi, 1, axis=0))

    wi = 0.5 * (w + _plus(w))
    ti = _tab(model, wi[:, 1])
    Ai = radiation_jacobian(wi, ti)
    ev = np.linalg.eigvals(Ai)
    if config.check_hyperbolicity and np.max(np.abs(ev.imag)) > 1e-8:
        raise HyperbolicityAlarm("complex eigenvalues in the radiation block")
    si = np.max(np.abs(ev), axis=1)
    speed = max(float(np.max(si)) / eps, float(np.max(c)))
    if dt * speed > dx * (1.0 + 1e-12):
        raise CFLError(f"dt = {dt:g} exceeds dx/speed = {dx / speed:g}")
    dw = _plus(w) - w
    eye = np.eye(w.shape[1])
    Am = 0.5 * (Ai - si[:, None, None] * eye)
    Ap = 0.5 * (Ai + si[:, None, None] * eye)
    flux_m = np.einsum("mij,mj->mi", Am, dw)
    flux_p = np.einsum("mij,mj->mi", Ap, dw)
    wn = w - dt / (eps * dx) * (flux_m + np.roll(flux_p, 1, axis=0))

    tn = _tab(model, wn[:, 1])
    E0n, E1n, _, _ = moments_from_w(wn, tn)
    Un = np.empty_like(U)
    Un[:, 0] = qn[:, 0]
    Un[:, 1] = qn[:, 1] - eps * E1n
    Un[:, 2] = qn[:, 2] - E0n
    Un[:, 3:] = wn
    return FieldState(Un, state.t + dt, eps, state.grid), tn


def _relax_residual(w, wstar, q, eps, dt, model, tables=None):
    tb = _tab(model, w[:, 1]) if tables is None else tables
    E0, E1, _, _ = moments_from_w(w, tb)
    U = np.empty((w.shape[0], w.shape[1] + 3))
    U[:, 0] = q[:, 0]
    U[:, 1] = q[:, 1] - eps * E1
    U[:, 2] = q[:, 2] - E0
    U[:, 3:] = w
    if np.any(model.theta(U[:, :3]) <= 0) or np.any(np.abs(w[:, 1]) > model.alpha_max):
        return None, tb
    D = d_tilde_matrix(w, tb)
    qw = np.linalg.solve(D, s_hat(U, eps, tb, model)[..., None])[..., 0]
    return w - wstar - dt / eps**2 * qw, tb


def _merge_tables(tb, idx, sub):
    if idx.size == tb.alpha.shape[0]:
        return sub
    fields = ("kappa", "kappa_tilde", "dkappa", "R", "M_tilde", "dproj", "coeffs", "coeffs_tilde")
    arrs = {}
    for f in fields + ("alpha",):
        a = np.array(getattr(tb, f), copy=True)
        a[idx] = getattr(sub, f)
        arrs[f] = a
    return type(tb)(arrs.pop("alpha"), tb.N, *(arrs[f] for f in fields))


def _newton(wstar, q, eps, dt, config, model, w0, G0=None, tb0=None):
    """Vectorised Newton for w - w* - dt/eps^2 q(u(w), w) = 0 at fixed totals.

    Returns (w, tables at w, iterations) or (None, None, iterations).
    """
    scale = np.maximum(np.linalg.norm(wstar, axis=1), 1e-300)
    tol = config.newton_tol * scale
    w = w0.copy()
    if G0 is None:
        G, tb = _relax_residual(w, wstar, q, eps, dt, model)
    else:
        G, tb = G0.copy(), tb0
    if G is None:
        return None, None, 0
    nrm = np.linalg.norm(G, axis=1)
    n = w.shape[1]
    its = 0
    for _ in range(config.newton_max_iter):
        active = nrm > tol
        if not np.any(active):
            return w, tb, its
        its += 1
        idx = np.nonzero(active)[0]
        wa = w[idx]
        Ga = G[idx]
        ta = tb[idx]
        J = np.empty((idx.size, n, n))
        for j in range(n):
            h = 1e-7 * np.maximum(1.0, np.abs(wa[:, j]))
            wp = wa.copy()
            wp[:, j] += h
            Gp, _ = _relax_residual(wp, wstar[idx], q[idx], eps, dt, model, None if j == 1 else ta)
            if Gp is None:
                wp[:, j] -= 2 * h
                Gp, _ = _relax_residual(wp, wstar[idx], q[idx], eps, dt, model, None if j == 1 else ta)
                if Gp is None:
                    return None, None, its
                h = -h
            J[:, :, j] = (Gp - Ga) / h[:, None]
        try:
            step = np.linalg.solve(J, Ga[..., None])[..., 0]
        except np.linalg.LinAlgError:
            return None, None, its
        lam = np.ones(idx.size)
        na = nrm[idx]
        for _ in range(12):
            wt = wa - lam[:, None] * step
            Gt, tt = _relax_residual(wt, wstar[idx], q[idx], eps, dt, model)
            if Gt is not None:
                nt = np.linalg.norm(Gt, axis=1)
                ok = (nt < na) | (nt <= tol[idx])
                if np.all(ok):
                    break
                lam = np.where(ok, lam, 0.5 * lam)
            else:
                lam = 0.5 * lam
        else:
            return None, None, its
        w[idx] = wt
        G[idx] = Gt
        nrm[idx] = nt
        tb = _merge_tables(tb, idx, tt)
    if np.any(nrm > tol):
        return None, None, its
    return w, tb, its


def _equilibrium_guess(q, eps, model):
    theta = theta_from_total_energy(q[:, 0], q[:, 1], q[:, 2], model)
    w = np.zeros((q.shape[0], model.N + 1))
    w[:, 0] = 0.5 * model.planck(theta)
    return w


def _select(mask, a, b):
    """Row-wise choice between two residual/table pairs."""
    if np.all(mask):
        return a
    if not np.any(mask):
        return b
    idx = np.nonzero(mask)[0]
    return _merge_tables(b, idx, a[idx])


def relaxation_substep(state, dt, config=SolverConfig(), model=DEFAULT_MODEL, tables=None):
    """Implicit Euler on the stiff source with the conserved totals frozen.

    Returns the new state, the closure tables at its alpha values and the
    number of Newton iterations.
    """
    U = state.U
    eps = state.eps
    tb = _tab(model, U[:, 4]) if tables is None else tables
    q = totals(U, eps, tb, model)
    wstar = U[:, 3:].copy()
    w_eq = _equilibrium_guess(q, eps, model)
    t_eq = _tab(model, w_eq[:, 1])

    def solve(h, nsub):
        w_cur, t_cur = wstar, tb
        its = 0
        for _ in range(nsub):
            G_old, _ = _relax_residual(w_cur, w_cur, q, eps, h, model, t_cur)
            G_eq, _ = _relax_residual(w_eq, w_cur, q, eps, h, model, t_eq)
            w0, G0, t0 = w_cur.copy(), G_old, t_cur
            if G_eq is not None and G_old is not None:
                better = np.linalg.norm(G_eq, axis=1) < np.linalg.norm(G_old, axis=1)
                w0[better] = w_eq[better]
                G0 = np.where(better[:, None], G_eq, G_old)
                t0 = _select(better, t_eq, t_cur)
            elif G_eq is not None:
                w0, G0, t0 = w_eq.copy(), G_eq, t_eq
            w_new, t_new, k = _newton(w_cur, q, eps, h, config, model, w0, G0, t0)
            its += k
            if w_new is None:
                return None, None, its
            w_cur, t_cur = w_new, t_new
        return w_cur, t_cur, its

    its_total = 0
    for halving in range(6):
        w, tn, its = solve(dt / 2**halving, 2**halving)
        its_total += its
        if w is not None:
            break
    else:
        raise NewtonError("relaxation Newton failed after 5 step halvings")
    E0, E1, _, _ = moments_from_w(w, tn)
    Un = U.copy()
    Un[:, 1] = q[:, 1] - eps * E1
    Un[:, 2] = q[:, 2] - E0
    Un[:, 3:] = w
    return FieldState(Un, state.t, eps, state.grid), tn, its_total


def check_state(state, model=DEFAULT_MODEL):
    U = state.U
    bad = ~np.all(np.isfinite(U), axis=1)
    bad |= U[:, 0] <= 0
    bad |= model.theta(U[:, :3]) <= 0
    bad |= np.abs(U[:, 4]) > model.alpha_max
    if np.any(bad):
        i = int(np.nonzero(bad)[0][0])
        raise StateError(f"positivity watchdog tripped at t = {state.t:g}, cell {i}: U = {U[i].tolist()}")


def conserved_integrals(state, model=DEFAULT_MODEL, tables=None):
    U = state.U
    tb = _tab(model, U[:, 4]) if tables is None else tables
    q = totals(U, state.eps, tb, model)
    return q.sum(axis=0) * state.grid.dx


def run(initial, T, config=SolverConfig(), model=DEFAULT_MODEL, max_steps=None, dt=None):
    """Integrate to time T with Lie (transport, relax) or Strang splitting."""
    if T <= 0:
        raise ValueError("final time must be positive")
    if initial.eps <= 0:
        raise ValueError("eps must be positive")
    state = initial.copy()
    check_state(state, model)
    art = RunArtifacts(final=state)

    def record(st, tb):
        mass, mom, en = conserved_integrals(st, model, tb)
        art.times.append(st.t)
        art.mass.append(mass)
        art.momentum.append(mom)
        art.energy.append(en)

    tb = _tab(model, state.U[:, 4])
    record(state, tb)
    if config.snapshot_every:
        art.snapshots.append(state.copy())
    fixed_dt = dt
    while state.t < T * (1 - 1e-14):
        if max_steps is not None and art.steps >= max_steps:
            break
        h = stable_dt(state, config, model, tb) if fixed_dt is None else fixed_dt
        h = min(h, T - state.t)
        if config.source and config.splitting == "strang":
            state, tb, k = relaxation_substep(state, 0.5 * h, config, model, tb)
            art.newton_iterations += k
            state, tb = transport_substep(state, h, config, model, tb)
            state, tb, k = relaxation_substep(state, 0.5 * h, config, model, tb)
            art.newton_iterations += k
        elif config.source:
            state, tb = transport_substep(state, h, config, model, tb)
            state, tb, k = relaxation_substep(state, h, config, model, tb)
            art.newton_iterations += k
        else:
            state, tb = transport_substep(state, h, config, model, tb)
        art.steps += 1
        check_state(state, model)
        record(state, tb)
        if config.snapshot_every and art.steps % config.snapshot_every == 0:
            art.snapshots.append(state.copy())
    art.final = state
    return art


def error_norms(a, b, s=0, grid=None):
    """Discrete H^s-type norm of a - b over all components, s in {0, 1, 2}."""
    A = a.U if isinstance(a, FieldState) else np.asarray(a, dtype=float)
    B = b.U if isinstance(b, FieldState) else np.asarray(b, dtype=float)
    if A.shape != B.shape:
        raise ValueError("grid mismatch between the two fields")
    if isinstance(a, FieldState) and isinstance(b, FieldState) and a.grid != b.grid:
        raise ValueError("grid mismatch between the two fields")
    grid = grid or (a.grid if isinstance(a, FieldState) else None)
    if grid is None:
        raise ValueError("grid required for raw arrays")
    if s not in (0, 1, 2):
        raise ValueError("s must be 0, 1 or 2")
    d = A - B
    if d.ndim == 1:
        d = d[:, None]
    dx = grid.dx
    total = np.sum(d * d)
    if s >= 1:
        d1 = (np.roll(d, -1, axis=0) - np.roll(d, 1, axis=0)) / (2 * dx)
        total += np.sum(d1 * d1)
    if s >= 2:
        d2 = (np.roll(d, -1, axis=0) - 2 * d + np.roll(d, 1, axis=0)) / dx**2
        total += np.sum(d2 * d2)
    return float(np.sqrt(total * dx))


def equilibrium_field(grid, rho, v, theta, eps, model=DEFAULT_MODEL, w1=None):
    """Cell-wise equilibrium data from primitive profiles (arrays or scalars)."""
    from .model import equilibrium_state

    x = grid.x
    prof = [np.broadcast_to(np.asarray(f(x) if callable(f) else f, dtype=float), x.shape) for f in (rho, v, theta)]
    U = equilibrium_state(*prof, model.N, model)
    if w1 is not None:
        U[:, 3:] += eps * w1
    return FieldState(U, 0.0, eps, grid)
