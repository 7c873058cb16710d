import numpy as np
import pytest
from scipy.integrate import solve_ivp

from radlab.model import DEFAULT_MODEL, StateError, equilibrium_state, theta_from_total_energy
from radlab.solver import (
    CFLError,
    Grid1D,
    NewtonError,
    SolverConfig,
    _relax_residual,
    conserved_integrals,
    equilibrium_field,
    error_norms,
    hydro_speed,
    max_wave_speed,
    relaxation_substep,
    run,
    stable_dt,
    totals,
    transport_substep,
)

M = DEFAULT_MODEL


def wavy(grid, eps, amp=0.1):
    k = 2 * np.pi / grid.L
    return equilibrium_field(grid, lambda x: 1 + amp * np.sin(k * x), 0.1,
                             lambda x: 1 + amp * np.cos(k * x), eps)


def perturbed(grid, eps, amp=0.1):
    st = wavy(grid, eps)
    x = grid.x
    st.U[:, 3] *= 1 + amp * np.cos(2 * np.pi * x)
    st.U[:, 4] = amp * np.sin(2 * np.pi * x)
    st.U[:, 5] = 0.5 * amp * st.U[:, 3]
    return st


# ---------------------------------------------------------------- configuration

def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(cfl=1.5)
    with pytest.raises(ValueError):
        SolverConfig(cfl=0.0)
    with pytest.raises(ValueError):
        SolverConfig(splitting="yoshida")
    with pytest.raises(ValueError):
        SolverConfig(newton_tol=0.0)
    with pytest.raises(ValueError):
        Grid1D(4)
    with pytest.raises(ValueError):
        Grid1D(16, L=0.0)


def test_run_rejects_bad_arguments():
    st = wavy(Grid1D(16), 0.1)
    with pytest.raises(ValueError):
        run(st, 0.0)
    bad = st.copy()
    bad.eps = 0.0
    with pytest.raises(ValueError):
        run(bad, 0.1)


def test_positivity_watchdog():
    st = wavy(Grid1D(16), 0.1)
    st.U[3, 0] = -1.0
    with pytest.raises(StateError):
        run(st, 0.1)


# ---------------------------------------------------------------- wave speeds

def test_hydro_speed():
    u = equilibrium_state(1.0, 0.3, 1.2)[:3]
    assert hydro_speed(u) == pytest.approx(0.3 + np.sqrt(M.gamma * 1.2), rel=1e-14)


def test_wave_speed_scales_with_inverse_eps():
    g = Grid1D(16)
    a = max_wave_speed(perturbed(g, 0.1))
    b = max_wave_speed(perturbed(g, 0.05))
    assert b == pytest.approx(2 * a, rel=1e-12)
    h = max_wave_speed(perturbed(g, 0.1), radiation=False)
    assert h == pytest.approx(float(np.max(hydro_speed(perturbed(g, 0.1).U[:, :3]))), rel=1e-14)


def test_transport_rejects_cfl_violation():
    st = perturbed(Grid1D(16), 0.1)
    dt = 2 * st.grid.dx / max_wave_speed(st)
    with pytest.raises(CFLError):
        transport_substep(st, dt)


def test_stable_dt_respects_cfl():
    st = perturbed(Grid1D(32), 0.1)
    cfg = SolverConfig(cfl=0.5)
    assert stable_dt(st, cfg) == pytest.approx(0.5 * st.grid.dx / max_wave_speed(st), rel=1e-14)


# ---------------------------------------------------------------- conservation and balance

def test_uniform_equilibrium_is_stationary():
    g = Grid1D(16)
    st = equilibrium_field(g, 1.0, 0.2, 1.0, 0.1)
    art = run(st, 0.02)
    assert np.abs(art.final.U - st.U).max() <= 1e-13


@pytest.mark.parametrize("splitting", ["lie", "strang"])
def test_totals_conserved(splitting):
    st = perturbed(Grid1D(32), 0.1)
    art = run(st, 0.02, SolverConfig(splitting=splitting))
    assert art.mass_drift <= 1e-13
    i0 = np.array([art.mass[0], art.momentum[0], art.energy[0]])
    i1 = np.array([art.mass[-1], art.momentum[-1], art.energy[-1]])
    assert np.abs(i1 - i0).max() <= 1e-12 * np.abs(i0).max()
    assert art.steps > 0 and art.newton_iterations > 0
    assert art.final.t == pytest.approx(0.02, rel=1e-14)


def test_snapshots_and_max_steps():
    st = perturbed(Grid1D(16), 0.1)
    art = run(st, 1.0, SolverConfig(snapshot_every=2), max_steps=6)
    assert art.steps == 6 and len(art.snapshots) == 4
    assert len(art.times) == 7


def test_run_is_deterministic():
    st = perturbed(Grid1D(32), 0.1)
    a = run(st, 0.01).final.U
    b = run(st, 0.01).final.U
    assert np.array_equal(a, b)


# ---------------------------------------------------------------- transport accuracy

def _advect(Mc, T=0.05):
    g = Grid1D(Mc)
    st = perturbed(g, 1.0)
    return run(st, T, SolverConfig(source=False, cfl=0.4), dt=0.4 / 1024 / 3).final.U


def _coarsen(U, k):
    return U.reshape(-1, k, U.shape[1]).mean(axis=1)


def test_advection_self_convergence():
    ref = _advect(1024)
    errs = []
    for Mc in (64, 128, 256):
        d = _advect(Mc) - _coarsen(ref, 1024 // Mc)
        errs.append(np.sqrt(np.mean(d * d)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 0.8), (errs, orders)


# ---------------------------------------------------------------- relaxation

def test_equilibrium_is_relaxation_fixed_point():
    st = wavy(Grid1D(16), 0.1)
    new, _, _ = relaxation_substep(st, 1e-3)
    assert np.abs(new.U - st.U).max() <= 1e-12


def test_relaxation_conserves_totals():
    st = perturbed(Grid1D(16), 0.1)
    tb = M.tables(st.U[:, 4], nodes=None)
    new, tn, _ = relaxation_substep(st, 1e-3)
    assert np.abs(totals(new.U, 0.1, tn) - totals(st.U, 0.1, tb)).max() <= 1e-13


def test_stiff_relaxation_reaches_equilibrium():
    eps = 0.01
    st = perturbed(Grid1D(16), eps)
    tb = M.tables(st.U[:, 4], nodes=None)
    q = totals(st.U, eps, tb)
    new, _, _ = relaxation_substep(st, 1e4 * eps**2)
    theta = theta_from_total_energy(q[:, 0], q[:, 1], q[:, 2])
    # the equilibrium of frozen totals has eps E1 = 0 and f0 = b / 2
    assert np.abs(new.U[:, 3] - 0.5 * M.planck(theta)).max() <= 1e-8
    assert np.abs(new.U[:, 4:]).max() <= 1e-8


def test_relaxation_matches_ode_oracle():
    eps = 0.1
    g = Grid1D(8)
    st = perturbed(g, eps)
    tb = M.tables(st.U[:, 4], nodes=None)
    q = totals(st.U, eps, tb)
    w0 = st.U[:, 3:].copy()
    shape = w0.shape

    def rhs(_, y):
        w = y.reshape(shape)
        G, _ = _relax_residual(w, w, q, eps, 1.0, M)
        return -G.ravel()

    T = 0.2 * eps**2
    sol = solve_ivp(rhs, (0, T), w0.ravel(), method="Radau", rtol=1e-12, atol=1e-14)
    oracle = sol.y[:, -1].reshape(shape)
    # implicit Euler with many substeps converges at first order in the step
    errs = []
    for n in (50, 100):
        cur = st
        for _ in range(n):
            cur, _, _ = relaxation_substep(cur, T / n)
        errs.append(np.abs(cur.U[:, 3:] - oracle).max())
    assert errs[1] <= 0.6 * errs[0]
    assert errs[1] <= 1e-3 * np.abs(w0).max()


def test_newton_failure_raises():
    st = perturbed(Grid1D(16), 0.05)
    with pytest.raises(NewtonError):
        relaxation_substep(st, 1.0, SolverConfig(newton_tol=1e-300, newton_max_iter=1))


# ---------------------------------------------------------------- norms

def test_error_norms_sine():
    g = Grid1D(256, L=2.0)
    A = 0.3
    a = np.zeros((256, 1))
    a[:, 0] = A * np.sin(2 * np.pi * g.x / g.L)
    z = np.zeros_like(a)
    assert error_norms(a, z, 0, g) == pytest.approx(A * np.sqrt(g.L / 2), rel=1e-12)
    n = [error_norms(a, z, s, g) for s in (0, 1, 2)]
    assert n[0] < n[1] < n[2]


def test_error_norms_validation():
    g = Grid1D(16)
    a = equilibrium_field(g, 1.0, 0.0, 1.0, 0.1)
    b = equilibrium_field(Grid1D(32), 1.0, 0.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        error_norms(a, b)
    with pytest.raises(ValueError):
        error_norms(a, a, 3)
    with pytest.raises(ValueError):
        error_norms(a.U, a.U)
    assert error_norms(a, a, 1) == 0.0


def test_conserved_integrals_uniform():
    g = Grid1D(20, L=2.0)
    st = equilibrium_field(g, 1.5, 0.0, 1.0, 0.1)
    mass, mom, en = conserved_integrals(st)
    assert mass == pytest.approx(3.0, rel=1e-14)
    assert abs(mom) <= 1e-15
    assert en == pytest.approx(2.0 * (1.5 * 1.5 + 1.0), rel=1e-14)
