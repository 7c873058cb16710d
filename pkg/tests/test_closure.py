import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from radlab import closure
from radlab.closure import (
    HMP,
    MP,
    ClosureDomainError,
    auto_nodes,
    build_basis,
    closed_form_kappa,
    closure_tables,
    d_tilde_matrix,
    gauss_legendre,
    r1_closed_form,
    r_coefficient,
    radiation_spectrum,
    weighted_moment,
)

pytestmark = pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")

ALPHA_GRID = np.round(np.arange(-0.9, 0.9001, 0.3), 12)
alphas = st.floats(-0.9, 0.9, allow_nan=False)

# Exact values at alpha = 1/2, N = 3, from symbolic Gram-Schmidt with rational arithmetic.
SYMBOLIC_HALF = {
    ("kappa", 2, 2): 0.23260249930560515640,
    ("kappa", 3, 3): 0.060271013845509792046,
    ("kappa", 4, 2): 0.24301390135442640348,
    ("kappa_tilde", 2, 2): 0.24650232828860103374,
    ("kappa_tilde", 3, 3): 0.064434021575386355915,
}
SYMBOLIC_HALF_R = {2: 16.0 / 33.0, 3: 0.069632913371786152414}
SYMBOLIC_HALF_MT = np.array([
    [-0.7, 0.11, 0.0, 0.0],
    [1.0, -0.027272727272727272727, 0.28361773567296425757, 0.0],
    [0.0, 1.0, 0.037435904415006766916, 0.26139315609201070448],
    [0.0, 0.0, 1.0, 0.0092890361091027463648],
])


def quad_moment(j, a, p):
    return quad(lambda m: m**j * (1 + a * m) ** (-p), -1, 1, epsabs=1e-15, epsrel=1e-13, limit=200)[0]


# ---------------------------------------------------------------- weighted_moment

def test_weighted_moment_unit_weight():
    assert weighted_moment(0, 0.0, MP) == pytest.approx(2.0, abs=1e-14)
    assert abs(weighted_moment(1, 0.0, MP)) < 1e-15


def test_weighted_moment_half():
    assert weighted_moment(0, 0.5, MP) == pytest.approx(5.13580247, abs=1e-8)
    assert weighted_moment(0, 0.5, MP) == pytest.approx(2 * (3 + 0.25) / (3 * 0.75**3), rel=1e-13)


@settings(max_examples=40, deadline=None)
@given(j=st.integers(0, 6), a=alphas, p=st.sampled_from([4, 5]))
def test_weighted_moment_matches_adaptive_quadrature(j, a, p):
    ref = quad_moment(j, a, p)
    assert abs(weighted_moment(j, a, p) - ref) <= 1e-12 * max(1.0, abs(ref))


def test_weighted_moment_domain():
    with pytest.raises(ClosureDomainError):
        weighted_moment(0, 0.96)
    with pytest.raises(ValueError):
        weighted_moment(-1, 0.1)


# ---------------------------------------------------------------- build_basis

def test_basis_unit_weight_is_monic_legendre():
    B = build_basis(0.0, 3, HMP)
    mu = np.linspace(-1, 1, 7)
    v = B(mu)
    assert np.allclose(v[1], mu, atol=1e-14)
    assert np.allclose(v[2], mu**2 - 1 / 3, atol=1e-14)
    assert np.allclose(v[3], mu**3 - 0.6 * mu, atol=1e-14)


def test_basis_phi1_tilde_half():
    B = build_basis(0.5, 3, HMP)
    shift = closed_form_kappa("kappa_t10", 0.5) / closed_form_kappa("kappa_t00", 0.5)
    assert B.coeffs[1, 0] == pytest.approx(-shift, rel=1e-12)
    assert B.coeffs[1, 1] == 1.0


@pytest.mark.parametrize("family", [MP, HMP])
@pytest.mark.parametrize("N", [2, 4, 8])
def test_basis_orthogonal_and_monic(family, N):
    for a in ALPHA_GRID:
        B = build_basis(a, N, family)
        assert np.all(np.diagonal(B.coeffs) == 1.0)
        G = B.gram()
        d = np.sqrt(np.outer(np.diag(G), np.diag(G)))
        off = np.abs(G - np.diag(np.diag(G))) / d
        assert off.max() <= 1e-10


def test_basis_degree_checked():
    with pytest.raises(ValueError):
        build_basis(0.1, 0)


# ---------------------------------------------------------------- closed forms

def test_closed_form_values():
    assert closed_form_kappa("kappa00", 0.0) == pytest.approx(2.0)
    assert closed_form_kappa("κ̃₁₁", 0.0) == pytest.approx(2 / 3)
    assert closed_form_kappa("kappa10", 0.5) == pytest.approx(-3.16049383, abs=1e-8)


def test_closed_form_unknown_name():
    with pytest.raises(KeyError):
        closed_form_kappa("kappa99", 0.1)


@pytest.mark.parametrize("name,p,j,k", [
    ("kappa00", 4, 0, 0), ("kappa_t00", 5, 0, 0), ("kappa10", 4, 1, 0), ("kappa_t10", 5, 1, 0),
])
def test_closed_forms_match_adaptive_quadrature(name, p, j, k):
    for a in ALPHA_GRID:
        ref = quad_moment(j, a, p)
        assert closed_form_kappa(name, a) == pytest.approx(ref, rel=1e-11)


def test_kappa_t11_closed_form_matches_quadrature():
    for a in ALPHA_GRID:
        m0, m1, m2 = (quad_moment(j, a, 5) for j in range(3))
        ref = m2 - m1 * m1 / m0
        assert closed_form_kappa("kappa_t11", a) == pytest.approx(ref, rel=1e-10)


def test_tables_match_closed_forms():
    t = closure_tables(ALPHA_GRID, 3)
    pairs = [("kappa00", t.kappa[:, 0, 0]), ("kappa_t00", t.kappa_tilde[:, 0, 0]),
             ("kappa10", t.kappa[:, 1, 0]), ("kappa_t10", t.kappa_tilde[:, 1, 0]),
             ("kappa_t11", t.kappa_tilde[:, 1, 1])]
    for name, got in pairs:
        ref = closed_form_kappa(name, ALPHA_GRID)
        assert np.all(np.abs(got - ref) <= 1e-10 * np.abs(ref) + 1e-15)


def test_tables_match_symbolic_oracle():
    t = closure_tables(0.5, 3)
    for (name, j, k), v in SYMBOLIC_HALF.items():
        assert getattr(t, name)[j, k] == pytest.approx(v, rel=1e-11)
    for i, v in SYMBOLIC_HALF_R.items():
        assert t.R[i] == pytest.approx(v, rel=1e-11)
    assert np.allclose(t.M_tilde, SYMBOLIC_HALF_MT, atol=1e-12)


# ---------------------------------------------------------------- R coefficients

def test_r_coefficients():
    assert r_coefficient(0, 0.7) == pytest.approx(2.0, abs=1e-12)
    assert r_coefficient(1, 0.5) == pytest.approx(1.4, abs=1e-12)
    h = 1e-4
    for i in range(2, 5):
        assert abs(r_coefficient(i, 0.0, N=4)) <= 1e-8
        d = (r_coefficient(i, h, N=4) - r_coefficient(i, -h, N=4)) / (2 * h)
        assert abs(d) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(a=alphas)
def test_r0_and_r1_for_any_alpha(a):
    t = closure_tables(a, 3)
    assert t.R[0] == pytest.approx(2.0, abs=1e-11)
    assert t.R[1] == pytest.approx(float(r1_closed_form(a)), abs=1e-10)


def test_r_coefficient_index_checked():
    with pytest.raises(ValueError):
        r_coefficient(4, 0.1, N=3)


# ---------------------------------------------------------------- tables

def test_tables_at_zero():
    t = closure_tables(0.0, 3)
    assert abs(t.M_tilde[0, 0]) < 1e-14
    assert t.M_tilde[1, 0] == pytest.approx(1.0, abs=1e-14)
    assert t.M_tilde[0, 1] == pytest.approx(1 / 3, abs=1e-14)
    assert np.allclose(t.beta, 1.0, atol=1e-13)
    assert t.kappa[2, 2] == pytest.approx(8 / 45, rel=1e-12)


@pytest.mark.parametrize("N", [2, 3, 5, 8])
def test_table_invariants(N):
    t = closure_tables(ALPHA_GRID, N)
    for name in ("kappa", "kappa_tilde"):
        K = getattr(t, name)
        upper = np.triu(K[:, : N + 2, : N + 2], 1)
        assert np.abs(upper).max() <= 1e-10 * np.abs(K).max()
        assert np.all(np.diagonal(K, axis1=1, axis2=2) > 0)
    LM = t.Lambda_tilde @ t.M_tilde
    assert np.abs(LM - np.swapaxes(LM, 1, 2)).max() <= 1e-10


def test_basis_bridge_identity():
    N = 4
    mu = np.linspace(-1, 1, 200)
    for a in ALPHA_GRID:
        P = build_basis(a, N + 1, MP).weighted(mu)
        Pt = build_basis(a, N + 1, HMP).weighted(mu)
        beta = closure_tables(a, N + 1).beta
        for j in range(N):
            res = np.abs(P[j] - (a * Pt[j + 1] + beta[j] * Pt[j])).max()
            assert res <= 1e-9 * np.abs(P[j]).max()


def test_scalar_and_batch_agree():
    a = np.array([-0.4, 0.1, 0.3])
    tb = closure_tables(a, 3)
    for i, ai in enumerate(a):
        ts = closure_tables(float(ai), 3)
        assert np.allclose(tb.kappa[i], ts.kappa, rtol=1e-12, atol=1e-15)
        assert np.allclose(tb.dproj[i], ts.dproj, rtol=1e-12, atol=1e-14)
        sub = tb[i]
        assert np.array_equal(sub.kappa, tb.kappa[i])


@pytest.mark.parametrize("N", [2, 4, 8])
def test_auto_nodes_match_full_rule(N):
    for lim in (0.5, 0.8):
        a = np.linspace(-lim, lim, 9)
        n = auto_nodes(a)
        assert n < 128
        fast = closure_tables(a, N, nodes=n)
        full = closure_tables(a, N, nodes=128)
        for name in ("kappa", "kappa_tilde", "dkappa", "M_tilde", "dproj", "R"):
            x, y = getattr(fast, name), getattr(full, name)
            assert np.abs(x - y).max() <= 1e-12 * max(1.0, np.abs(y).max())
    assert auto_nodes(np.array([0.9])) == 128


def test_duplicate_alphas_are_exact():
    a = np.array([0.2, 0.2, -0.1, 0.2])
    t = closure_tables(a, 3)
    assert np.array_equal(t.kappa[0], t.kappa[1])
    u = closure_tables(np.array([0.2, -0.1]), 3)
    assert np.array_equal(t.kappa[2], u.kappa[1])


def test_domain_errors():
    with pytest.raises(ClosureDomainError):
        closure_tables(0.97, 3)
    with pytest.raises(ClosureDomainError):
        closure_tables(np.array([0.1, np.nan]), 3)
    with pytest.raises(ValueError):
        closure_tables(0.1, 0)


# ---------------------------------------------------------------- d/d alpha

def _fd_dkappa(a, N, h=1e-4):
    """Richardson-extrapolated central difference of kappa in alpha."""
    def cd(hh):
        return (closure_tables(a + hh, N).kappa - closure_tables(a - hh, N).kappa) / (2 * hh)
    return (4 * cd(h / 2) - cd(h)) / 3


def _fd_dproj(a, N, h=1e-4):
    """Projection of d Phi_i / d alpha on Phi~_k by differencing the basis."""
    x, w = gauss_legendre()

    def Phi(aa):
        t = closure_tables(aa, N)
        V = np.array([np.polynomial.polynomial.polyval(x, t.coeffs[i, : i + 1]) for i in range(N + 1)])
        return V * (1 + aa * x) ** -4

    def cd(hh):
        return (Phi(a + hh) - Phi(a - hh)) / (2 * hh)

    dPhi = (4 * cd(h / 2) - cd(h)) / 3
    t = closure_tables(a, N)
    Vt = np.array([np.polynomial.polynomial.polyval(x, t.coeffs_tilde[k, : k + 1]) for k in range(N + 1)])
    return np.einsum("kq,iq,q->ki", Vt, dPhi, w) / t.diag_tilde[:, None]


@pytest.mark.parametrize("a", [-0.6, 0.0, 0.35, 0.8])
def test_exact_alpha_derivatives_match_richardson(a):
    N = 4
    t = closure_tables(a, N)
    dk = _fd_dkappa(a, N)
    assert np.abs(t.dkappa - dk).max() <= 1e-7 * max(1.0, np.abs(dk).max())
    dp = _fd_dproj(a, N)
    assert np.abs(t.dproj - dp).max() <= 1e-7 * max(1.0, np.abs(dp).max())


def test_kappa10_derivative_at_zero():
    assert closure_tables(0.0, 3).dkappa[1, 0] == pytest.approx(-8 / 3, rel=1e-12)


# ---------------------------------------------------------------- D~

def test_d_tilde_at_equilibrium():
    for b in (1.0, 2.5):
        t = closure_tables(0.0, 4)
        w = np.array([0.5 * b, 0.0, 0.0, 0.0, 0.0])
        D = d_tilde_matrix(w, t)
        assert np.allclose(D, np.diag([1.0, -2.0 * b, 1.0, 1.0, 1.0]), atol=1e-12)


def test_d_tilde_alpha_column_matches_difference_oracle():
    t = closure_tables(0.0, 3)
    w = np.array([0.5, 0.0, 0.0, 0.0])
    col = d_tilde_matrix(w, t)[:, 1]
    fd = _fd_dproj(0.0, 3) @ np.array([0.5, 0.0, 0.0, 0.0])
    assert col[1] == pytest.approx(-2.0, abs=1e-12)
    assert np.allclose(col, fd, atol=1e-8)
    w2 = np.array([1.0, 0.0, 0.0, 0.0])
    assert d_tilde_matrix(w2, t)[1, 1] == pytest.approx(-4.0, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-0.9, 0.9), f=st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_d_tilde_two_entry_columns(a, f):
    w = np.array([f[0], a, f[2], f[3]])
    t = closure_tables(a, 3)
    D = d_tilde_matrix(w, t)
    for i in (0, 2, 3):
        col = D[:, i]
        assert col[i] == t.beta[i]
        if i + 1 <= 3:
            assert col[i + 1] == a
        others = [r for r in range(4) if r not in (i, i + 1)]
        assert np.all(col[others] == 0.0)


def test_hyperbolicity_probe():
    rng = np.random.Generator(np.random.Philox(3))
    W = np.column_stack([rng.uniform(0.1, 2, 100), rng.uniform(-0.9, 0.9, 100),
                         rng.uniform(-0.2, 0.2, (100, 2))])
    t = closure_tables(W[:, 1], 3)
    rad, imag = radiation_spectrum(W, t)
    assert np.all(np.isfinite(rad))
    assert np.max(imag) <= 1e-8


def test_backend_attribute():
    assert closure.kernels.BACKEND in ("cython", "python")
