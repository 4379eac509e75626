import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpkdv.spectral import (
    FourierField,
    Frequency,
    Truncation,
    analyze,
    compose,
    dx_pow,
    field_at_phi,
    field_from_json,
    field_to_json,
    embed_field,
    invert_torus_diffeo,
    multiply,
    omega_dphi,
    omega_dphi_inv,
    pointwise,
    random_real_field,
    sobolev_norm,
    structure_check,
    synthesize,
)

T = Truncation(nu=1, n_phi=6, n_x=6)
RNG = np.random.default_rng(7)


def grids(trunc):
    return np.meshgrid(
        *[2 * np.pi * np.arange(m) / m for m in trunc.grid_shape], indexing="ij"
    )


# ---------------------------------------------------------------- transforms


def test_cosine_synthesis():
    f = FourierField.from_modes(T, {(0, 1): 0.5})
    phi, x = grids(T)
    assert np.allclose(synthesize(f), np.cos(x), atol=1e-13)


def test_round_trip_random():
    f = random_real_field(T, RNG)
    g = analyze(T, synthesize(f))
    assert np.max(np.abs(g.c - f.c)) < 1e-12


def test_constant_samples():
    ones = np.ones(T.grid_shape)
    f = analyze(T, ones)
    assert abs(f.mean - 1.0) < 1e-14
    c = f.c.copy()
    c[T.n_phi, T.n_x] = 0
    assert np.max(np.abs(c)) < 1e-14


def test_reality_preserved_by_calculus():
    f = random_real_field(T, RNG)
    freq = Frequency.default(1, lam=1.07)
    for g in [dx_pow(f, 2), dx_pow(f, -1), omega_dphi(f, freq), omega_dphi_inv(f, freq)]:
        assert g.is_real(1e-12)


# ---------------------------------------------------------------- sobolev


def test_norm_constant_field():
    f = FourierField.constant(T, 1.0)
    for s in [0.0, 1.0, 3.5]:
        assert abs(sobolev_norm(f, s) - 1.0) < 1e-15


def test_norm_two_modes():
    f = FourierField.from_modes(T, {(0, 2): 0.5})  # cos(2x)
    assert abs(sobolev_norm(f, 1.0) - np.sqrt(2.0)) < 1e-14


def test_norm_against_double_loop_oracle():
    f = random_real_field(T, RNG)
    s = 1.7
    total = 0.0
    for il in range(2 * T.n_phi + 1):
        for ij in range(2 * T.n_x + 1):
            l, j = il - T.n_phi, ij - T.n_x
            w = max(1, abs(l), abs(j))
            total += w ** (2 * s) * abs(f.c[il, ij]) ** 2
    assert abs(sobolev_norm(f, s) - np.sqrt(total)) < 1e-13 * np.sqrt(total)


def test_norm_monotone_in_s():
    f = random_real_field(T, RNG)
    assert sobolev_norm(f, 1.0) <= sobolev_norm(f, 2.0)


# ---------------------------------------------------------------- dx powers


def test_dx_inverse_single_mode():
    f = FourierField.from_modes(T, {(0, 3): 1.0})
    g = dx_pow(f, -1)
    assert np.allclose(g.c[T.n_phi, T.n_x + 3], 1.0 / (3j))
    const = FourierField.constant(T, 1.0)
    assert np.max(np.abs(dx_pow(const, -1).c)) == 0.0


def test_dx_inv_dx_is_pi0():
    f = random_real_field(T, RNG)
    g = dx_pow(dx_pow(f, 1), -1)
    expected = f.c.copy()
    expected[..., T.n_x] = 0.0  # the x-average column is annihilated
    assert np.max(np.abs(g.c - expected)) < 1e-14
    h = dx_pow(dx_pow(f, -1), 1)
    assert np.max(np.abs(h.c - expected)) < 1e-14


def test_third_derivative_of_cos():
    f = FourierField.from_modes(T, {(0, 1): 0.5})  # cos x
    g = dx_pow(f, 3)  # should be sin x
    sin = FourierField.from_modes(T, {(0, 1): -0.5j})
    assert np.max(np.abs(g.c - sin.c)) < 1e-14


# ---------------------------------------------------------------- omega.dphi


def test_omega_dphi_inv_scalar():
    freq = Frequency((1.0,), lam=1.0)
    f = FourierField.from_modes(T, {(1, 0): 0.5})  # cos(phi)
    g = omega_dphi_inv(f, freq)
    sin = FourierField.from_modes(T, {(1, 0): -0.5j})  # sin(phi)
    assert np.max(np.abs(g.c - sin.c)) < 1e-14


def test_omega_dphi_roundtrip():
    freq = Frequency.default(1, lam=1.31)
    f = random_real_field(T, RNG)
    g = omega_dphi(omega_dphi_inv(f, freq), freq)
    expected = f.c.copy()
    expected[T.n_phi, :] = 0.0
    assert np.max(np.abs(g.c - expected)) < 1e-12


def test_omega_dphi_inv_two_frequencies():
    t2 = Truncation(nu=2, n_phi=3, n_x=3)
    freq = Frequency.default(2, lam=0.83)
    f = random_real_field(t2, np.random.default_rng(3))
    g = omega_dphi(omega_dphi_inv(f, freq), freq)
    expected = f.c.copy()
    expected[t2.n_phi, t2.n_phi, :] = 0.0
    assert np.max(np.abs(g.c - expected)) < 1e-12


def test_diophantine_witness_rejects_resonant():
    with pytest.raises(ValueError):
        Frequency((1.0, 0.5), gamma0=0.05, check_range=8)


# ---------------------------------------------------------------- compose


def test_compose_zero_displacement_identity():
    f = random_real_field(T, RNG)
    beta = FourierField.zeros(T)
    g = compose("space", f, beta)
    assert np.max(np.abs(g.c - f.c)) < 1e-12


def test_compose_constant_shift_is_phase():
    c = 0.3
    f = FourierField.from_modes(T, {(0, 1): 1.0})
    beta = FourierField.constant(T, c)
    g = compose("space", f, beta)
    # e^{i(x + c)} picks up the phase e^{ic} on the +1 mode
    assert abs(g.c[T.n_phi, T.n_x + 1] - np.exp(1j * c)) < 1e-12


def test_compose_space_fine_grid_oracle():
    tr = Truncation(nu=1, n_phi=4, n_x=4)
    rng = np.random.default_rng(5)
    f = random_real_field(tr, rng, decay=3.0)
    beta = random_real_field(tr, rng, decay=3.0, scale=0.05)
    g = compose("space", f, beta)
    # oracle: pointwise evaluation on a 4x finer grid
    fine = Truncation(nu=1, n_phi=4, n_x=4, oversample=8)
    phi, x = grids(fine)
    bsamp = synthesize(FourierField(fine, beta.c), fine.grid_shape)
    vals = np.zeros_like(phi)
    for il in range(2 * tr.n_phi + 1):
        for ij in range(2 * tr.n_x + 1):
            l, j = il - tr.n_phi, ij - tr.n_x
            vals += np.real(f.c[il, ij] * np.exp(1j * (l * phi + j * (x + bsamp))))
    oracle = analyze(tr, vals)
    assert np.max(np.abs(g.c - oracle.c)) < 1e-10


def test_compose_time_shifts_phi():
    freq = Frequency((1.0,), lam=1.0)
    f = FourierField.from_modes(T, {(1, 0): 1.0})
    alpha = FourierField.constant(T, 0.2)
    g = compose("time", f, alpha, freq)
    assert abs(g.c[T.n_phi + 1, T.n_x] - np.exp(1j * 0.2)) < 1e-12


def test_compose_rejects_steep_displacement():
    beta = FourierField.from_modes(T, {(0, 1): 0.4})  # beta_x amplitude 0.8
    f = random_real_field(T, RNG)
    with pytest.raises(ValueError):
        compose("space", f, beta)


# ------------------------------------------------------------ inverse diffeo


def test_inverse_diffeo_trivial_cases():
    z = invert_torus_diffeo("space", FourierField.zeros(T))
    assert np.max(np.abs(z.c)) < 1e-13
    c = FourierField.constant(T, 0.17)
    inv = invert_torus_diffeo("space", c)
    assert abs(inv.mean + 0.17) < 1e-13


def test_inverse_diffeo_residual_on_fine_grid():
    # n_x large enough to carry the Fourier tail of the inverse displacement
    t12 = Truncation(1, 6, 12)
    beta = FourierField.from_modes(t12, {(0, 1): 0.05})  # 0.1 cos x
    bt = invert_torus_diffeo("space", beta)
    # residual of beta~(y) + beta(y + beta~(y)) on a fine grid
    fine = 512
    y = 2 * np.pi * np.arange(fine) / fine
    def ev(field, pts):
        jj = np.arange(-t12.n_x, t12.n_x + 1)
        return np.real(field.c[t12.n_phi] @ np.exp(1j * np.outer(jj, pts)))
    res = ev(bt, y) + ev(beta, y + ev(bt, y))
    assert np.max(np.abs(res)) < 1e-12
    assert abs(np.max(np.abs(ev(bt, y))) - 0.1) < 1e-3  # |beta~|_inf = |beta|_inf


def test_inverse_diffeo_round_trip_composition():
    # smooth beta with |beta|_{1,inf} <= 0.2; intermediate bandwidth inflated
    rng = np.random.default_rng(11)
    big = Truncation(1, 16, 16)
    beta = embed_field(random_real_field(T, rng, decay=4.0, scale=0.03), big)
    bt = invert_torus_diffeo("space", beta)
    f = embed_field(random_real_field(T, rng, decay=3.0), big)
    g = compose("space", compose("space", f, beta), bt)
    assert np.max(np.abs(g.c - f.c)) < 1e-8


def test_inverse_time_diffeo():
    freq = Frequency.default(1, lam=1.2)
    big = Truncation(1, 16, 16)
    alpha = FourierField.from_modes(big, {(1, 0): 0.04})
    at = invert_torus_diffeo("time", alpha, freq)
    f = embed_field(random_real_field(T, RNG, decay=3.0), big)
    g = compose("time", compose("time", f, alpha, freq), at, freq)
    assert np.max(np.abs(g.c - f.c)) < 1e-9


# ---------------------------------------------------------------- structure


def test_structure_flags():
    even = FourierField.from_modes(T, {(1, 1): 0.5})  # cos(phi + x)
    sc = structure_check(even)
    assert sc["in_X"] and not sc["in_Y"]
    odd = FourierField.from_modes(T, {(0, 1): -0.5j})  # sin x
    sc = structure_check(odd)
    assert sc["in_Y"] and sc["zero_total_average"] and sc["zero_space_average"]
    const = FourierField.constant(T, 1.0)
    assert not structure_check(const)["zero_total_average"]


def test_parity_algebra_products():
    rng = np.random.default_rng(13)
    fx = random_real_field(T, rng, parity="X")
    gx = random_real_field(T, rng, parity="X")
    fy = random_real_field(T, rng, parity="Y")
    assert structure_check(multiply(fx, gx), 1e-10)["in_X"]
    assert structure_check(multiply(fx, fy), 1e-10)["in_Y"]


# ---------------------------------------------------------------- serialization


def test_json_round_trip():
    f = random_real_field(T, RNG)
    g = field_from_json(field_to_json(f))
    assert g.trunc.n_phi == T.n_phi
    assert np.max(np.abs(g.c - f.c)) < 1e-15


def test_field_at_phi_matches_synthesis():
    f = random_real_field(T, RNG)
    phi = np.array([0.37])
    hj = field_at_phi(f, phi)
    x = np.linspace(0, 2 * np.pi, 7, endpoint=False)
    jj = np.arange(-T.n_x, T.n_x + 1)
    direct = np.zeros_like(x)
    for il in range(2 * T.n_phi + 1):
        l = il - T.n_phi
        direct += np.real(np.exp(1j * l * phi[0]) * (f.c[il] @ np.exp(1j * np.outer(jj, x))))
    assert np.allclose(np.real(hj @ np.exp(1j * np.outer(jj, x))), direct, atol=1e-12)


# ---------------------------------------------------------------- properties


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 4.0))
def test_property_norm_monotone(seed, s):
    rng = np.random.default_rng(seed)
    f = random_real_field(T, rng)
    assert sobolev_norm(f, s) <= sobolev_norm(f, s + 0.5) + 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_property_pointwise_reality(seed):
    rng = np.random.default_rng(seed)
    f = random_real_field(T, rng, scale=0.1)
    g = pointwise(np.exp, f)
    assert g.is_real(1e-11)
