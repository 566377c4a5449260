import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from covlaw import (PopulationModel, atom_mass, bulk_counts, check_regularity, classical_locations,
                    density_at, edge_curvature, evaluate_f, locate_critical_points, solve_m, solve_m_many,
                    solve_profile, stability_coefficients)
from covlaw.model import (ModelError, PoleError, RegularityError, SolverError, component_mass, density_grid,
                          total_mass)

from conftest import four_atom_model, mp_quadratic_m


# --- f and its derivatives ---------------------------------------------------

@pytest.mark.parametrize("x, f, fp, fpp", [(-2.0, 0.25, 0.0, -0.25), (-2.0 / 3.0, 2.25, 0.0, 20.25)])
def test_evaluate_f_closed_form(mp_quarter, x, f, fp, fpp):
    got = evaluate_f(x, mp_quarter)
    assert got == pytest.approx((f, fp, fpp), abs=1e-12)


def test_evaluate_f_at_infinity_is_zero():
    assert evaluate_f(math.inf, PopulationModel.identity(1.0)) == (0.0, 0.0, 0.0)


@pytest.mark.parametrize("x", [0.0, -1.0])
def test_evaluate_f_rejects_poles(mp_quarter, x):
    with pytest.raises(PoleError):
        evaluate_f(x, mp_quarter)


def test_evaluate_f_derivatives_match_finite_differences(four_atom):
    x, h = -0.35, 1e-5
    f0, fp, fpp = evaluate_f(x, four_atom)
    fm, fpl = evaluate_f(x - h, four_atom)[0], evaluate_f(x + h, four_atom)[0]
    assert fp == pytest.approx((fpl - fm) / (2 * h), rel=1e-7)
    assert fpp == pytest.approx((fpl - 2 * f0 + fm) / h**2, rel=1e-4)


# --- model validation and serialization ---------------------------------------

@pytest.mark.parametrize("kwargs", [
    dict(phi=-1.0, atoms=((1.0, 1.0),)),
    dict(phi=1.0, atoms=((1.0, 0.5), (2.0, 0.5))),
    dict(phi=1.0, atoms=((1.0, 0.7), (0.5, 0.7))),
    dict(phi=1.0, atoms=((100.0, 1.0),)),
    dict(phi=0.5, atoms=((1.0, 1.0),), dims=(10, 10, 30)),
])
def test_invalid_models_are_rejected(kwargs):
    with pytest.raises(ModelError):
        PopulationModel(**kwargs)


def test_model_json_round_trip(four_atom):
    again = PopulationModel.from_json(four_atom.to_json())
    assert again == four_atom
    assert json.loads(four_atom.to_json())["dims"] == {"M": 100, "Mhat": 100, "N": 1000}


def test_from_eigenvalues_builds_the_empirical_measure():
    m = PopulationModel.from_eigenvalues([2.0, 1.0, 2.0, 1.0], N=8)
    assert m.atoms == ((2.0, 0.5), (1.0, 0.5))
    assert m.phi == 0.5


# --- Stieltjes transform ------------------------------------------------------

def test_solve_m_far_away_behaves_like_minus_one_over_z(four_atom):
    assert abs(solve_m(100j, four_atom).m - 1j / 100) < 1e-3


def test_solve_m_boundary_value_matches_quadratic(mp_quarter):
    val = solve_m(1.0, mp_quarter)
    assert val.m == pytest.approx(complex(-0.875, math.sqrt(0.9375) / 2), abs=1e-10)
    assert val.residual <= 1e-11


@pytest.mark.parametrize("z", [1 + 0.01j, 0.3 + 1e-4j, 2.2 + 0.5j, 3 + 1j, 0.1 + 0.02j])
def test_solve_m_matches_quadratic_off_axis(mp_quarter, z):
    assert solve_m(z, mp_quarter).m == pytest.approx(mp_quadratic_m(z, 0.25), abs=1e-10)


def test_solve_m_in_spectral_gap_is_real_and_increasing(four_atom_profile):
    a = four_atom_profile.edges
    E = np.linspace(a[2] + 0.1, a[1] - 0.1, 9)
    m, _ = solve_m_many(E + 0j, four_atom_profile.model)
    assert np.all(np.abs(m.imag) <= 1e-9)
    assert np.all(np.diff(m.real) > 0)


def test_solve_m_descending_path_agrees_with_fresh_solves(four_atom):
    etas = np.geomspace(1.0, 1e-3, 12)
    path = [solve_m(2.0 + 1j * eta, four_atom).m for eta in etas]
    fresh, _ = solve_m_many(2.0 + 1j * etas, four_atom, boundary=False)
    assert np.allclose(path, fresh, atol=1e-10)


def test_solve_m_rejects_lower_half_plane(mp_quarter):
    with pytest.raises(ValueError):
        solve_m(1 - 1j, mp_quarter)


def test_solver_error_carries_iterate(mp_quarter):
    with pytest.raises(SolverError) as info:
        solve_m(1 + 0.01j, mp_quarter, tol=0.0)
    assert info.value.last_iterate is not None
    assert info.value.residual is not None


# --- critical points and edges ------------------------------------------------

def test_critical_points_marchenko_pastur(mp_quarter):
    x, a, deg = locate_critical_points(mp_quarter)
    assert x == pytest.approx([-2.0 / 3.0, -2.0], abs=1e-12)
    assert a == pytest.approx([2.25, 0.25], abs=1e-12)
    assert deg == []


def test_critical_point_at_infinity_for_square_case():
    x, a, _ = locate_critical_points(PopulationModel.identity(1.0))
    assert x[0] == pytest.approx(-0.5, abs=1e-12)
    assert math.isinf(x[1])
    assert a == pytest.approx([4.0, 0.0], abs=1e-12)


def test_four_atom_model_has_three_components(four_atom_profile):
    assert four_atom_profile.p == 3
    assert np.all(np.diff(four_atom_profile.edges) < 0)
    assert four_atom_profile.counts == (10, 10, 80)


def test_wide_four_atom_model_has_one_component():
    prof = solve_profile(four_atom_model(phi=10.0, dims=(1000, 1000, 100)))
    assert prof.p == 1
    assert prof.counts == (100,)


def test_critical_point_counts_per_interval(four_atom_profile):
    x = four_atom_profile.critical_points
    poles = -1.0 / four_atom_profile.model.s
    intervals = [(poles[0], 0.0)] + [(poles[i], poles[i - 1]) for i in range(1, poles.size)]
    n_in = [int(np.sum((x > lo) & (x < hi))) for lo, hi in intervals]
    assert n_in[0] == 1
    assert all(n in (0, 2) for n in n_in[1:])
    # I_0 is the arc through infinity: (-inf, -1/s_n) joined with (0, inf)
    in_i0 = (x < poles[-1]) | (x > 0)
    assert int(np.sum(in_i0)) == 1
    assert len(x) % 2 == 0


@pytest.mark.filterwarnings("ignore:near-degenerate:RuntimeWarning")
def test_degenerate_critical_point_is_flagged():
    # two atoms whose components just touch: scan the weight for a double root
    def gap(c):
        prof = solve_profile(PopulationModel(phi=0.5, atoms=((3.0, c), (1.0, 1 - c))))
        return prof.edges[1] - prof.edges[2] if prof.p == 2 else -1.0
    c_star = optimize.brentq(lambda c: gap(c) - 1e-12 if gap(c) > 0 else -1.0, 0.05, 0.5, xtol=1e-15)
    with pytest.warns(RuntimeWarning):
        prof = solve_profile(PopulationModel(phi=0.5, atoms=((3.0, c_star), (1.0, 1 - c_star))))
    rep = check_regularity(prof, tau=0.05)
    assert prof.degenerate or any(not e.regular for e in rep.edges[1:3])


# --- density ------------------------------------------------------------------

def test_density_at_bulk_point(mp_quarter):
    assert density_at(1.0, mp_quarter) == pytest.approx(math.sqrt(0.9375) / 2 / math.pi, abs=1e-10)


def test_density_vanishes_at_edges_and_in_gaps(four_atom_profile):
    a = four_atom_profile.edges
    assert np.all(density_at(a[a > 0], four_atom_profile) <= 1e-4)
    assert density_at(0.5 * (a[1] + a[2]), four_atom_profile) <= 1e-12
    assert density_at(0.5 * (a[3] + a[4]), four_atom_profile) <= 1e-12


def test_density_positive_inside_components(four_atom_profile):
    for lo, hi in four_atom_profile.components:
        E = np.linspace(lo, hi, 23)[1:-1]
        assert np.all(density_at(E, four_atom_profile) > 0)


def test_density_rejects_nonpositive_energy(mp_quarter):
    with pytest.raises(ValueError):
        density_at(0.0, mp_quarter)


def test_density_grid_is_sorted_and_covers_support(four_atom_profile):
    E, rho = density_grid(four_atom_profile, n=200)
    assert np.all(np.diff(E) > 0)
    assert E[-1] > four_atom_profile.edges[0]
    assert np.all(rho >= 0)


@pytest.mark.parametrize("phi, mass", [(0.6, 0.4), (10.0, 0.0), (1.0, 0.0)])
def test_atom_mass(phi, mass):
    assert atom_mass(PopulationModel.identity(phi)) == pytest.approx(mass, abs=1e-15)


# --- mass, counts and classical locations -------------------------------------

def test_total_mass_is_one(four_atom_profile, mp_quarter):
    assert total_mass(four_atom_profile) == pytest.approx(1.0, abs=1e-6)
    assert total_mass(solve_profile(mp_quarter)) == pytest.approx(1.0, abs=1e-6)


def test_bulk_counts_two_routes_agree(four_atom_profile):
    out = bulk_counts(four_atom_profile)
    assert out["counts"] == (10, 10, 80)
    assert np.all(np.abs(out["quadrature"] - out["counting"]) < 0.5)


def test_bulk_counts_identity_is_min_dimension():
    for dims in [(300, 300, 1000), (1000, 1000, 400)]:
        prof = solve_profile(PopulationModel.identity(dims[0] / dims[2], dims=dims))
        assert prof.counts == (min(dims[0], dims[2]),)


def _mp_square_gamma(N):
    """Quantiles of the phi = 1 law: with E = 2(1 - cos t) the mass above E is (pi - t - sin t)/pi."""
    out = []
    for i in range(1, N + 1):
        q = (i - 0.5) / N
        t = optimize.brentq(lambda t: (math.pi - t - math.sin(t)) / math.pi - q, 0.0, math.pi, xtol=1e-15)
        out.append(2 * (1 - math.cos(t)))
    return np.array(out)


def test_classical_locations_square_case_closed_form():
    N = 1000
    prof = solve_profile(PopulationModel.identity(1.0, dims=(N, N, N)))
    gamma = classical_locations(prof)
    assert gamma.size == N
    assert np.max(np.abs(gamma - _mp_square_gamma(N))) < 1e-6


def test_classical_locations_first_quantile(four_atom_profile):
    gamma = classical_locations(four_atom_profile)
    assert gamma.size == 100
    N = 1000
    # independent check of the top location by adaptive quadrature of the density
    from scipy import integrate
    a1 = four_atom_profile.edges[0]
    mass, _ = integrate.quad(lambda E: density_at(E, four_atom_profile), gamma[0], a1, epsabs=1e-12)
    assert N * mass == pytest.approx(0.5, abs=1e-6)
    for lo, hi in four_atom_profile.components:
        block = gamma[(gamma >= lo) & (gamma <= hi)]
        assert np.all(np.diff(block) < 0)


# --- regularity and curvature -------------------------------------------------

def test_regularity_marchenko_pastur(mp_quarter):
    rep = check_regularity(solve_profile(mp_quarter), tau=0.1)
    assert [e.regular for e in rep.edges] == [True, True]
    assert [e.pole_distance for e in rep.edges] == pytest.approx([1 / 3, 1.0], abs=1e-12)
    assert rep.edges[0].min_gap == pytest.approx(2.0, abs=1e-12)
    assert rep.all_regular


def test_regularity_four_atom_small_tau(four_atom_profile):
    rep = check_regularity(four_atom_profile, tau=0.005, floor=1e-4)
    assert all(e.regular for e in rep.edges)


def test_regularity_flags_follow_stored_numbers(four_atom_profile):
    rep = check_regularity(four_atom_profile, tau=0.05)
    for e in rep.edges:
        assert e.regular == (e.a >= 0.05 and e.min_gap >= 0.05 and e.pole_distance >= 0.05)


@pytest.mark.parametrize("k, varpi", [(2, 0.5), (1, 10.125 ** (1 / 3))])
def test_edge_curvature_marchenko_pastur(mp_quarter, k, varpi):
    assert edge_curvature(solve_profile(mp_quarter), k) == pytest.approx(varpi, abs=1e-12)


def test_edge_curvature_rejects_hard_edge():
    with pytest.raises(RegularityError):
        edge_curvature(solve_profile(PopulationModel.identity(1.0)), 2)


def test_scaling_covariance_rescales_edges(four_atom_profile):
    c = 0.7
    scaled = solve_profile(four_atom_profile.model.scaled(c))
    assert scaled.edges == pytest.approx(c * four_atom_profile.edges, rel=1e-10)
    assert scaled.counts == four_atom_profile.counts
    z = 2.0 + 0.3j
    assert solve_m(c * z, scaled.model).m == pytest.approx(solve_m(z, four_atom_profile.model).m / c, abs=1e-10)


# --- stability coefficients ---------------------------------------------------

def test_beta_vanishes_at_edges(four_atom_profile):
    for a in four_atom_profile.edges[four_atom_profile.edges > 0]:
        _, beta = stability_coefficients(a, four_atom_profile.model)
        assert abs(beta) < 1e-4


def test_beta_bulk_and_identity(mp_quarter):
    m = mp_quadratic_m(1.0, 0.25)
    _, beta = stability_coefficients(1.0, mp_quarter)
    fp = 1 / m**2 - 0.25 / (m + 1) ** 2
    assert beta == pytest.approx(m**2 * fp, abs=1e-10)
    assert abs(beta) >= 0.1


def test_beta_real_outside_support(four_atom_profile):
    _, beta = stability_coefficients(20.0, four_atom_profile.model)
    assert abs(beta.imag) < 1e-12
    assert 0.1 < abs(beta) < 10


def test_alpha_beta_expand_f_difference(four_atom):
    # f(u) - f(m) = (w - z) is equivalent to alpha (u-m)^2 + beta (u-m) = u m (w - z)
    z = 3.0 + 0.2j
    m = solve_m(z, four_atom).m
    u = m + 0.01 + 0.02j
    alpha, beta = stability_coefficients(z, four_atom, u=u)
    w = evaluate_f_complex(u, four_atom)
    assert alpha * (u - m) ** 2 + beta * (u - m) == pytest.approx(u * m * (w - z), abs=1e-12)


def evaluate_f_complex(u, model):
    from covlaw.model import f_complex
    return complex(f_complex(u, model))


# --- properties ---------------------------------------------------------------

def _model(phi, ss, ws):
    ws = np.array(ws[:len(ss)])
    return PopulationModel.from_atoms(phi, list(zip(ss, ws / ws.sum())))


model_args = (st.floats(0.05, 5.0), st.lists(st.floats(0.2, 8.0), min_size=1, max_size=4, unique=True),
              st.lists(st.floats(0.1, 1.0), min_size=4, max_size=4))


@settings(max_examples=40, deadline=None)
@given(*model_args, st.floats(0.05, 12.0), st.floats(1e-4, 5.0))
def test_residual_and_herglotz(phi, ss, ws, E, eta):
    model = _model(phi, ss, ws)
    val = solve_m(complex(E, eta), model)
    assert val.residual <= 1e-11 * max(1.0, abs(val.z))
    assert val.m.imag > 0


@settings(max_examples=25, deadline=None)
@given(*model_args, st.floats(0.05, 12.0))
def test_herglotz_monotonicity_in_eta(phi, ss, ws, E):
    model = _model(phi, ss, ws)
    etas = np.geomspace(1e-3, 10.0, 25)
    m, _ = solve_m_many(E + 1j * etas, model, boundary=False)
    assert np.all(np.diff(etas * m.imag) >= -1e-10 * np.abs(etas[1:] * m.imag[1:]))
    assert np.all(np.diff(m.imag / etas) <= 1e-10 * np.abs(m.imag[:-1] / etas[:-1]))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.02, 0.9), st.floats(0.1, 15.0))
def test_marchenko_pastur_edges(phi, s):
    prof = solve_profile(PopulationModel(phi=phi, atoms=((s, 1.0),), tau=min(0.05, 1 / s)))
    want = [(1 + math.sqrt(phi)) ** 2 * s, (1 - math.sqrt(phi)) ** 2 * s]
    assert prof.edges == pytest.approx(want, rel=1e-10, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(*model_args)
def test_inverse_relation_at_edges(phi, ss, ws):
    prof = solve_profile(_model(phi, ss, ws))
    for x, a in zip(prof.critical_points, prof.edges):
        if not np.isfinite(x) or a <= 0.05:
            continue
        assert evaluate_f(x, prof.model)[0] == pytest.approx(a, abs=1e-12)
        m = solve_m(a, prof.model).m
        assert abs(m - x) <= 1e-4 * max(1.0, abs(x))


@settings(max_examples=15, deadline=None)
@given(*model_args)
def test_mass_is_one(phi, ss, ws):
    prof = solve_profile(_model(phi, ss, ws))
    assert total_mass(prof) == pytest.approx(1.0, abs=1e-6)


def test_square_root_law_at_regular_edges(four_atom_profile):
    kappas = np.geomspace(1e-4, 1e-3, 6)
    for k, a in enumerate(four_atom_profile.edges[:-1]):
        inward = -1.0 if k % 2 == 0 else 1.0
        rho = density_at(a + inward * kappas, four_atom_profile)
        ratio = rho / np.sqrt(kappas)
        assert ratio.max() / ratio.min() < 1.2
        assert ratio.min() > 0


def test_component_masses_match_counts(four_atom_profile):
    masses = [component_mass(four_atom_profile, k) for k in range(3)]
    assert np.array(masses) * 1000 == pytest.approx([10, 10, 80], abs=1e-6)
