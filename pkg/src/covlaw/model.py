"""Deterministic spectral theory of the sample covariance model.

The asymptotic eigenvalue density of ``X* T* T X`` is encoded by its Stieltjes
transform ``m(z)``, which is the unique solution in the upper half-plane of
``z = f(m)`` with

    f(x) = -1/x + sum_i r_i / (x + 1/s_i),    r_i = phi * weight_i.

Everything here is a pure function of a :class:`PopulationModel`.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

logger = logging.getLogger(__name__)

# Default configuration thresholds (regularity and domains).
TAU = 0.05
TAU_PRIME = 0.1
BULK_FLOOR = 0.01

RESIDUAL_TOL = 1e-11
BOUNDARY_ETA = 1e-9
ETA_RATIO = 0.25  # geometric step of the eta continuation
_POLE_GUARD = 1e-13


class ModelError(ValueError):
    """Invalid population model."""


class PoleError(ArithmeticError):
    """Evaluation point coincides with a pole of ``f``."""


class SolverError(RuntimeError):
    """The self-consistent equation could not be solved to tolerance."""

    def __init__(self, message, last_iterate=None, residual=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class RegularityError(ValueError):
    """An operation that needs a regular edge was given a degenerate one."""


class ConsistencyError(RuntimeError):
    """Two independent computations of the same integer disagree."""


@dataclass(frozen=True)
class PopulationModel:
    """Dimensional ratio ``phi = M/N`` plus the atomic spectral measure of Sigma.

    ``atoms`` holds ``(s_i, weight_i)`` pairs with ``s_i`` strictly decreasing.
    An atom with ``s = 0`` is allowed and represents the mass of the population
    spectrum at zero; the remaining mass ``1 - sum(weights)`` is also put at zero.
    """

    phi: float
    atoms: tuple
    dims: Optional[tuple] = None  # (M, Mhat, N)
    tau: float = TAU

    def __post_init__(self):
        atoms = tuple((float(s), float(w)) for s, w in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if not (self.phi > 0 and math.isfinite(self.phi)):
            raise ModelError(f"phi must be a positive real, got {self.phi!r}")
        if not atoms:
            raise ModelError("at least one atom is required")
        s = [a[0] for a in atoms]
        w = [a[1] for a in atoms]
        if any(x < 0 for x in s):
            raise ModelError("population eigenvalues must be nonnegative")
        if any(not (x > 0) for x in w):
            raise ModelError("atom weights must be positive")
        if any(s[i] <= s[i + 1] for i in range(len(s) - 1)):
            raise ModelError("atoms must be strictly decreasing in s")
        if sum(w) > 1 + 1e-12:
            raise ModelError(f"atom weights sum to {sum(w)!r} > 1")
        if s[0] > 1 / self.tau:
            raise ModelError(f"largest population eigenvalue {s[0]} exceeds 1/tau = {1 / self.tau}")
        if self.mass_near_zero() > 1 - self.tau + 1e-12:
            raise ModelError("population spectrum is concentrated at zero")
        if self.dims is not None:
            M, Mhat, N = (int(d) for d in self.dims)
            if min(M, Mhat, N) <= 0:
                raise ModelError("dimensions must be positive integers")
            if abs(M / N - self.phi) > 1e-12 * max(1.0, self.phi):
                raise ModelError(f"phi={self.phi} inconsistent with M/N={M}/{N}")
            object.__setattr__(self, "dims", (M, Mhat, N))

    # -- constructors -------------------------------------------------------
    @classmethod
    def from_atoms(cls, phi, atoms, dims=None, tau=TAU):
        """Build a model from unordered ``(s, weight)`` pairs, merging duplicates."""
        merged = {}
        for s, w in atoms:
            merged[float(s)] = merged.get(float(s), 0.0) + float(w)
        ordered = sorted(merged.items(), key=lambda a: -a[0])
        return cls(phi=phi, atoms=tuple(ordered), dims=dims, tau=tau)

    @classmethod
    def identity(cls, phi, scale=1.0, dims=None):
        return cls(phi=phi, atoms=((float(scale), 1.0),), dims=dims)

    @classmethod
    def from_eigenvalues(cls, sigma, N, Mhat=None, tau=TAU, decimals=12):
        """Empirical spectral measure of a population covariance with eigenvalues ``sigma``."""
        sigma = np.asarray(sigma, dtype=float)
        M = sigma.size
        vals, counts = np.unique(np.round(sigma, decimals), return_counts=True)
        atoms = [(float(v), c / M) for v, c in zip(vals[::-1], counts[::-1])]
        return cls(phi=M / N, atoms=tuple(atoms), dims=(M, Mhat or M, N), tau=tau)

    @classmethod
    def from_dict(cls, data):
        allowed = {"phi", "atoms", "dims", "tau"}
        unknown = set(data) - allowed
        if unknown:
            raise ModelError(f"unknown model keys: {sorted(unknown)}")
        atoms = [(a["s"], a["weight"]) for a in data["atoms"]]
        dims = data.get("dims")
        if dims is not None:
            dims = (dims["M"], dims.get("Mhat", dims["M"]), dims["N"])
        return cls.from_atoms(data["phi"], atoms, dims=dims, tau=data.get("tau", TAU))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_dict(self):
        out = {"phi": self.phi, "atoms": [{"s": s, "weight": w} for s, w in self.atoms]}
        if self.dims is not None:
            M, Mhat, N = self.dims
            out["dims"] = {"M": M, "Mhat": Mhat, "N": N}
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    # -- derived quantities -------------------------------------------------
    @property
    def s(self):
        """Distinct nonzero population eigenvalues, decreasing."""
        return np.array([s for s, _ in self.atoms if s > 0])

    @property
    def r(self):
        """``phi * pi({s_i})`` for the nonzero atoms."""
        return np.array([self.phi * w for s, w in self.atoms if s > 0])

    @property
    def poles(self):
        """``-1/s_i``, increasing (closest to zero first reversed)."""
        return -1.0 / self.s

    def mass_near_zero(self):
        w_small = sum(w for s, w in self.atoms if s <= self.tau)
        return w_small + max(0.0, 1.0 - sum(w for _, w in self.atoms))

    def scaled(self, c):
        """The model of ``c * Sigma``."""
        return PopulationModel(phi=self.phi, atoms=tuple((c * s, w) for s, w in self.atoms),
                               dims=self.dims, tau=min(self.tau, 1 / (c * self.atoms[0][0])))


@dataclass(frozen=True)
class StieltjesValue:
    z: complex
    m: complex
    residual: float


@dataclass
class DensityProfile:
    """Solved structure of the asymptotic density: critical points, edges, components."""

    model: PopulationModel
    critical_points: np.ndarray  # x_1 >= ... >= x_{2p-1}, then x_{2p} in I_0 (may be inf)
    edges: np.ndarray  # a_k = f(x_k)
    atom_mass_at_zero: float
    degenerate: list = field(default_factory=list)  # indices k with a double critical point
    counts: Optional[tuple] = None
    solver_settings: dict = field(default_factory=lambda: {"residual_tol": RESIDUAL_TOL,
                                                           "boundary_eta": BOUNDARY_ETA})

    @property
    def p(self):
        return len(self.edges) // 2

    @property
    def components(self):
        """Intervals ``[a_{2k}, a_{2k-1}]`` intersected with ``(0, inf)``, top component first."""
        out = []
        for k in range(self.p):
            lo, hi = self.edges[2 * k + 1], self.edges[2 * k]
            out.append((max(lo, 0.0), hi))
        return out

    def kappa(self, E):
        """Distance from ``E`` to the nearest edge."""
        E = np.asarray(E, dtype=float)
        return np.min(np.abs(E[..., None] - self.edges), axis=-1)

    def in_support(self, E):
        E = np.asarray(E, dtype=float)
        inside = np.zeros(E.shape, dtype=bool)
        for lo, hi in self.components:
            inside |= (E >= lo) & (E <= hi)
        return inside

    def dist_to_support(self, E):
        E = np.asarray(E, dtype=float)
        d = np.full(E.shape, np.inf)
        for lo, hi in self.components:
            d = np.minimum(d, np.where(E < lo, lo - E, np.where(E > hi, E - hi, 0.0)))
        if self.atom_mass_at_zero > 0:
            d = np.minimum(d, np.abs(E))
        return d

    def to_dict(self, gamma=None):
        out = {
            "model": self.model.to_dict(),
            "p": self.p,
            "critical_points": [None if not np.isfinite(x) else float(x) for x in self.critical_points],
            "edges": [float(a) for a in self.edges],
            "components": [[float(lo), float(hi)] for lo, hi in self.components],
            "atom_mass_at_zero": self.atom_mass_at_zero,
            "degenerate": list(self.degenerate),
        }
        if self.counts is not None:
            out["counts"] = list(self.counts)
        if gamma is not None:
            out["gamma"] = [float(g) for g in gamma]
        return out


# ---------------------------------------------------------------------------
# f and its derivatives
# ---------------------------------------------------------------------------

def _f_terms(x, b, r):
    d = x[..., None] + b
    f = -1.0 / x + np.sum(r / d, axis=-1)
    fp = 1.0 / x**2 - np.sum(r / d**2, axis=-1)
    return f, fp


def evaluate_f(x, model):
    """Return ``(f(x), f'(x), f''(x))``.

    ``x = inf`` is accepted and yields ``(0, 0, 0)`` (the value at the point at
    infinity of the real projective line).
    """
    if math.isinf(x):
        return 0.0, 0.0, 0.0
    b = 1.0 / model.s
    r = model.r
    if abs(x) < _POLE_GUARD or np.any(np.abs(x + b) < _POLE_GUARD * np.maximum(1.0, b)):
        raise PoleError(f"x={x!r} is at a pole of f")
    d = x + b
    f = -1.0 / x + np.sum(r / d)
    fp = 1.0 / x**2 - np.sum(r / d**2)
    fpp = -2.0 / x**3 + 2.0 * np.sum(r / d**3)
    return float(f), float(fp), float(fpp)


def f_complex(m, model):
    m = np.asarray(m, dtype=complex)
    f, _ = _f_terms(m, 1.0 / model.s, model.r)
    return f


# ---------------------------------------------------------------------------
# Stieltjes transform
# ---------------------------------------------------------------------------

def _newton(z, m, b, r, *, upper, max_iter=60, tol=RESIDUAL_TOL):
    """Safeguarded complex Newton on ``f(m) - z``; keeps ``Im m > 0`` when ``upper``."""
    scale = np.maximum(1.0, np.abs(z))
    active = np.ones(m.shape, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        mi = m[active]
        f, fp = _f_terms(mi, b, r)
        g = f - z[active]
        step = g / fp
        new = mi - step
        if upper:
            bad = ~(new.imag > 0) | ~np.isfinite(new)
            t = 1.0
            while bad.any() and t > 1e-12:
                t *= 0.5
                new = np.where(bad, mi - t * step, new)
                bad = ~(new.imag > 0) | ~np.isfinite(new)
            new = np.where(bad, mi, new)
        m[active] = new
        done = (np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(mi))) | (np.abs(g) <= 1e-3 * tol * scale[active])
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return m


def _fixed_point(z, b, r, iters=200):
    m = -1.0 / z
    for _ in range(iters):
        new = 1.0 / (-z + np.sum(r / (m[..., None] + b), axis=-1))
        if np.all(np.abs(new - m) <= 1e-14 * np.abs(new)):
            return new
        m = new
    return m


def solve_m_many(z, model, *, boundary=True, tol=RESIDUAL_TOL):
    """Vectorised solve of ``z = f(m)``, ``Im m > 0``.

    Points with ``Im z = 0`` are treated as boundary values ``m(E + i0)`` when
    ``boundary`` is set. The solve continues each vertical line from
    ``eta = 1`` downward, then polishes with Newton at the target point.
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if np.any(z.imag < 0):
        raise ValueError("Im z must be nonnegative")
    on_axis = z.imag == 0
    if on_axis.any() and not boundary:
        raise ValueError("real z requires boundary mode")
    b = 1.0 / model.s
    r = model.r
    if b.size == 0:
        # Sigma = 0: rho is a point mass at zero.
        m = -1.0 / z
        return m, np.zeros(z.shape)

    eta_t = np.where(on_axis, BOUNDARY_ETA, z.imag)
    eta0 = np.maximum(1.0, eta_t)
    z0 = z.real + 1j * eta0
    m = _newton(z0, _fixed_point(z0, b, r), b, r, upper=True, tol=tol)
    n_rungs = int(np.ceil(np.log10(np.max(eta0 / eta_t)) / np.log10(1 / ETA_RATIO))) if np.any(eta_t < eta0) else 0
    for j in range(1, n_rungs + 1):
        eta_j = eta0 * (eta_t / eta0) ** (j / n_rungs)
        m = _newton(z.real + 1j * eta_j, m, b, r, upper=True, tol=tol)
    if on_axis.any():
        idx = np.flatnonzero(on_axis)
        mb = _newton(z[idx], m[idx].copy(), b, r, upper=False, max_iter=120, tol=tol)
        tiny = np.abs(mb.imag) <= 1e-10 * np.maximum(1.0, np.abs(mb))
        if np.any(mb.imag[~tiny] < 0):
            # Newton left the correct sheet; the eta-limit is the better estimate.
            bad = ~tiny & (mb.imag < 0)
            mb[bad] = m[idx][bad]
        mb = np.where(tiny, mb.real + 0j, mb)
        m[idx] = mb
    res = np.abs(f_complex(m, model) - z)
    return m, res


def solve_m(z, model, *, boundary=True, tol=RESIDUAL_TOL):
    """Solve for ``m(z)``; raises :class:`SolverError` when the residual is above tolerance."""
    z = complex(z)
    m, res = solve_m_many(np.array([z]), model, boundary=boundary, tol=tol)
    m, res = complex(m[0]), float(res[0])
    if not res <= tol * max(1.0, abs(z)) or not np.isfinite(m):
        raise SolverError(f"no convergence at z={z}: residual {res:.3e}", last_iterate=m, residual=res)
    return StieltjesValue(z=z, m=m, residual=res)


# ---------------------------------------------------------------------------
# critical points and edges
# ---------------------------------------------------------------------------

def _bisect(fn, lo, hi, xtol=1e-14):
    return optimize.brentq(fn, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)


def _toward(fn, start, pole, want_sign):
    """Walk from ``start`` towards ``pole`` until ``fn`` takes ``want_sign``."""
    gap = pole - start
    for _ in range(200):
        gap *= 0.5
        x = pole - gap
        v = fn(x)
        if np.sign(v) == want_sign:
            return x
    raise SolverError("could not bracket a critical point near a pole")


def locate_critical_points(model, degenerate_tol=1e-9):
    """Critical points ``x_k`` and critical values ``a_k = f(x_k)``.

    Returns ``(x, a, degenerate)`` where ``x`` and ``a`` are arrays of length
    ``2p`` ordered per the convention ``x_1 >= ... >= x_{2p-1}`` (critical points
    left of zero) followed by ``x_{2p}`` (the unique one in ``I_0``), and
    ``degenerate`` lists indices (0-based) of double critical points.
    """
    s = model.s
    b = 1.0 / s
    r = model.r
    n = s.size

    def fp(x):
        return 1.0 / x**2 - np.sum(r / (x + b) ** 2)

    def x2fp(x):
        return 1.0 - np.sum(r * x**2 / (x + b) ** 2)

    def x3fpp(x):
        return -2.0 + 2.0 * np.sum(r * x**3 / (x + b) ** 3)

    xs = []
    degenerate = []
    # I_1 = (-1/s_1, 0): x^2 f' decreases from 1 to -inf.
    left = _toward(x2fp, -0.5 * b[0], -b[0], -1.0)
    xs.append(_bisect(x2fp, left, -1e-300 if x2fp(-1e-300) > 0 else -1e-12))
    # I_i = (-1/s_i, -1/s_{i-1}) for i >= 2: x^3 f'' increases from -inf to inf.
    for i in range(1, n):
        lo_pole, hi_pole = -b[i], -b[i - 1]
        mid = 0.5 * (lo_pole + hi_pole)
        lo = _toward(x3fpp, mid, lo_pole, -1.0)
        hi = _toward(x3fpp, mid, hi_pole, 1.0)
        xstar = _bisect(x3fpp, lo, hi)
        peak = fp(xstar)
        scale = 1.0 / xstar**2
        if abs(peak) <= degenerate_tol * scale:
            degenerate.append(len(xs))
            xs.extend([xstar, xstar])
        elif peak > 0:
            lo = _toward(fp, xstar, lo_pole, -1.0)
            hi = _toward(fp, xstar, hi_pole, -1.0)
            xs.append(_bisect(fp, xstar, hi))
            xs.append(_bisect(fp, lo, xstar))
    # I_0 via u = 1/x on (-s_n, inf): F'(u) = -1 + sum r s^2/(s+u)^2 decreases.
    def Fp(u):
        return -1.0 + np.sum(r * s**2 / (s + u) ** 2)

    total_r = float(np.sum(r))
    if abs(total_r - 1.0) <= 1e-14:
        x0 = math.inf
    else:
        lo = _toward(Fp, 0.0, -s[-1], 1.0)
        hi = 1.0
        while Fp(hi) > 0:
            hi *= 2.0
        u = _bisect(Fp, lo, hi, xtol=1e-300)
        x0 = math.inf if u == 0 else 1.0 / u
    xs = np.array(sorted(xs, reverse=True) + [x0])
    a = np.array([evaluate_f(x, model)[0] for x in xs])
    # Ordering of critical values, with touching components allowed.
    if np.any(np.diff(a) > 1e-9 * max(1.0, a[0])):
        warnings.warn("critical values are not decreasing; solver resolution exceeded", RuntimeWarning)
    for k in range(len(a) - 1):
        if k not in degenerate and abs(a[k] - a[k + 1]) <= degenerate_tol * max(1.0, abs(a[k])):
            degenerate.append(k)
    if degenerate:
        warnings.warn(f"near-degenerate critical points at k={sorted(set(degenerate))}", RuntimeWarning)
    return xs, a, sorted(set(degenerate))


def atom_mass(model):
    """Mass of rho at zero: ``(1 - phi * pi((0, inf)))_+``."""
    return max(0.0, 1.0 - float(np.sum(model.r)))


def solve_profile(model):
    """Solve the density structure for ``model``."""
    x, a, deg = locate_critical_points(model)
    prof = DensityProfile(model=model, critical_points=x, edges=a,
                          atom_mass_at_zero=atom_mass(model), degenerate=deg)
    if model.dims is not None:
        try:
            prof.counts = bulk_counts(prof)["counts"]
        except ConsistencyError:
            raise
        except ValueError:
            prof.counts = None
    return prof


def density_at(E, profile_or_model):
    """Density of the absolutely continuous part of rho at ``E > 0``."""
    model = getattr(profile_or_model, "model", profile_or_model)
    E = np.asarray(E, dtype=float)
    if np.any(E <= 0):
        raise ValueError("density is evaluated for E > 0; the atom at 0 is reported separately")
    m, _ = solve_m_many(E.ravel() + 0j, model)
    rho = np.maximum(m.imag, 0.0) / np.pi
    return rho.reshape(E.shape) if E.ndim else float(rho[0])


# ---------------------------------------------------------------------------
# quadrature of rho
# ---------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _component_map(lo, hi, t):
    L = hi - lo
    return lo + 0.5 * L * (1.0 - np.cos(t)), 0.5 * L * np.sin(t)


def _integrand(model, lo, hi, t):
    E, dE = _component_map(lo, hi, t)
    E = np.clip(E, np.nextafter(lo, hi) if lo > 0 else np.finfo(float).tiny, hi)
    return density_at(E, model) * dE


def _gl_nodes(t0, t1):
    t0 = np.asarray(t0, dtype=float)[..., None]
    t1 = np.asarray(t1, dtype=float)[..., None]
    half = 0.5 * (t1 - t0)
    return t0 + half * (_GL_X + 1.0), half * _GL_W


def _panel_data(model, lo, hi, panels):
    """Integrand values at Gauss nodes of ``panels`` equal panels in ``t``."""
    tb = np.linspace(0.0, np.pi, panels + 1)
    nodes, weights = _gl_nodes(tb[:-1], tb[1:])
    vals = _integrand(model, lo, hi, nodes.ravel()).reshape(nodes.shape)
    return tb, vals, weights


def _mass_table(model, lo, hi, panels):
    """Cumulative mass from the top of the component at panel boundaries in ``t``."""
    tb, vals, weights = _panel_data(model, lo, hi, panels)
    pm = np.sum(vals * weights, axis=-1)
    above = np.concatenate([np.cumsum(pm[::-1])[::-1], [0.0]])  # mass in [E(t_j), hi]
    return tb, above, vals

def component_mass(profile, k, panels=48):
    """``int rho`` over component ``k`` (0-based, top component first)."""
    lo, hi = profile.components[k]
    _, above, _ = _mass_table(profile.model, lo, hi, panels)
    return float(above[0])


def total_mass(profile, panels=48):
    return profile.atom_mass_at_zero + sum(component_mass(profile, k, panels) for k in range(profile.p))


_LEG = np.polynomial.legendre
# Legendre coefficients from values at the Gauss nodes (discrete orthogonality).
_TO_LEG = (np.arange(_GL_X.size)[:, None] + 0.5) * _LEG.legvander(_GL_X, _GL_X.size - 1).T * _GL_W


def _component_quantiles(model, lo, hi, targets, panels=64, iters=40):
    """Solve ``int_E^hi rho = q`` for each target mass ``q`` inside one component.

    Inside each panel the integrand is replaced by its degree-15 Legendre
    interpolant, so inversion needs no further density evaluations.
    """
    targets = np.asarray(targets, dtype=float)
    tb, above, vals = _mass_table(model, lo, hi, panels)
    # above is decreasing in t; locate panel j with above[j] >= q >= above[j+1]
    j = np.clip(np.searchsorted(-above, -targets, side="right") - 1, 0, panels - 1)
    half = 0.5 * (tb[1] - tb[0])
    coef = _TO_LEG @ vals.T  # (deg+1, panels), integrand in local variable y
    anti = _LEG.legint(coef, lbnd=1.0, axis=0) * half  # mass between y and panel end, negated
    c_j, a_j = coef[:, j], anti[:, j]
    rest = above[j + 1]
    y = np.zeros(targets.shape)
    lo_b, hi_b = -np.ones(targets.shape), np.ones(targets.shape)
    for _ in range(iters):
        g = rest - _LEG.legval(y, a_j, tensor=False) - targets
        d = -_LEG.legval(y, c_j, tensor=False) * half
        lo_b = np.where(g > 0, y, lo_b)
        hi_b = np.where(g <= 0, y, hi_b)
        new = y - np.where(d < 0, g / np.where(d < 0, d, -1.0), 0.0)
        outside = (new <= lo_b) | (new >= hi_b) | (d >= 0)
        y = np.where(outside, 0.5 * (lo_b + hi_b), new)
        if np.all(np.abs(g) <= 1e-15):
            break
    t = tb[j] + half * (y + 1.0)
    E, _ = _component_map(lo, hi, t)
    return E


def bulk_counts(profile, panels=48):
    """Classical eigenvalue counts per component, by quadrature and by counting.

    Returns a dict with ``counts`` (integers), ``quadrature`` (real ``N int rho``
    per component) and ``counting`` (the pole-counting formula).
    """
    model = profile.model
    if model.dims is None:
        raise ValueError("bulk_counts needs model dimensions")
    M, _, N = model.dims
    p = profile.p
    quad = np.array([N * component_mass(profile, k, panels) for k in range(p)])
    x = profile.critical_points
    w_M = np.array([M * w for s, w in model.atoms if s > 0])
    if np.any(np.abs(w_M - np.round(w_M)) > 1e-6):
        raise ValueError("M * weight must be integral for every atom")
    w_M = np.round(w_M)
    poles = -1.0 / model.s
    counting = []
    for k in range(p):
        hi_x = x[2 * k]
        lo_x = x[2 * k + 1]
        if not np.isfinite(lo_x) or lo_x > 0:
            # last component: the remaining nontrivial eigenvalues
            counting.append(None)
            continue
        counting.append(float(np.sum(w_M[(poles >= lo_x) & (poles <= hi_x)])))
    rank = min(N, int(round(np.sum(w_M))))
    if counting and counting[-1] is None:
        counting[-1] = float(rank - sum(c for c in counting[:-1]))
    elif M >= N:
        counting[-1] = float(rank - sum(counting[:-1]))
    counting = np.array(counting)
    if np.any(np.abs(quad - counting) > 0.5):
        raise ConsistencyError(f"quadrature counts {quad} disagree with counting formula {counting}")
    counts = tuple(int(c) for c in counting)
    return {"counts": counts, "quadrature": quad, "counting": counting}


def classical_locations(profile, N=None, panels=64):
    """Classical eigenvalue locations ``gamma_1 >= ... >= gamma_{M wedge N}``.

    Component ``k`` receives its ``N_k`` locations through
    ``N int_{gamma_{k,i}}^{a_{2k-1}} rho = i - 1/2``.
    """
    model = profile.model
    if N is None:
        if model.dims is None:
            raise ValueError("N is required when the model carries no dimensions")
        N = model.dims[2]
    if profile.counts is not None and model.dims is not None and model.dims[2] == N:
        counts = profile.counts
    else:
        counts = [int(round(N * component_mass(profile, k))) for k in range(profile.p)]
    out = []
    for k, (lo, hi) in enumerate(profile.components):
        nk = counts[k]
        if nk <= 0:
            continue
        targets = (np.arange(1, nk + 1) - 0.5) / N
        out.append(_component_quantiles(model, lo, hi, targets, panels=panels))
    gamma = np.concatenate(out) if out else np.zeros(0)
    return gamma


def component_gamma(profile, gamma):
    """Split a gamma vector into per-component blocks of sizes ``N_k``."""
    blocks, start = [], 0
    for nk in profile.counts:
        blocks.append(gamma[start:start + nk])
        start += nk
    return blocks


# ---------------------------------------------------------------------------
# regularity, curvature, stability
# ---------------------------------------------------------------------------

@dataclass
class EdgeCheck:
    k: int
    a: float
    min_gap: float
    pole_distance: float
    regular: bool


@dataclass
class BulkCheck:
    k: int
    interval: tuple
    min_density: Optional[float]
    regular: Optional[bool]


@dataclass
class RegularityReport:
    tau: float
    tau_prime: float
    floor: float
    edges: list
    bulks: list
    stability: list  # (z, alpha, beta)

    @property
    def all_regular(self):
        return all(e.regular for e in self.edges if e.a >= self.tau) and \
            all(b.regular is not False for b in self.bulks)


def check_regularity(profile, tau=TAU, tau_prime=TAU_PRIME, floor=BULK_FLOOR, n_grid=65):
    """Edge and bulk regularity diagnostics; failures are report entries."""
    a = profile.edges
    x = profile.critical_points
    b = 1.0 / profile.model.s
    edges = []
    for k in range(len(a)):
        others = np.delete(a, k)
        gap = float(np.min(np.abs(a[k] - others))) if others.size else math.inf
        pole = float(np.min(np.abs(x[k] + b))) if np.isfinite(x[k]) else math.inf
        ok = bool(a[k] >= tau and gap >= tau and pole >= tau)
        edges.append(EdgeCheck(k=k + 1, a=float(a[k]), min_gap=gap, pole_distance=pole, regular=ok))
    bulks, stab = [], []
    for k, (lo, hi) in enumerate(profile.components):
        lo2, hi2 = a[2 * k + 1] + tau_prime, a[2 * k] - tau_prime
        if lo2 >= hi2 or hi2 <= 0:
            bulks.append(BulkCheck(k=k + 1, interval=(lo2, hi2), min_density=None, regular=None))
            continue
        lo2 = max(lo2, 1e-12)
        grid = lo2 + (hi2 - lo2) * 0.5 * (1 - np.cos(np.linspace(0, np.pi, n_grid)))
        rho = density_at(grid, profile.model)
        mn = float(np.min(rho))
        bulks.append(BulkCheck(k=k + 1, interval=(lo2, hi2), min_density=mn, regular=bool(mn >= floor)))
        zc = 0.5 * (lo2 + hi2) + 0j
        al, be = stability_coefficients(zc, profile.model)
        stab.append((zc, al, be))
    return RegularityReport(tau=tau, tau_prime=tau_prime, floor=floor, edges=edges, bulks=bulks, stability=stab)


def edge_curvature(profile, k):
    """``varpi_k = (|f''(x_k)| / 2)^{1/3}`` for the 1-based edge index ``k``."""
    x = profile.critical_points[k - 1]
    if (k - 1) in profile.degenerate or (k - 2) in profile.degenerate:
        raise RegularityError(f"edge {k} is degenerate")
    if not np.isfinite(x):
        raise RegularityError(f"edge {k} is the hard edge at zero (critical point at infinity)")
    fpp = evaluate_f(x, profile.model)[2]
    if abs(fpp) < 1e-10:
        raise RegularityError(f"edge {k}: f''(x_k) vanishes")
    return (abs(fpp) / 2.0) ** (1.0 / 3.0)


def stability_coefficients(z, model, u=None):
    """Coefficients ``(alpha, beta)`` of ``f(u) - f(m) = w - z`` written as
    ``alpha (u-m)^2 + beta (u-m) = u m (w - z)``.
    """
    z = complex(z)
    m = solve_m(z, model).m
    if u is None:
        u = m
    b = 1.0 / model.s
    r = model.r
    if np.any(np.abs(m + b) < _POLE_GUARD) or np.any(np.abs(u + b) < _POLE_GUARD):
        raise PoleError("m or u at a pole of f")
    alpha = -np.sum(m * b * r / ((m + b) ** 2 * (u + b)))
    beta = 1.0 - np.sum(m**2 * r / (m + b) ** 2)
    return complex(alpha), complex(beta)


def density_grid(profile, n=400, pad=0.05):
    """Density on a grid covering the support, clustered at edges."""
    a = profile.edges
    top = a[0] * (1 + pad) + pad
    pts = [np.linspace(1e-6 * top, top, n)]
    for lo, hi in profile.components:
        t = np.linspace(0, np.pi, max(8, n // (2 * profile.p)))
        pts.append(lo + (hi - lo) * 0.5 * (1 - np.cos(t)))
    E = np.unique(np.concatenate(pts))
    E = E[E > 0]
    return E, density_at(E, profile.model)
