"""Deterministic equivalents of resolvents and the domains on which they are compared.

Matrices are kept factored: an orthonormal eigenbasis together with scalar
functions of the eigenvalues. Generalized entries ``<v, P w>`` then cost
``O(M + N)`` once ``v`` and ``w`` are expressed in the eigenbasis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from .model import (BOUNDARY_ETA, ETA_RATIO, RESIDUAL_TOL, SolverError, StieltjesValue, solve_m)


class SingularEquivalentError(ArithmeticError):
    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


class DomainError(ValueError):
    """The requested spectral domain is empty."""


def psi(z, m, N):
    """Fluctuation scale ``sqrt(Im m / (N eta)) + 1 / (N eta)``."""
    eta = np.imag(z)
    if np.any(np.asarray(eta) <= 0):
        raise ValueError("psi needs Im z > 0")
    return np.sqrt(np.maximum(np.imag(m), 0.0) / (N * eta)) + 1.0 / (N * eta)


def _sigma_spectrum(model):
    """Population eigenvalues with multiplicity when dimensions are known."""
    if model.dims is None:
        raise ValueError("sigma_spectrum is required when the model carries no dimensions")
    M = model.dims[0]
    out = []
    for s, w in model.atoms:
        out.extend([s] * int(round(M * w)))
    out.extend([0.0] * (M - len(out)))
    return np.array(out[:M])


@dataclass
class EquivalentSet:
    """Deterministic equivalent ``Pi(z) = diag(-Sigma (1 + m Sigma)^{-1}, m I_N)``.

    ``sigma`` are the population eigenvalues and ``basis`` their eigenvectors as
    columns (``None`` means Sigma is diagonal in the standard basis).
    """

    z: complex
    m: complex
    sigma: np.ndarray
    N: int
    basis: Optional[np.ndarray] = None
    variant: str = "plain"
    e_direction: Optional[np.ndarray] = None

    @property
    def M(self):
        return self.sigma.size

    @property
    def phi(self):
        return self.M / self.N

    @property
    def psi(self):
        return float(psi(self.z, self.m, self.N))

    @property
    def upper_diag(self):
        """Eigenvalues of the upper block ``-Sigma (1 + m Sigma)^{-1}``."""
        return -self.sigma / (1.0 + self.m * self.sigma)

    @property
    def rm_diag(self):
        """Eigenvalues of the equivalent of ``R_M``: ``-1 / (z (1 + m Sigma))``."""
        return -1.0 / (self.z * (1.0 + self.m * self.sigma))

    def _dense(self, d):
        if self.basis is None:
            return np.diag(d)
        return (self.basis * d) @ self.basis.conj().T

    @property
    def pi_upper(self):
        return self._dense(self.upper_diag)

    @property
    def pi_lower_scalar(self):
        return self.m

    @property
    def rm_equiv(self):
        return self._dense(self.rm_diag)

    def to_basis(self, v):
        """Express the upper block of ``v`` in Sigma's eigenbasis."""
        v = np.asarray(v)
        up = v[..., :self.M]
        if self.basis is not None:
            up = up @ self.basis.conj()
        return up, v[..., self.M:]

    def entry(self, v, w, whitened=False):
        """``<v, Pi w>``; with ``whitened`` the entry of ``Sigma_^{-1} Pi Sigma_^{-1}``.

        ``v`` and ``w`` may be stacked along a leading axis.
        """
        vu, vl = self.to_basis(v)
        wu, wl = self.to_basis(w)
        d = self.upper_diag
        if whitened:
            d = -1.0 / (self.sigma * (1.0 + self.m * self.sigma))
        out = np.sum(vu.conj() * d * wu, axis=-1) + self.m * np.sum(vl.conj() * wl, axis=-1)
        if self.variant == "dotted":
            e = self.e_direction
            out = out - (self.m + 1.0 / self.z) * np.sum(vl.conj() * e, axis=-1) * np.sum(e.conj() * wl, axis=-1)
        return out

    def dense(self, whitened=False):
        """The full ``(M+N) x (M+N)`` matrix; for tests at small size."""
        d = self.upper_diag
        if whitened:
            d = -1.0 / (self.sigma * (1.0 + self.m * self.sigma))
        out = np.zeros((self.M + self.N, self.M + self.N), dtype=complex)
        out[:self.M, :self.M] = self._dense(d)
        out[self.M:, self.M:] = self.m * np.eye(self.N)
        if self.variant == "dotted":
            e = self.e_direction
            out[self.M:, self.M:] -= (self.m + 1.0 / self.z) * np.outer(e, e.conj())
        return out

    def consistency_residual(self):
        """Residual of the trace identity between the two companion resolvents.

        ``(1/M) tr R_M = (1/M) tr R_N - ((phi - 1)/phi) / z`` holds exactly for the
        resolvents; substituting the equivalents turns it into the defining
        equation for ``m``.
        """
        lhs = np.mean(self.rm_diag)
        rhs = self.m / self.phi - (self.phi - 1.0) / (self.phi * self.z)
        return float(abs(lhs - rhs))

    def to_dict(self):
        return {"z": [self.z.real, self.z.imag], "m": [self.m.real, self.m.imag], "psi": self.psi,
                "variant": self.variant, "M": self.M, "N": self.N,
                "basis": "standard" if self.basis is None else "sigma-eigenbasis"}


def build_equivalents(z, model, sigma_spectrum=None, basis=None, guard=1e-8, m=None):
    """Equivalents at ``z`` for the population model ``model``.

    ``sigma_spectrum`` lists the M eigenvalues of Sigma; by default they are
    expanded from the model's atoms and dimensions.
    """
    z = complex(z)
    if sigma_spectrum is None:
        sigma_spectrum = _sigma_spectrum(model)
    sigma = np.asarray(sigma_spectrum, dtype=float)
    if m is None:
        m = solve_m(z, model).m
    denom = np.abs(1.0 + m * sigma)
    i = int(np.argmin(denom))
    if denom[i] < guard:
        raise SingularEquivalentError(f"|1 + m sigma_{i}| = {denom[i]:.3e} below guard", i)
    N = model.dims[2] if model.dims is not None else int(round(sigma.size / model.phi))
    return EquivalentSet(z=z, m=complex(m), sigma=sigma, N=N, basis=basis)


def dotted_pi(eq, e_direction=None):
    """Centered variant ``Pi - (m + 1/z) e e*`` with ``e`` on the N block."""
    if e_direction is None:
        e_direction = np.full(eq.N, 1.0 / math.sqrt(eq.N))
    return EquivalentSet(z=eq.z, m=eq.m, sigma=eq.sigma, N=eq.N, basis=eq.basis,
                         variant="dotted", e_direction=np.asarray(e_direction, dtype=complex))


# ---------------------------------------------------------------------------
# deformed Wigner
# ---------------------------------------------------------------------------

def _wigner_newton(z, m, a, *, upper, max_iter=80, tol=RESIDUAL_TOL):
    active = np.ones(m.shape, dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        mi = m[active]
        d = a - z[active, None] - mi[:, None]
        h = mi - np.mean(1.0 / d, axis=-1)
        hp = 1.0 - np.mean(1.0 / d**2, axis=-1)
        step = h / hp
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
        done = (np.abs(step) <= 1e-15 * np.maximum(1.0, np.abs(mi))) | (np.abs(h) <= 1e-3 * tol)
        idx = np.flatnonzero(active)
        active[idx[done]] = False
    return m


def wigner_residual(z, m, a):
    return np.abs(m - np.mean(1.0 / (a - z[..., None] - m[..., None]), axis=-1))


def wigner_m_many(z, a_spectrum, *, boundary=True, tol=RESIDUAL_TOL):
    """Vectorised ``m^W(z)`` solving ``m = (1/N) sum_i 1 / (-m + a_i - z)``."""
    a = np.asarray(a_spectrum, dtype=float)
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    on_axis = z.imag == 0
    if on_axis.any() and not boundary:
        raise ValueError("real z requires boundary mode")
    eta_t = np.where(on_axis, BOUNDARY_ETA, z.imag)
    eta0 = np.maximum(1.0, eta_t)
    z0 = z.real + 1j * eta0
    m = -1.0 / (z0 - np.mean(a))
    for _ in range(50):
        m = np.mean(1.0 / (a - z0[:, None] - m[:, None]), axis=-1)
    m = _wigner_newton(z0, m, a, upper=True, tol=tol)
    ratio = np.max(eta0 / eta_t)
    n_rungs = int(np.ceil(np.log(ratio) / np.log(1 / ETA_RATIO))) if ratio > 1 else 0
    for j in range(1, n_rungs + 1):
        m = _wigner_newton(z.real + 1j * eta0 * (eta_t / eta0) ** (j / n_rungs), m, a, upper=True, tol=tol)
    if on_axis.any():
        idx = np.flatnonzero(on_axis)
        mb = _wigner_newton(z[idx], m[idx].copy(), a, upper=False, max_iter=120, tol=tol)
        tiny = np.abs(mb.imag) <= 1e-10 * np.maximum(1.0, np.abs(mb))
        bad = ~tiny & (mb.imag < 0)
        mb[bad] = m[idx][bad]
        m[idx] = np.where(tiny, mb.real + 0j, mb)
    return m, wigner_residual(z, m, a)


def wigner_m(z, a_spectrum, tau=None, boundary=True, tol=RESIDUAL_TOL):
    """Solve for ``m^W(z)``.

    Returns ``(StieltjesValue, guard)`` where ``guard`` is
    ``min_i |-m + a_i - z|``; when ``tau`` is given and the guard is below it,
    a flag is set in the returned dict rather than raising.
    """
    z = complex(z)
    a = np.asarray(a_spectrum, dtype=float)
    m, res = wigner_m_many(np.array([z]), a, boundary=boundary, tol=tol)
    m, res = complex(m[0]), float(res[0])
    if not res <= tol * max(1.0, abs(z)):
        raise SolverError(f"Wigner equation not solved at z={z}: residual {res:.3e}", last_iterate=m, residual=res)
    guard = float(np.min(np.abs(-m + a - z)))
    diag = {"guard": guard, "guard_ok": None if tau is None else guard >= tau}
    return StieltjesValue(z=z, m=m, residual=res), diag


def wigner_edges(a_spectrum):
    """Extreme edges ``(L_-, L_+)`` of the Wigner density for a single-interval support.

    With ``zeta = z + m`` the equation reads ``z = zeta - m_A(zeta)`` where
    ``m_A`` is the Stieltjes transform of A's spectrum; edges are critical values.
    """
    a = np.asarray(a_spectrum, dtype=float)

    def crit(zeta):
        return 1.0 - np.mean(1.0 / (a - zeta) ** 2)

    def value(zeta):
        return zeta - np.mean(1.0 / (a - zeta))

    amax, amin = a.max(), a.min()
    hi = amax + 2.0
    while crit(hi) < 0:
        hi = amax + 2 * (hi - amax)
    zp = optimize.brentq(crit, amax + 1e-12, hi, xtol=1e-15) if crit(amax + 1e-12) < 0 else hi
    lo = amin - 2.0
    while crit(lo) < 0:
        lo = amin - 2 * (amin - lo)
    zm = optimize.brentq(crit, lo, amin - 1e-12, xtol=1e-15)
    return value(zm), value(zp)


@dataclass
class WignerEquivalent:
    z: complex
    m: complex
    a: np.ndarray
    basis: Optional[np.ndarray]
    N: int

    @property
    def diag(self):
        return 1.0 / (-self.m + self.a - self.z)

    @property
    def matrix(self):
        if self.basis is None:
            return np.diag(self.diag)
        return (self.basis * self.diag) @ self.basis.conj().T

    @property
    def psi(self):
        return float(psi(self.z, self.m, self.N))

    def entry(self, v, w):
        v = np.asarray(v)
        w = np.asarray(w)
        if self.basis is not None:
            v = v @ self.basis.conj()
            w = w @ self.basis.conj()
        return np.sum(v.conj() * self.diag * w, axis=-1)

    def trace_residual(self):
        return float(abs(np.mean(self.diag) - self.m))


def wigner_equivalents(z, a_matrix, guard=1e-8, m=None):
    """``Pi^W = (-m^W + A - z)^{-1}`` in A's eigenbasis and the scale ``Psi^W``.

    ``a_matrix`` may be a Hermitian matrix or a 1-d array of diagonal entries.
    """
    a_matrix = np.asarray(a_matrix)
    if a_matrix.ndim == 1:
        a, basis = a_matrix.astype(float), None
    else:
        if not np.allclose(a_matrix, a_matrix.conj().T, atol=1e-12):
            raise ValueError("A must be Hermitian")
        a, basis = np.linalg.eigh(a_matrix)
    if m is None:
        m = wigner_m(z, a)[0].m
    d = np.abs(-m + a - z)
    i = int(np.argmin(d))
    if d[i] < guard:
        raise SingularEquivalentError(f"-m + a_i - z nearly singular at a_{i} = {a[i]}", i)
    eq = WignerEquivalent(z=complex(z), m=complex(m), a=a, basis=basis, N=a.size)
    return eq.matrix, eq.psi, eq


# ---------------------------------------------------------------------------
# spectral domains
# ---------------------------------------------------------------------------

@dataclass
class SpectralDomain:
    """``{E + i eta}`` with ``E`` in a union of intervals and ``eta`` in ``[eta_min, eta_max]``,
    intersected with the fundamental domain (``|z| >= tau``, ``|E| <= 1/tau``).
    """

    kind: str
    tau: float
    tau_prime: float
    N: int
    e_intervals: list
    eta_min: float
    eta_max: float
    k: Optional[int] = None
    ladder_delta: float = 0.1
    excluded: list = field(default_factory=list)  # open intervals removed (support, for outside)

    def contains(self, z):
        z = np.asarray(z, dtype=complex)
        E, eta = z.real, z.imag
        ok = (np.abs(z) >= self.tau) & (np.abs(E) <= 1 / self.tau)
        ok &= (eta >= self.eta_min * (1 - 1e-12)) & (eta <= self.eta_max * (1 + 1e-12))
        in_e = np.zeros(E.shape, dtype=bool)
        for lo, hi in self.e_intervals:
            in_e |= (E >= lo) & (E <= hi)
        for lo, hi in self.excluded:
            in_e &= ~((E > lo) & (E < hi))
        return ok & in_e

    def eta_ladder(self, eta_min=None):
        """Geometric ladder from ``eta_min`` up to ``eta_max`` with step ``N^delta``."""
        lo = self.eta_min if eta_min is None else max(eta_min, self.eta_min)
        step = self.N ** self.ladder_delta
        n = int(math.ceil(math.log(self.eta_max / lo) / math.log(step)))
        return lo * step ** np.arange(n + 1) if n > 0 else np.array([lo])

    def energies(self, n_e):
        lengths = np.array([hi - lo for lo, hi in self.e_intervals])
        share = np.maximum(1, np.round(n_e * lengths / lengths.sum()).astype(int))
        out = []
        for (lo, hi), n in zip(self.e_intervals, share):
            out.append(np.linspace(lo, hi, n + 2)[1:-1] if n > 0 else [])
        E = np.concatenate(out)
        return E[self.contains(E + 1j * self.eta_max)]

    def grid(self, n_e, eta_max=None, eta_min=None):
        """Grid of ``E + i eta`` points: ``n_e`` energies times the eta ladder."""
        E = self.energies(n_e)
        etas = self.eta_ladder(eta_min)
        if eta_max is not None:
            etas = etas[etas <= eta_max * (1 + 1e-12)]
        z = (E[:, None] + 1j * etas[None, :]).ravel()
        return z[self.contains(z)]

    def to_dict(self):
        return {"kind": self.kind, "k": self.k, "tau": self.tau, "tau_prime": self.tau_prime, "N": self.N,
                "e_intervals": [list(map(float, iv)) for iv in self.e_intervals],
                "excluded": [list(map(float, iv)) for iv in self.excluded],
                "eta_min": self.eta_min, "eta_max": self.eta_max}


def make_domain(kind, tau, tau_prime, N, profile=None, k=None, eta_min=None):
    """Spectral domain of ``kind`` in {"full", "edge", "bulk", "outside"}.

    ``k`` is the 1-based edge index for "edge" and component index for "bulk".
    ``eta_min`` overrides the floor ``N^{-1+tau}`` (it may only raise or lower
    the floor, the energy window still follows ``tau``).
    """
    eta_max = 1.0 / tau
    eta_min = N ** (-1.0 + tau) if eta_min is None else float(eta_min)
    if kind == "full":
        ivs = [(-1 / tau, 1 / tau)]
        excluded = []
    else:
        if profile is None:
            raise ValueError(f"domain kind {kind!r} needs a density profile")
        a = profile.edges
        excluded = []
        if kind == "edge":
            if k is None or not 1 <= k <= len(a):
                raise ValueError(f"edge index must be in 1..{len(a)}")
            ivs = [(a[k - 1] - tau_prime, a[k - 1] + tau_prime)]
        elif kind == "bulk":
            if k is None or not 1 <= k <= profile.p:
                raise ValueError(f"component index must be in 1..{profile.p}")
            ivs = [(a[2 * k - 1] + tau_prime, a[2 * k - 2] - tau_prime)]
        elif kind == "outside":
            comps = profile.components
            ivs = [(-1 / tau, 1 / tau)]
            excluded = [(lo - tau_prime, hi + tau_prime) for lo, hi in comps]
            if profile.atom_mass_at_zero > 0:
                excluded.append((-tau_prime, tau_prime))
        else:
            raise ValueError(f"unknown domain kind {kind!r}")
    ivs = [(max(lo, -1 / tau), min(hi, 1 / tau)) for lo, hi in ivs]
    ivs = [(lo, hi) for lo, hi in ivs if hi > lo]
    if not ivs or eta_min > eta_max:
        raise DomainError(f"{kind} domain is empty for tau={tau}, tau'={tau_prime}, N={N}")
    if kind == "outside":
        pieces = _subtract(ivs[0], excluded)
        if not pieces:
            raise DomainError("outside domain is empty")
        ivs = pieces
    return SpectralDomain(kind=kind, tau=tau, tau_prime=tau_prime, N=N, e_intervals=ivs,
                          eta_min=eta_min, eta_max=eta_max, k=k, excluded=excluded)


def _subtract(iv, holes):
    pieces = [iv]
    for lo, hi in sorted(holes):
        nxt = []
        for a, b in pieces:
            if hi <= a or lo >= b:
                nxt.append((a, b))
                continue
            if lo > a:
                nxt.append((a, lo))
            if hi < b:
                nxt.append((hi, b))
        pieces = nxt
    return [p for p in pieces if p[1] > p[0]]
