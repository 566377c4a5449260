"""Block resolvent ``G(z)`` from one singular value decomposition.

With ``Y = Sigma^{1/2} X = sum_k sqrt(lambda_k) xi_k zeta_k^*`` the block
resolvent of ``[[-Sigma^{-1}, X], [X^*, -z]]`` is

    G = -diag(Sigma, 0) + Sigma_^{1/2} (sum_k u_k u_k^* / (lambda_k - z)) Sigma_^{1/2},
    u_k = (1(k<=M) sqrt(lambda_k) xi_k, 1(k<=N) zeta_k),

so every generalized entry at every ``z`` is a weighted sum over ``k`` of
projections that are computed once per vector.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .equivalents import EquivalentSet, WignerEquivalent, psi, wigner_m_many
from .model import solve_m_many
from .sampler import STREAM_VECTORS, rng_for

logger = logging.getLogger(__name__)

SCAN_COLUMNS = ("z_re", "z_im", "psi", "max_aniso", "aniso_ratio", "avg_err", "avg_ratio", "n_vec", "seed")


@dataclass
class ResolventFactorization:
    lam: np.ndarray  # eigenvalues lambda_1 >= ... >= lambda_{M v N}, zero padded
    xi: np.ndarray  # M x M, columns xi_k
    zeta: np.ndarray  # N x N, columns zeta_k
    sigma: np.ndarray  # population eigenvalues
    basis: Optional[np.ndarray] = None  # eigenvectors of Sigma, None for diagonal Sigma

    @property
    def M(self):
        return self.xi.shape[0]

    @property
    def N(self):
        return self.zeta.shape[0]

    @property
    def K(self):
        return self.lam.size

    def _sigma_pow(self, v, power):
        """``Sigma^power v`` for the upper block vectors (stacked along the last axis)."""
        if self.basis is None:
            return v * self.sigma**power
        return ((v @ self.basis.conj()) * self.sigma**power) @ self.basis.T

    def project(self, v):
        """Coordinates ``(xi_k^* Sigma^{1/2} v_M, zeta_k^* v_N)`` padded to length ``K``."""
        v = np.asarray(v, dtype=complex)
        vm, vn = v[..., :self.M], v[..., self.M:]
        a = self._sigma_pow(vm, 0.5) @ self.xi.conj()
        b = vn @ self.zeta.conj()
        pad_a = np.zeros(v.shape[:-1] + (self.K - self.M,), dtype=complex)
        pad_b = np.zeros(v.shape[:-1] + (self.K - self.N,), dtype=complex)
        return np.concatenate([a, pad_a], axis=-1), np.concatenate([b, pad_b], axis=-1)

    def weights(self, z):
        """``1 / (lambda_k - z)`` for an array of ``z``; shape ``z.shape + (K,)``."""
        z = np.asarray(z, dtype=complex)
        return 1.0 / (self.lam - z[..., None])

    def entries(self, z, V, W=None):
        """``<v_a, G(z) w_b>`` for all pairs; returns shape ``(len(z), len(V), len(W))``."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        V = np.atleast_2d(np.asarray(V, dtype=complex))
        W = V if W is None else np.atleast_2d(np.asarray(W, dtype=complex))
        av, bv = self.project(V)
        aw, bw = self.project(W)
        sq = np.sqrt(self.lam)
        base = -V[:, :self.M].conj() @ self._sigma_pow(W[:, :self.M], 1.0).T
        # <v, Sigma_^{1/2} u_k> = sqrt(lam_k) conj(a_k) + conj(b_k)
        cv = (sq * av + bv).conj()
        cw = sq * aw + bw
        wz = self.weights(z)
        return base[None] + np.einsum("ak,zk,bk->zab", cv, wz, cw)

    def entry(self, z, v, w):
        return complex(self.entries(np.array([z]), v[None], w[None])[0, 0, 0])

    def dense(self, z):
        """The full block resolvent at ``z`` assembled from the decomposition."""
        I = np.eye(self.M + self.N)
        return self.entries(np.array([z]), I)[0]


def factorize(Y, sigma, basis=None, norm_bound=None):
    """Factor ``Y = Sigma^{1/2} X`` once for all spectral parameters.

    ``norm_bound`` turns on a soft check of ``lambda_1``; exceeding it is logged.
    """
    Y = np.asarray(Y)
    if not np.all(np.isfinite(Y)):
        raise np.linalg.LinAlgError("non-finite entries in the data matrix")
    M, N = Y.shape
    U, s, Vh = np.linalg.svd(Y, full_matrices=True)
    lam = np.zeros(max(M, N))
    lam[:s.size] = s**2
    if norm_bound is not None and lam[0] > norm_bound:
        logger.warning("largest eigenvalue %.4f exceeds the soft bound %.4f", lam[0], norm_bound)
    return ResolventFactorization(lam=lam, xi=U, zeta=Vh.conj().T,
                                  sigma=np.asarray(sigma, dtype=float), basis=basis)


def factorize_sample(X, sigma, basis=None, norm_bound=None):
    """Factor ``Sigma^{1/2} X`` for a population covariance with eigenpairs ``(sigma, basis)``."""
    X = np.asarray(X)
    root = np.sqrt(np.asarray(sigma, dtype=float))
    if basis is None:
        Y = root[:, None] * X
    else:
        Y = (basis * root) @ basis.conj().T @ X
    return factorize(Y, sigma, basis, norm_bound)


def generalized_entry(fact, z, v, w):
    """``<v, G(z) w>``."""
    return fact.entry(z, np.asarray(v), np.asarray(w))


def empirical_m_N(fact, z):
    """``(1/N) tr R_N(z)``, counting ``N - (M wedge N)`` zero eigenvalues."""
    z = np.asarray(z, dtype=complex)
    lam_n = fact.lam[:fact.N]
    out = np.mean(1.0 / (lam_n - z[..., None]), axis=-1)
    return out if out.ndim else complex(out)


def companion_traces(fact, z):
    """``((1/M) tr R_M, (1/M) tr R_N)`` at ``z``."""
    z = complex(z)
    return (complex(np.sum(1.0 / (fact.lam[:fact.M] - z)) / fact.M),
            complex(np.sum(1.0 / (fact.lam[:fact.N] - z)) / fact.M))


def ward_identity_check(fact, z, w):
    """Relative residual of ``sum_mu |G_{w mu}|^2 = Im G_{ww} / eta`` for ``w`` on the N block."""
    z = complex(z)
    w = np.asarray(w, dtype=complex)
    if w.size == fact.N:
        w = np.concatenate([np.zeros(fact.M, dtype=complex), w])
    if np.any(w[:fact.M] != 0):
        raise ValueError("w must be supported on the N block")
    _, b = fact.project(w)
    wz = fact.weights(np.array([z]))[0]
    # row vector G_{w mu} for mu in the N block: sum_k conj(b_k) zeta_k(mu) / (lam_k - z)
    coef = b.conj()[:fact.N] * wz[:fact.N]
    row = fact.zeta @ coef
    lhs = float(np.sum(np.abs(row) ** 2))
    gww = np.sum(np.abs(b) ** 2 * wz)
    rhs = float(gww.imag / z.imag)
    return abs(lhs - rhs) / max(abs(rhs), 1e-300)


# ---------------------------------------------------------------------------
# scans
# ---------------------------------------------------------------------------

@dataclass
class ErrorScan:
    z: np.ndarray
    psi: np.ndarray
    max_aniso: np.ndarray
    avg_err: np.ndarray
    avg_ratio: np.ndarray
    n_vec: int
    seed: int
    improved_ratio: Optional[np.ndarray] = None
    notes: list = field(default_factory=list)

    @property
    def aniso_ratio(self):
        return self.max_aniso / self.psi

    def rows(self):
        for i, z in enumerate(self.z):
            yield {"z_re": z.real, "z_im": z.imag, "psi": self.psi[i], "max_aniso": self.max_aniso[i],
                   "aniso_ratio": self.aniso_ratio[i], "avg_err": self.avg_err[i],
                   "avg_ratio": self.avg_ratio[i], "n_vec": self.n_vec, "seed": self.seed}

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SCAN_COLUMNS)
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v
                                 for k, v in row.items()})

    @classmethod
    def concat(cls, scans):
        return cls(z=np.concatenate([s.z for s in scans]), psi=np.concatenate([s.psi for s in scans]),
                   max_aniso=np.concatenate([s.max_aniso for s in scans]),
                   avg_err=np.concatenate([s.avg_err for s in scans]),
                   avg_ratio=np.concatenate([s.avg_ratio for s in scans]),
                   n_vec=scans[0].n_vec, seed=scans[0].seed)


def vector_panel(M, N, n_vectors, seed, sigma_basis=None, complex_vectors=False):
    """Unit test vectors on ``R^{M+N}``: half random, the rest structured.

    The structured half cycles through normalized all-ones vectors (per block
    and global), coordinate vectors in both blocks, and eigenvectors of Sigma.
    """
    rng = rng_for(seed, 0, STREAM_VECTORS)
    n_rand = max(1, n_vectors // 2)
    D = M + N
    R = rng.standard_normal((n_rand, D))
    if complex_vectors:
        R = R + 1j * rng.standard_normal((n_rand, D))
    vecs = list(R / np.linalg.norm(R, axis=1, keepdims=True))
    structured = []
    ones = np.ones(D) / math.sqrt(D)
    structured.append(ones)
    up = np.zeros(D)
    up[:M] = 1 / math.sqrt(M)
    structured.append(up)
    lo = np.zeros(D)
    lo[M:] = 1 / math.sqrt(N)
    structured.append(lo)
    picks_m = rng.choice(M, size=min(M, n_vectors), replace=False)
    picks_n = rng.choice(N, size=min(N, n_vectors), replace=False)
    for i, mu in zip(picks_m, picks_n):
        e = np.zeros(D)
        e[i] = 1.0
        structured.append(e)
        e = np.zeros(D)
        e[M + mu] = 1.0
        structured.append(e)
        if sigma_basis is not None:
            e = np.zeros(D, dtype=sigma_basis.dtype)
            e[:M] = sigma_basis[:, i]
            structured.append(e)
    vecs.extend(structured[:n_vectors - n_rand])
    return np.array(vecs, dtype=complex)


def anisotropic_scan(fact, model, zs, n_vectors=16, seed=0, m_shift=0.0, ms=None):
    """Local-law errors of ``Sigma_^{-1} (G - Pi) Sigma_^{-1}`` over a z grid.

    ``m_shift`` perturbs ``m`` inside ``Pi`` (negative control); ``Psi`` and the
    averaged error always use the unperturbed ``m``.
    """
    zs = np.asarray(zs, dtype=complex)
    if ms is None:
        ms, _ = solve_m_many(zs, model, boundary=False)
    ms = np.asarray(ms, dtype=complex)
    P = vector_panel(fact.M, fact.N, n_vectors, seed, fact.basis)
    # whitening: v -> Sigma_^{-1} v
    Pw = P.copy()
    Pw[:, :fact.M] = fact._sigma_pow(P[:, :fact.M], -1.0)
    G = fact.entries(zs, Pw)
    ps = psi(zs, ms, fact.N)
    max_aniso = np.empty(zs.size)
    for i, (z, m) in enumerate(zip(zs, ms)):
        eq = EquivalentSet(z=z, m=m + m_shift, sigma=fact.sigma, N=fact.N, basis=fact.basis)
        Pi = eq.entry(Pw[:, None, :], Pw[None, :, :])
        max_aniso[i] = np.max(np.abs(G[i] - Pi))
    mN = empirical_m_N(fact, zs)
    avg_err = np.abs(mN - (ms + m_shift))
    return ErrorScan(z=zs, psi=ps, max_aniso=max_aniso, avg_err=avg_err,
                     avg_ratio=avg_err * fact.N * zs.imag, n_vec=len(P), seed=seed)


def averaged_scan(fact, profile, zs, seed=0, ms=None):
    """``|m_N - m|`` and ``|m_N - m| N eta`` per z, plus the outside-spectrum ratio
    ``|m_N - m| / ((kappa + eta)^{-1/2} Psi^2)``.
    """
    zs = np.asarray(zs, dtype=complex)
    if ms is None:
        ms, _ = solve_m_many(zs, profile.model, boundary=False)
    mN = empirical_m_N(fact, zs)
    err = np.abs(mN - ms)
    ps = psi(zs, ms, fact.N)
    kappa = profile.kappa(zs.real)
    improved = err / ((kappa + zs.imag) ** -0.5 * ps**2)
    return ErrorScan(z=zs, psi=ps, max_aniso=np.full(zs.size, np.nan), avg_err=err,
                     avg_ratio=err * fact.N * zs.imag, n_vec=0, seed=seed, improved_ratio=improved)


def wigner_scan(sample, a_spectrum, zs, n_vectors=16, seed=0, a_basis=None, m_shift=0.0):
    """Anisotropic and averaged errors of ``(W + A - z)^{-1}`` against ``Pi^W``."""
    H = np.asarray(sample.payload if hasattr(sample, "payload") else sample)
    N = H.shape[0]
    zs = np.asarray(zs, dtype=complex)
    mu, U = np.linalg.eigh(H)
    ms, _ = wigner_m_many(zs, a_spectrum, boundary=False)
    rng = rng_for(seed, 0, STREAM_VECTORS)
    n_rand = max(1, n_vectors // 2)
    R = rng.standard_normal((n_rand, N))
    vecs = list(R / np.linalg.norm(R, axis=1, keepdims=True))
    vecs.append(np.ones(N) / math.sqrt(N))
    for i in rng.choice(N, size=min(N, n_vectors), replace=False):
        e = np.zeros(N)
        e[i] = 1.0
        vecs.append(e)
        if a_basis is not None:
            vecs.append(a_basis[:, i])
    V = np.array(vecs[:n_vectors], dtype=complex)
    pv = V @ U.conj()  # <u_k, v> conjugated projections
    wz = 1.0 / (mu - zs[:, None])
    G = np.einsum("ak,zk,bk->zab", pv.conj(), wz, pv)
    ps = psi(zs, ms, N)
    max_aniso = np.empty(zs.size)
    for i, (z, m) in enumerate(zip(zs, ms)):
        eq = WignerEquivalent(z=z, m=m + m_shift, a=np.asarray(a_spectrum, dtype=float), basis=a_basis, N=N)
        Pi = eq.entry(V[:, None, :], V[None, :, :])
        max_aniso[i] = np.max(np.abs(G[i] - Pi))
    mN = np.mean(wz, axis=-1)
    err = np.abs(mN - ms)
    return ErrorScan(z=zs, psi=ps, max_aniso=max_aniso, avg_err=err, avg_ratio=err * N * zs.imag,
                     n_vec=len(V), seed=seed)
