"""Random ensembles: entry laws, sample covariance and deformed Wigner matrices.

Every draw is keyed by ``(seed, trial, stream)`` through a counter-based
Philox generator, so a trial can be regenerated in isolation and results do
not depend on the order in which trials run.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

KINDS = ("gaussian", "rademacher", "shifted-bernoulli", "two-point", "user-moments")
GAUSSIAN_MOMENTS = (0.0, 1.0, 0.0, 3.0, 0.0, 15.0, 0.0, 105.0)

# stream identifiers inside a trial
STREAM_X = 0
STREAM_PAD = 1
STREAM_WIGNER = 2
STREAM_CHI = 3
STREAM_VECTORS = 4


class DistributionError(ValueError):
    """No valid distribution matches the requested description."""


def rng_for(seed, trial=0, stream=0):
    """Independent generator for one ``(seed, trial, stream)`` triple."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(trial), int(stream)))
    return np.random.Generator(np.random.Philox(ss))


def fit_discrete(moments, tol=1e-10):
    """Smallest discrete law with the given raw moments ``m_1, ..., m_K``.

    Gauss quadrature from the moment sequence (Hankel Cholesky, then the
    eigen-decomposition of the Jacobi matrix). With ``K = 2n - 2`` moments the
    result has at most ``n`` atoms; the last recurrence coefficient, which the
    moments do not determine, is set to zero.
    """
    mom = np.concatenate([[1.0], np.asarray(moments, dtype=float)])
    K = mom.size - 1
    n = K // 2 + 1

    def hankel(i, j):
        return mom[i + j] if i + j <= K else np.nan

    # upper Cholesky factor of the Hankel matrix, one extra column for the last alpha
    R = np.full((n, n + 1), np.nan)
    rank = n
    for i in range(n):
        d = hankel(i, i) - R[:i, i] @ R[:i, i]
        scale = max(1.0, abs(hankel(i, i)))
        if d < -tol * scale:
            raise DistributionError("moment sequence is not positive: no law has these moments")
        if d <= tol * scale:
            rank = i
            break
        R[i, i] = math.sqrt(d)
        for j in range(i + 1, n + 1):
            R[i, j] = (hankel(i, j) - R[:i, i] @ R[:i, j]) / R[i, i]
    if rank == 0:
        raise DistributionError("degenerate moment sequence")
    ratio = np.array([R[j, j + 1] / R[j, j] for j in range(rank)])
    ratio = np.where(np.isfinite(ratio), ratio, np.nan)
    alpha = ratio - np.concatenate([[0.0], ratio[:-1]])
    alpha = np.where(np.isfinite(alpha), alpha, 0.0)  # undetermined by the moments
    beta = np.array([R[j + 1, j + 1] / R[j, j] for j in range(rank - 1)])
    J = np.diag(alpha) + np.diag(beta, 1) + np.diag(beta, -1)
    nodes, vecs = np.linalg.eigh(J)
    weights = vecs[0] ** 2
    # reproduce only the moments the atoms determine
    got = np.array([np.sum(weights * nodes**k) for k in range(1, K + 1)])
    if np.any(np.abs(got - mom[1:]) > 1e-8 * np.maximum(1.0, np.abs(mom[1:]))):
        raise DistributionError("moment fit failed to reproduce the input moments")
    return nodes, weights


@dataclass(frozen=True)
class EntryDistribution:
    """Law of ``sqrt(N) X_{i mu}``: mean zero, variance one.

    ``params`` depends on ``kind``: ``p`` for shifted-bernoulli, ``points`` for
    two-point (two reals straddling zero), ``moments`` (raw moments from order 3
    upwards) for user-moments.
    """

    kind: str = "gaussian"
    complex_entries: bool = False
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DistributionError(f"unknown distribution kind {self.kind!r}")
        if self.kind != "gaussian":
            self.atoms()  # validates

    @classmethod
    def from_dict(cls, d):
        params = d.get("params", {})
        p = tuple(sorted((k, tuple(v) if isinstance(v, list) else v) for k, v in params.items()))
        return cls(kind=d.get("kind", "gaussian"), complex_entries=d.get("symmetry", "real") == "complex", params=p)

    def to_dict(self):
        return {"kind": self.kind, "symmetry": "complex" if self.complex_entries else "real",
                "params": {k: list(v) if isinstance(v, tuple) else v for k, v in self.params}}

    def _param(self, name, default=None):
        return dict(self.params).get(name, default)

    def atoms(self):
        """Support points and probabilities of the real standardized law."""
        if self.kind == "gaussian":
            raise DistributionError("the gaussian law has no atoms")
        if self.kind == "rademacher":
            return np.array([-1.0, 1.0]), np.array([0.5, 0.5])
        if self.kind == "shifted-bernoulli":
            p = float(self._param("p", 0.5))
            if not 0 < p < 1:
                raise DistributionError("shifted-bernoulli needs 0 < p < 1")
            sd = math.sqrt(p * (1 - p))
            return np.array([-p / sd, (1 - p) / sd]), np.array([1 - p, p])
        if self.kind == "two-point":
            a, b = sorted(float(x) for x in self._param("points", (-1.0, 1.0)))
            if not a < 0 < b:
                raise DistributionError("two-point support must straddle zero")
            pb = -a / (b - a)
            scale = math.sqrt(pb * b * b + (1 - pb) * a * a)
            return np.array([a, b]) / scale, np.array([1 - pb, pb])
        mom = [0.0, 1.0] + [float(x) for x in self._param("moments", ())]
        return fit_discrete(mom)

    def moments(self, order=8):
        """Raw moments ``E x^k`` for ``k = 1..order`` of the real standardized law."""
        if self.kind == "gaussian":
            return np.array([0.0 if k % 2 else float(np.prod(np.arange(k - 1, 0, -2))) for k in range(1, order + 1)])
        x, w = self.atoms()
        return np.array([np.sum(w * x**k) for k in range(1, order + 1)])

    def _real(self, rng, shape):
        if self.kind == "gaussian":
            return rng.standard_normal(shape)
        x, w = self.atoms()
        u = rng.random(shape)
        idx = np.searchsorted(np.cumsum(w)[:-1], u, side="right")
        return x[idx]

    def sample(self, rng, shape):
        """Standardized entries (variance one, before the ``N^{-1/2}`` scaling)."""
        if self.complex_entries:
            re = self._real(rng, shape)
            im = self._real(rng, shape)
            return (re + 1j * im) / math.sqrt(2.0)
        return self._real(rng, shape)


@dataclass
class EnsembleSample:
    """A realized random matrix together with what is needed to regenerate it."""

    payload: np.ndarray
    seed: int
    trial: int
    dist: EntryDistribution
    transform: Optional[np.ndarray] = None
    kind: str = "X"
    extra: dict = field(default_factory=dict)

    def checksum(self):
        return hashlib.sha256(np.ascontiguousarray(self.payload).tobytes()).hexdigest()

    def dump(self, path):
        """Flat binary: header then row-major float64 (real plane, then imaginary plane if complex)."""
        a = np.ascontiguousarray(self.payload)
        is_c = np.iscomplexobj(a)
        with open(path, "wb") as fh:
            fh.write(struct.pack("<8sqqqqq", b"COVLAW01", a.shape[0], a.shape[1], self.seed, self.trial, int(is_c)))
            fh.write(a.real.astype("<f8").tobytes())
            if is_c:
                fh.write(a.imag.astype("<f8").tobytes())


def load_dump(path):
    with open(path, "rb") as fh:
        magic, rows, cols, seed, trial, is_c = struct.unpack("<8sqqqqq", fh.read(48))
        if magic != b"COVLAW01":
            raise ValueError(f"{path} is not a sample dump")
        data = np.frombuffer(fh.read(), dtype="<f8")
    a = data[:rows * cols].reshape(rows, cols)
    if is_c:
        a = a + 1j * data[rows * cols:].reshape(rows, cols)
    return a, seed, trial


def sample_X(dist, Mhat, N, seed, trial=0):
    """``Mhat x N`` matrix with i.i.d. entries of mean 0 and variance ``1/N``."""
    if Mhat <= 0 or N <= 0:
        raise ValueError("dimensions must be positive")
    X = dist.sample(rng_for(seed, trial, STREAM_X), (Mhat, N)) / math.sqrt(N)
    return EnsembleSample(payload=X, seed=seed, trial=trial, dist=dist, kind="X")


@dataclass
class CovarianceSample:
    Q: np.ndarray
    companion: np.ndarray
    T: np.ndarray  # square M x M transform after augmentation
    X: np.ndarray  # matching M x N data after augmentation
    dotted: bool


def augment(T, X, dist=None, seed=0, trial=0):
    """Bring ``(T, X)`` to square form with ``T X`` unchanged.

    A wide ``T`` (``Mhat >= M``) is padded with zero rows; a tall one gets zero
    columns and ``X`` receives extra independent rows. Returns ``(T', X', M)``
    where the product's first ``M`` rows are the original ones.
    """
    T = np.asarray(T)
    X = np.asarray(X)
    M, Mhat = T.shape
    if X.shape[0] != Mhat:
        raise ValueError(f"T is {M}x{Mhat} but X has {X.shape[0]} rows")
    if Mhat >= M:
        T_sq = np.vstack([np.zeros((Mhat - M, Mhat), dtype=T.dtype), T])
        return T_sq, X, Mhat
    N = X.shape[1]
    dist = dist or EntryDistribution()
    Y = dist.sample(rng_for(seed, trial, STREAM_PAD), (M - Mhat, N)) / math.sqrt(N)
    T_sq = np.hstack([T, np.zeros((M, M - Mhat), dtype=T.dtype)])
    return T_sq, np.vstack([X, Y]), M


def build_covariance_model(T, X, dotted=False, dist=None, seed=0, trial=0):
    """``Q = T X X* T*`` (or the centered ``Q_dot``) and the companion ``X* T* T X``."""
    T = np.asarray(T)
    X = np.asarray(X)
    if T.ndim != 2 or X.ndim != 2 or T.shape[1] != X.shape[0]:
        raise ValueError(f"dimension mismatch: T {T.shape}, X {X.shape}")
    N = X.shape[1]
    Y = T @ X
    if dotted:
        Y = (Y - Y.mean(axis=1, keepdims=True)) * math.sqrt(N / (N - 1))
    Q = Y @ Y.conj().T
    companion = Y.conj().T @ Y
    T_sq, X_sq, _ = augment(T, X, dist=dist, seed=seed, trial=trial)
    return CovarianceSample(Q=0.5 * (Q + Q.conj().T), companion=0.5 * (companion + companion.conj().T),
                            T=T_sq, X=X_sq, dotted=dotted)


def sample_deformed_wigner(dist, A, N, seed, trial=0, tau=None):
    """``W + A`` with ``W`` symmetric (Hermitian), entries of variance ``1/N`` on and above the diagonal."""
    A = np.asarray(A)
    if A.ndim == 1:
        A = np.diag(A)
    if A.shape != (N, N):
        raise ValueError(f"A must be {N}x{N}")
    if not np.allclose(A, A.conj().T, atol=1e-12):
        raise ValueError("A must be Hermitian")
    if tau is not None and np.linalg.norm(A, 2) > 1 / tau:
        raise ValueError("||A|| exceeds 1/tau")
    rng = rng_for(seed, trial, STREAM_WIGNER)
    G = dist.sample(rng, (N, N)) / math.sqrt(N)
    W = np.triu(G, 1)
    W = W + W.conj().T
    diag = np.real(np.diagonal(G)) * (math.sqrt(2.0) if dist.complex_entries else 1.0)
    W[np.diag_indices(N)] = diag
    return EnsembleSample(payload=W + A, seed=seed, trial=trial, dist=dist, transform=A, kind="W+A",
                          extra={"W": W})


def bernoulli_interpolate(X0, X1, theta, seed, trial=0):
    """Entrywise mixture: each entry is taken from ``X1`` with probability ``theta``."""
    X0 = np.asarray(X0)
    X1 = np.asarray(X1)
    if X0.shape != X1.shape:
        raise ValueError(f"shape mismatch {X0.shape} vs {X1.shape}")
    if not 0 <= theta <= 1:
        raise ValueError("theta must lie in [0, 1]")
    chi = rng_for(seed, trial, STREAM_CHI).random(X0.shape) < theta
    return np.where(chi, X1, X0), chi


def _series_div(num, den):
    """Power series quotient truncated to ``len(num)`` terms; ``den[0]`` must be nonzero."""
    out = np.zeros(len(num))
    for n in range(len(num)):
        out[n] = (num[n] - np.dot(out[:n], den[n:0:-1])) / den[0]
    return out


def k_coefficients(moments0, moments1, theta, n_max):
    """``K_1..K_{n_max}`` from ``sum_n K_n t^n = (E e^{t X1} - E e^{t X0}) / E e^{t X_theta}``.

    ``moments0`` and ``moments1`` are raw moments ``E X^k`` for ``k = 1, 2, ...``.
    """
    if len(moments0) < n_max or len(moments1) < n_max:
        raise ValueError(f"need moments up to order {n_max}")
    m0 = np.concatenate([[1.0], np.asarray(moments0[:n_max], dtype=float)])
    m1 = np.concatenate([[1.0], np.asarray(moments1[:n_max], dtype=float)])
    fact = np.array([math.factorial(k) for k in range(n_max + 1)], dtype=float)
    num = (m1 - m0) / fact
    den = (theta * m1 + (1 - theta) * m0) / fact
    return _series_div(num, den)[1:]
