"""Eigenvalue-level experiments: rigidity, gaps and edge fluctuations."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import linalg, stats

from .model import edge_curvature
from .sampler import STREAM_WIGNER, rng_for, sample_X

logger = logging.getLogger(__name__)


def nontrivial_eigenvalues(Y):
    """The ``M wedge N`` eigenvalues of ``Y Y^*`` (equivalently ``Y^* Y``), decreasing."""
    return linalg.svdvals(Y) ** 2


def component_eigenvalues(eigs, profile):
    """Split decreasing nontrivial eigenvalues into blocks of sizes ``N_1, ..., N_p``.

    Warns when a block boundary does not sit in the corresponding spectral gap.
    """
    eigs = np.sort(np.asarray(eigs))[::-1]
    counts = profile.counts
    if counts is None:
        raise ValueError("profile has no component counts (dimensions missing)")
    if sum(counts) != eigs.size:
        raise ValueError(f"{eigs.size} eigenvalues for counts summing to {sum(counts)}")
    blocks = np.split(eigs, np.cumsum(counts)[:-1])
    a = profile.edges
    for k in range(len(blocks) - 1):
        mid = 0.5 * (a[2 * k + 1] + a[2 * k + 2])
        if blocks[k].size and blocks[k + 1].size and not (blocks[k][-1] > mid > blocks[k + 1][0]):
            warnings.warn(f"eigenvalues straddle the gap below component {k + 1}", RuntimeWarning)
    return blocks


def separation_counts(eigs, profile):
    """Number of eigenvalues above the midpoint of each gap, with the predicted values."""
    a = profile.edges
    eigs = np.asarray(eigs)
    mids = [0.5 * (a[2 * k + 1] + a[2 * k + 2]) for k in range(profile.p - 1)]
    got = [int(np.sum(eigs > m)) for m in mids]
    want = list(np.cumsum(profile.counts)[:-1])
    return got, want


@dataclass
class RigidityProfile:
    k: np.ndarray
    i: np.ndarray
    lam: np.ndarray
    gamma: np.ndarray
    scale: np.ndarray
    N: int

    @property
    def error(self):
        return np.abs(self.lam - self.gamma)

    @property
    def ratio(self):
        return self.error / self.scale

    def percentile(self, q):
        return float(np.percentile(self.ratio, q)) if self.ratio.size else 0.0

    def rows(self):
        for row in zip(self.k, self.i, self.lam, self.gamma, self.error, self.scale, self.ratio):
            yield row


def rigidity_profile(blocks, gamma_blocks, N, tau=0.05):
    """Errors ``|lambda_{k,i} - gamma_{k,i}|`` against ``(i wedge (N_k + 1 - i))^{-1/3} N^{-2/3}``.

    Only locations with ``gamma >= tau`` are kept (the hard edge at zero is excluded).
    """
    ks, iis, lams, gams, scales = [], [], [], [], []
    for k, (lam, gam) in enumerate(zip(blocks, gamma_blocks), start=1):
        n_k = len(gam)
        if len(lam) != n_k:
            raise ValueError(f"component {k}: {len(lam)} eigenvalues for {n_k} locations")
        idx = np.arange(1, n_k + 1)
        keep = np.asarray(gam) >= tau
        ks.append(np.full(keep.sum(), k))
        iis.append(idx[keep])
        lams.append(np.asarray(lam)[keep])
        gams.append(np.asarray(gam)[keep])
        scales.append(np.minimum(idx, n_k + 1 - idx)[keep] ** (-1.0 / 3.0) * N ** (-2.0 / 3.0))
    prof = RigidityProfile(k=np.concatenate(ks), i=np.concatenate(iis), lam=np.concatenate(lams),
                           gamma=np.concatenate(gams), scale=np.concatenate(scales), N=N)
    return prof


@dataclass
class GapReport:
    threshold: float
    outliers: np.ndarray
    eps: float

    @property
    def count(self):
        return int(self.outliers.size)


def support_gap_check(eigs, profile, eps, N, tau=0.05):
    """Eigenvalues ``E >= tau`` at distance at least ``N^{-2/3 + eps}`` from the support."""
    eigs = np.asarray(eigs)
    thr = N ** (-2.0 / 3.0 + eps)
    cand = eigs[eigs >= tau]
    d = profile.dist_to_support(cand)
    bad = cand[d >= thr]
    if eps == 0 and bad.size:
        logger.info("%d eigenvalues beyond N^{-2/3} of the support (expected at this scale)", bad.size)
    return GapReport(threshold=thr, outliers=bad, eps=eps)


@dataclass
class EdgeSampleSet:
    edge: int
    depth: int
    trials: int
    q: np.ndarray  # trials x depth
    varpi: float
    edge_location: float
    ensemble: dict = field(default_factory=dict)

    def first(self):
        return self.q[:, 0]


def _edge_vector(blocks, profile, edge, depth, N, varpi):
    comp = (edge + 1) // 2
    block = blocks[comp - 1]
    if block.size < depth:
        raise ValueError(f"component {comp} has {block.size} < {depth} eigenvalues")
    a = profile.edges[edge - 1]
    if edge % 2 == 1:
        return N ** (2 / 3) / varpi * (block[:depth] - a)
    return -N ** (2 / 3) / varpi * (block[::-1][:depth] - a)


def edge_rescaled_samples(profile, edge, depth, trials, dist, seed, sigma=None, basis=None):
    """Rescaled extreme eigenvalues at edge ``edge`` (1-based) over independent trials.

    For a right edge the top ``depth`` eigenvalues of the component are
    centered at ``a_k`` and multiplied by ``N^{2/3} / varpi_k``; at a left edge
    the bottom ones are used with the sign flipped.
    """
    model = profile.model
    M, _, N = model.dims
    if sigma is None:
        from .equivalents import _sigma_spectrum
        sigma = _sigma_spectrum(model)
    root = np.sqrt(np.asarray(sigma, dtype=float))
    varpi = edge_curvature(profile, edge)
    out = np.empty((trials, depth))
    for t in range(trials):
        X = sample_X(dist, M, N, seed, t).payload
        Y = root[:, None] * X if basis is None else (basis * root) @ basis.conj().T @ X
        eigs = nontrivial_eigenvalues(Y)
        blocks = np.split(eigs, np.cumsum(profile.counts)[:-1])
        out[t] = _edge_vector(blocks, profile, edge, depth, N, varpi)
    return EdgeSampleSet(edge=edge, depth=depth, trials=trials, q=out, varpi=varpi,
                         edge_location=float(profile.edges[edge - 1]),
                         ensemble={"dist": dist.to_dict(), "seed": seed, "M": M, "N": N})


def wigner_edge_samples(a_spectrum, N, trials, dist, seed, edge_location, a_basis=None, depth=1):
    """``N^{2/3} (mu_1 - L_+, ...)`` for ``W + A`` over independent trials."""
    from .sampler import sample_deformed_wigner
    a = np.asarray(a_spectrum, dtype=float)
    A = np.diag(a) if a_basis is None else (a_basis * a) @ a_basis.conj().T
    out = np.empty((trials, depth))
    for t in range(trials):
        H = sample_deformed_wigner(dist, A, N, seed, t).payload
        top = linalg.eigvalsh(H, subset_by_index=[N - depth, N - 1])[::-1]
        out[t] = N ** (2 / 3) * (top - edge_location)
    return out


@lru_cache(maxsize=32)
def _reference(beta, depth, N, trials, seed):
    out = np.empty((trials, depth))
    for t in range(trials):
        rng = rng_for(seed, t, STREAM_WIGNER)
        A = rng.standard_normal((N, N))
        if beta == 2:
            A = (A + 1j * rng.standard_normal((N, N))) / math.sqrt(2.0)
        H = (A + A.conj().T) / math.sqrt(2.0 * N)
        top = linalg.eigvalsh(H, subset_by_index=[N - depth, N - 1])[::-1]
        out[t] = N ** (2 / 3) * (top - 2.0)
    out.setflags(write=False)
    return out


def reference_edge_samples(beta, depth, N, trials, seed):
    """``N^{2/3} (mu_1 - 2, ..., mu_l - 2)`` for GOE (``beta=1``) or GUE (``beta=2``) draws."""
    if beta not in (1, 2):
        raise ValueError("beta must be 1 or 2")
    return _reference(int(beta), int(depth), int(N), int(trials), int(seed))


def ks_distance(a, b):
    """Two-sample Kolmogorov-Smirnov statistic."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_distance needs two nonempty samples")
    return float(stats.ks_2samp(a, b).statistic)
