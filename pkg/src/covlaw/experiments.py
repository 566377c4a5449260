"""Monte Carlo experiments shared by the command line and the acceptance suite.

Each trial draws from its own ``(seed, trial)`` stream and results are
assembled in trial order, so outputs do not depend on the worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .equivalents import DomainError, _sigma_spectrum, make_domain, wigner_edges
from .model import classical_locations, component_gamma, solve_m_many
from .resolvent import anisotropic_scan, factorize_sample, wigner_scan
from .sampler import EntryDistribution, rng_for, sample_X, sample_deformed_wigner
from .statistics import (component_eigenvalues, edge_rescaled_samples, ks_distance,
                         nontrivial_eigenvalues, reference_edge_samples, rigidity_profile,
                         support_gap_check, wigner_edge_samples)


def map_trials(fn, trials, threads=1):
    if threads <= 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(trials)))


def local_law_grid(profile, N, n_points=50, tau=0.05, tau_prime=0.1, eta_exponent=-0.8, n_e=3,
                   kinds=("bulk", "edge")):
    """Deterministic z grid over the bulk and edge domains of every component.

    Energies are spread inside each domain and the eta ladder runs from
    ``N^eta_exponent`` to 1 in steps of ``N^0.1``; ``n_points`` are taken evenly
    from the concatenated (domain, E, eta) list.
    """
    doms = []
    for kind in kinds:
        idx = range(1, profile.p + 1) if kind == "bulk" else range(1, 2 * profile.p + 1)
        for k in idx:
            if kind == "edge" and profile.edges[k - 1] < tau:
                continue
            try:
                doms.append(make_domain(kind, tau, tau_prime, N, profile, k, eta_min=N**eta_exponent))
            except DomainError:
                continue
    etas = N ** (eta_exponent + 0.1 * np.arange(int(round(-eta_exponent / 0.1)) + 1))
    pts = []
    for d in doms:
        for E in d.energies(n_e):
            for eta in etas:
                z = complex(E, eta)
                if d.contains(z):
                    pts.append(z)
    pts = np.array(pts)
    if pts.size <= n_points:
        return pts
    pick = np.unique(np.round(np.linspace(0, pts.size - 1, n_points)).astype(int))
    return pts[pick]


@dataclass
class LocalLawResult:
    scans: list
    negative: list
    grid: np.ndarray

    @property
    def max_aniso_ratio(self):
        return np.array([s.aniso_ratio.max() for s in self.scans])

    @property
    def max_avg_ratio(self):
        return np.array([s.avg_ratio.max() for s in self.scans])

    @property
    def aniso_inflation(self):
        """Per trial: max corrupted ratio over max clean ratio."""
        return np.array([n.aniso_ratio.max() / s.aniso_ratio.max() for s, n in zip(self.scans, self.negative)])

    @property
    def avg_inflation(self):
        return np.array([n.avg_ratio.max() / s.avg_ratio.max() for s, n in zip(self.scans, self.negative)])


def run_local_law(model, dist, trials, seed, grid, n_vectors=16, m_shift=0.0, negative_shift=0.1,
                  threads=1):
    """Anisotropic and averaged scans over ``trials`` samples.

    ``m_shift`` corrupts the equivalent used in the main scan (debug); the
    negative control always uses ``m + negative_shift``.
    """
    M, _, N = model.dims
    sigma = _sigma_spectrum(model)
    ms, _ = solve_m_many(grid, model, boundary=False)

    def one(t):
        X = sample_X(dist, M, N, seed, t).payload
        fact = factorize_sample(X, sigma)
        scan = anisotropic_scan(fact, model, grid, n_vectors, seed=seed + t, ms=ms, m_shift=m_shift)
        neg = anisotropic_scan(fact, model, grid, n_vectors, seed=seed + t, ms=ms,
                               m_shift=m_shift + negative_shift) if negative_shift else None
        return scan, neg

    out = map_trials(one, trials, threads)
    return LocalLawResult(scans=[o[0] for o in out], negative=[o[1] for o in out], grid=grid)


@dataclass
class RigidityResult:
    p99: np.ndarray
    gap_outliers: list
    profiles: list = field(default_factory=list)


def run_rigidity(profile, dist, trials, seed, eps=0.2, tau=0.05, threads=1, keep_profiles=False):
    model = profile.model
    M, _, N = model.dims
    sigma = np.sqrt(_sigma_spectrum(model))
    gamma = component_gamma(profile, classical_locations(profile))

    def one(t):
        X = sample_X(dist, M, N, seed, t).payload
        eigs = nontrivial_eigenvalues(sigma[:, None] * X)
        rp = rigidity_profile(component_eigenvalues(eigs, profile), gamma, N, tau=tau)
        gap = support_gap_check(eigs, profile, eps, N, tau=tau)
        return rp, gap

    out = map_trials(one, trials, threads)
    return RigidityResult(p99=np.array([rp.percentile(99) for rp, _ in out]),
                          gap_outliers=[g.outliers for _, g in out],
                          profiles=[rp for rp, _ in out] if keep_profiles else [])


def run_edge_stats(profile, dists, trials, seed, edge=1, depth=2, beta=1, reference_N=None):
    """Edge samples for each distribution plus the Gaussian-ensemble reference."""
    N = profile.model.dims[2]
    samples = [edge_rescaled_samples(profile, edge, depth, trials, d, seed + 1000 * i)
               for i, d in enumerate(dists)]
    ref = reference_edge_samples(beta, depth, reference_N or N, trials, seed + 999)
    ks_ref = [ks_distance(s.first(), ref[:, 0]) for s in samples]
    ks_pair = ks_distance(samples[0].first(), samples[1].first()) if len(samples) > 1 else None
    return {"samples": samples, "reference": ref, "ks_reference": ks_ref, "ks_pair": ks_pair}


def two_atom_spectrum(N, values=(1.0, -1.0)):
    half = N // 2
    return np.concatenate([np.full(N - half, values[0]), np.full(half, values[1])])


def haar_orthogonal(N, seed):
    Z = rng_for(seed, 0, 7).standard_normal((N, N))
    Q, R = np.linalg.qr(Z)
    return Q * np.sign(np.diag(R))


def wigner_grid(a, n_e=4, etas=None, N=1000, tau=0.05, gap=0.3):
    """Bulk energies of the Wigner density away from its edges and from ``E = 0``."""
    lo, hi = wigner_edges(a)
    E = np.linspace(lo + gap, hi - gap, n_e + 2)[1:-1]
    E = E[np.abs(E) >= gap]
    if etas is None:
        etas = N ** (-0.8 + 0.2 * np.arange(5))
    return (E[:, None] + 1j * np.asarray(etas)[None, :]).ravel()


def run_wigner_scan(a, N, dist, trials, seed, grid, rotate_seed=None, n_vectors=16, threads=1):
    basis = haar_orthogonal(N, rotate_seed) if rotate_seed is not None else None
    A = np.diag(a) if basis is None else (basis * a) @ basis.T

    def one(t):
        s = sample_deformed_wigner(dist, A, N, seed, t)
        return wigner_scan(s, a, grid, n_vectors=n_vectors, seed=seed + t, a_basis=basis)

    return map_trials(one, trials, threads)


def welch_pvalue(x, y):
    """Two-sided Welch t-test p-value; 1.0 when both samples are constant and equal."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.std(x) == 0 and np.std(y) == 0:
        return 1.0 if np.mean(x) == np.mean(y) else 0.0
    return float(stats.ttest_ind(x, y, equal_var=False).pvalue)


def run_wigner_edge(a, N, dist, trials, seed, rotate_seed=None):
    """Edge samples of ``W + A`` and of ``W_gauss + diag(a)``, centered at ``L_+``."""
    _, hi = wigner_edges(a)
    basis = haar_orthogonal(N, rotate_seed) if rotate_seed is not None else None
    x = wigner_edge_samples(a, N, trials, dist, seed, hi, a_basis=basis)[:, 0]
    y = wigner_edge_samples(a, N, trials, EntryDistribution(), seed + 1, hi)[:, 0]
    return {"sample": x, "gaussian_diagonal": y, "ks": ks_distance(x, y), "edge": hi}
