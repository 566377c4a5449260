"""Spectral theory of sample covariance and deformed Wigner matrices, with Monte Carlo checks."""

__version__ = "0.1.0"

from .model import (PopulationModel, DensityProfile, StieltjesValue, RegularityReport, evaluate_f, solve_m,
                    solve_m_many, locate_critical_points, solve_profile, density_at, atom_mass,
                    classical_locations, bulk_counts, check_regularity, edge_curvature,
                    stability_coefficients)
from .equivalents import (EquivalentSet, SpectralDomain, build_equivalents, psi, dotted_pi, wigner_m,
                          wigner_edges, wigner_equivalents, make_domain)
from .sampler import (EntryDistribution, EnsembleSample, sample_X, build_covariance_model,
                      sample_deformed_wigner, bernoulli_interpolate, k_coefficients)
from .resolvent import (ResolventFactorization, ErrorScan, factorize, factorize_sample, generalized_entry,
                        empirical_m_N, ward_identity_check, anisotropic_scan, averaged_scan, wigner_scan)
from .statistics import (RigidityProfile, EdgeSampleSet, component_eigenvalues, rigidity_profile,
                         support_gap_check, edge_rescaled_samples, reference_edge_samples, ks_distance)

__all__ = [
    "__version__",
    "PopulationModel",
    "DensityProfile",
    "StieltjesValue",
    "RegularityReport",
    "evaluate_f",
    "solve_m",
    "solve_m_many",
    "locate_critical_points",
    "solve_profile",
    "density_at",
    "atom_mass",
    "classical_locations",
    "bulk_counts",
    "check_regularity",
    "edge_curvature",
    "stability_coefficients",
    "EquivalentSet",
    "SpectralDomain",
    "build_equivalents",
    "psi",
    "dotted_pi",
    "wigner_m",
    "wigner_edges",
    "wigner_equivalents",
    "make_domain",
    "EntryDistribution",
    "EnsembleSample",
    "sample_X",
    "build_covariance_model",
    "sample_deformed_wigner",
    "bernoulli_interpolate",
    "k_coefficients",
    "ResolventFactorization",
    "ErrorScan",
    "factorize",
    "factorize_sample",
    "generalized_entry",
    "empirical_m_N",
    "ward_identity_check",
    "anisotropic_scan",
    "averaged_scan",
    "wigner_scan",
    "RigidityProfile",
    "EdgeSampleSet",
    "component_eigenvalues",
    "rigidity_profile",
    "support_gap_check",
    "edge_rescaled_samples",
    "reference_edge_samples",
    "ks_distance",
]
