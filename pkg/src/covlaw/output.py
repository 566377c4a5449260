"""CSV, JSON and SVG writers with byte-stable output."""

from __future__ import annotations

import csv
import hashlib
import json
import os

import numpy as np


def _plain(x):
    if isinstance(x, (np.floating, float)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_plain(v) for v in row])
    return path


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")
    return path


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    plt.rcParams["svg.hashsalt"] = "covlaw"
    plt.rcParams["svg.fonttype"] = "path"
    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    return path


def density_plot(E, rho, path, edges=()):
    """Density curve with dashed lines at the edges."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(E, rho, lw=1.2, color="k")
    for a in edges:
        ax.axvline(a, ls="--", lw=0.6, color="0.5")
    ax.set_xlabel("E")
    ax.set_ylabel("density")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
    return path


def scan_plot(scan, path):
    """Anisotropic and averaged errors against eta with the reference scale Psi."""
    plt = _pyplot()
    order = np.argsort(scan.z.imag, kind="stable")
    eta = scan.z.imag[order]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.loglog(eta, scan.psi[order], ".", ms=4, color="k", label="Psi")
    if np.any(np.isfinite(scan.max_aniso)):
        ax.loglog(eta, scan.max_aniso[order], "x", ms=4, color="tab:blue", label="anisotropic error")
    ax.loglog(eta, np.maximum(scan.avg_err[order], 1e-16), "+", ms=4, color="tab:red", label="|m_N - m|")
    ax.set_xlabel("eta")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
    return path


def histogram_plot(samples, reference, path, labels=("sample", "reference")):
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    bins = np.linspace(min(np.min(samples), np.min(reference)), max(np.max(samples), np.max(reference)), 40)
    ax.hist(samples, bins=bins, density=True, histtype="step", label=labels[0])
    ax.hist(reference, bins=bins, density=True, histtype="step", label=labels[1])
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)
    return path


def default_out_dir():
    return os.environ.get("COVLAW_OUT", "covlaw-out")
