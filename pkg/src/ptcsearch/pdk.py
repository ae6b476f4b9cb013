"""Foundry device specifications and footprint accounting.

Exact device counting, the differentiable footprint proxy, the probabilistic
footprint penalty, and analytical bounds on how many blocks fit in a given
area window. Areas are stored in um^2; reports use the 1/1000 um^2 unit.
"""
import math
import os
from dataclasses import dataclass

import numpy as np
import yaml

from .errors import ConfigError, DomainError, InfeasibleError

ROOT2_OVER_2 = math.sqrt(2.0) / 2.0

# Per-coupler term of the differentiable DC count: maps t=sqrt(2)/2 -> 1
# and t=1 -> 0, linear in t so the straight-through gradient passes through.
_DC_COUNT_SLOPE = 2.0 / (math.sqrt(2.0) - 2.0)
_DC_COUNT_OFFSET = 2.0 / (2.0 - math.sqrt(2.0))


@dataclass(frozen=True)
class PdkSpec:
    """Per-device footprints (um^2) for a named foundry PDK."""

    name: str
    f_ps: float
    f_dc: float
    f_cr: float

    def __post_init__(self):
        for field_name in ("f_ps", "f_dc", "f_cr"):
            value = getattr(self, field_name)
            if not (isinstance(value, (int, float)) and math.isfinite(value)):
                raise ConfigError(f"{field_name} must be a finite number")
            if value <= 0:
                raise ConfigError(f"{field_name} must be positive")


BUILTIN_PDKS = {
    "amf": PdkSpec("amf", f_ps=6800.0, f_dc=1500.0, f_cr=64.0),
    "aim": PdkSpec("aim", f_ps=2500.0, f_dc=4000.0, f_cr=4900.0),
}


def load_pdk(source) -> PdkSpec:
    """Load a PDK from a YAML document, file path, dict, or builtin name."""
    if isinstance(source, PdkSpec):
        return source
    if isinstance(source, str) and source in BUILTIN_PDKS:
        return BUILTIN_PDKS[source]
    if isinstance(source, dict):
        doc = source
    else:
        if isinstance(source, (str, os.PathLike)):
            with open(source, "r") as fh:
                doc = yaml.safe_load(fh)
        else:
            doc = yaml.safe_load(source)
    if not isinstance(doc, dict):
        raise ConfigError("PDK document must be a mapping")
    for key in ("name", "f_ps", "f_dc", "f_cr"):
        if key not in doc:
            raise ConfigError(f"PDK document is missing field '{key}'")
    return PdkSpec(
        name=str(doc["name"]),
        f_ps=float(doc["f_ps"]),
        f_dc=float(doc["f_dc"]),
        f_cr=float(doc["f_cr"]),
    )


@dataclass(frozen=True)
class FootprintConstraint:
    """Footprint window [f_min, f_max] with a relative constraint margin."""

    f_min: float
    f_max: float
    margin: float = 0.05

    def __post_init__(self):
        if not (0 < self.f_min < self.f_max):
            raise ConfigError("footprint window requires 0 < f_min < f_max")
        if self.f_hat_min >= self.f_hat_max:
            raise ConfigError("constraint margin collapses the footprint window")

    @property
    def f_hat_min(self) -> float:
        return (1.0 + self.margin) * self.f_min

    @property
    def f_hat_max(self) -> float:
        return (1.0 - self.margin) * self.f_max

    def contains(self, area: float) -> bool:
        return self.f_min <= area <= self.f_max


@dataclass(frozen=True)
class PenaltyConfig:
    """Weights of the footprint penalty and the crossing proxy term."""

    beta: float = 10.0
    beta_cr: float = 100.0

    def __post_init__(self):
        if self.beta < 0 or self.beta_cr < 0:
            raise ConfigError("penalty weights must be nonnegative")


@dataclass(frozen=True)
class BlockBounds:
    """Bounds on the total block count across both unitaries."""

    b_min: int
    b_max: int

    def __post_init__(self):
        if not (0 <= self.b_min <= self.b_max):
            raise InfeasibleError(
                f"block bounds inverted: b_min={self.b_min} > b_max={self.b_max}"
            )

    @property
    def per_unitary_min(self) -> int:
        return max(1, self.b_min // 2)

    @property
    def per_unitary_max(self) -> int:
        return self.b_max // 2


def count_crossings(perm) -> int:
    """Inversion count of a permutation = minimum adjacent swaps to identity."""
    p = np.asarray(perm)
    if p.ndim != 1 or sorted(p.tolist()) != list(range(p.shape[0])):
        raise DomainError("input is not a permutation of 0..K-1")
    k = p.shape[0]
    return int(sum(p[i] > p[j] for i in range(k) for j in range(i + 1, k)))


def count_couplers(t_binarized, tol: float = 1e-9) -> int:
    """Count entries equal to sqrt(2)/2 in a binarized transmission vector."""
    t = np.asarray(t_binarized, dtype=float)
    is_on = np.abs(t - ROOT2_OVER_2) <= tol
    is_off = np.abs(t - 1.0) <= tol
    if not np.all(is_on | is_off):
        raise DomainError("transmission vector contains non-binarized entries")
    return int(is_on.sum())


def dc_count_diff(t_q: np.ndarray) -> float:
    """Differentiable coupler count: sum of 2*t/(sqrt(2)-2) + 2/(2-sqrt(2))."""
    t_q = np.asarray(t_q, dtype=float)
    return float(np.sum(_DC_COUNT_SLOPE * t_q + _DC_COUNT_OFFSET))


def dc_count_diff_grad(t_q: np.ndarray) -> np.ndarray:
    return np.full(np.asarray(t_q).shape, _DC_COUNT_SLOPE)


def block_footprint(pdk: PdkSpec, k: int, n_dc: int, n_cr: int) -> float:
    """Exact area of one block: a full PS column plus its DCs and CRs."""
    return k * pdk.f_ps + n_dc * pdk.f_dc + n_cr * pdk.f_cr


def footprint_from_counts(pdk: PdkSpec, k: int, n_blocks: int,
                          n_dc_total: int, n_cr_total: int) -> float:
    return n_blocks * k * pdk.f_ps + n_dc_total * pdk.f_dc + n_cr_total * pdk.f_cr


def footprint_exact(topology, pdk: PdkSpec) -> float:
    """Exact area of a legalized topology in um^2."""
    total = 0.0
    for block in topology.blocks:
        total += block_footprint(pdk, topology.k, block.n_dc, block.n_cr)
    return total


def footprint_expected(mesh, pdk: PdkSpec) -> float:
    """Probability-weighted exact footprint over the mesh's gate distribution.

    Uses each block's noiseless keep probability and its current discrete
    device counts (binarized couplers, hard-estimated crossings).
    """
    probs = mesh.keep_probs()
    counts = mesh.discrete_block_counts()
    total = 0.0
    for p, (n_dc, n_cr) in zip(probs, counts):
        total += p * block_footprint(pdk, mesh.k, n_dc, n_cr)
    return float(total)


@dataclass
class ProxyGrads:
    """Partials of the footprint proxy w.r.t. mesh quantities."""

    d_keep: np.ndarray   # (B,)
    d_tq: list           # per block, (slots,)
    d_ptilde: list       # per block, (K, K)


def footprint_proxy(mesh, pdk: PdkSpec, penalty: PenaltyConfig):
    """Differentiable footprint expectation.

    Replaces the crossing count with beta_cr * ||P~ - I||_F^2 and the coupler
    count with its linear-in-t form. Returns (value, ProxyGrads).
    """
    probs = mesh.keep_probs()
    tqs = mesh.coupler_tq()
    ptildes = mesh.perm_tildes()
    k = mesh.k
    eye = np.eye(k)
    n = len(probs)
    value = 0.0
    d_keep = np.zeros(n)
    d_tq = []
    d_ptilde = []
    for b in range(n):
        diff = ptildes[b] - eye
        cr_term = penalty.beta_cr * float(np.sum(diff * diff)) * pdk.f_cr
        f_prox = k * pdk.f_ps + dc_count_diff(tqs[b]) * pdk.f_dc + cr_term
        value += probs[b] * f_prox
        d_keep[b] = f_prox
        d_tq.append(probs[b] * pdk.f_dc * dc_count_diff_grad(tqs[b]))
        d_ptilde.append(probs[b] * penalty.beta_cr * pdk.f_cr * 2.0 * diff)
    return float(value), ProxyGrads(d_keep, d_tq, d_ptilde)


def footprint_penalty(expected_prox: float, expected_exact: float,
                      c: FootprintConstraint, penalty: PenaltyConfig):
    """Probabilistic footprint penalty.

    Branches on the exact expectation, differentiates through the proxy.
    Returns (loss, dloss/dprox).
    """
    if expected_exact > c.f_hat_max:
        coeff = penalty.beta / c.f_hat_max
    elif expected_exact < c.f_hat_min:
        coeff = -penalty.beta / c.f_hat_min
    else:
        coeff = 0.0
    return coeff * expected_prox, coeff


def block_bounds(pdk: PdkSpec, k: int, c: FootprintConstraint,
                 min_total: int = 2) -> BlockBounds:
    """Analytical block-count bounds for the footprint window.

    The lower bound is clamped to min_total so each unitary keeps at least
    one block.
    """
    if k < 2:
        raise DomainError("mesh size must be at least 2")
    f_b_min = k * pdk.f_ps + pdk.f_dc
    f_b_max = f_b_min + k * pdk.f_dc / 2.0 + k * (k - 1) * pdk.f_cr / 2.0
    b_max = math.ceil(c.f_max / f_b_min)
    b_min = max(min_total, math.floor(c.f_min / f_b_max))
    return BlockBounds(b_min=b_min, b_max=b_max)


def block_area_extremes(pdk: PdkSpec, k: int):
    """(F_b_min, F_b_max) used by the analytical block bounds."""
    f_b_min = k * pdk.f_ps + pdk.f_dc
    f_b_max = f_b_min + k * pdk.f_dc / 2.0 + k * (k - 1) * pdk.f_cr / 2.0
    return f_b_min, f_b_max
