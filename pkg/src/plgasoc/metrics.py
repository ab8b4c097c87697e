"""Global statistics of captured deductive outputs and the order parameter.

A "run" is anything holding a list of :class:`~plgasoc.plga.DeductiveSet`
(one per sample): a :class:`~plgasoc.generation.RunRecord` or a plain list.
Pooling always walks samples, then layers, heads and matrix entries in C
order, so reductions are bit-stable.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .plga import TENSOR_NAMES, DeductiveSet

log = logging.getLogger(__name__)

NEAR_CRITICAL = "NearCritical"
SUB_CRITICAL = "SubCritical"
DEFAULT_THRESHOLD = 1e-1
MEAN_GUARD = 1e-30
CLIPPED_BY_DEFAULT = ("A_P", "G_LM")


def _sets(run) -> list[DeductiveSet]:
    return list(getattr(run, "deductives", run))


def _ids(run) -> list:
    ids = getattr(run, "sample_ids", None)
    return list(ids) if ids is not None else list(range(len(_sets(run))))


def _check_name(name: str) -> None:
    if name not in TENSOR_NAMES:
        raise InputError(f"unknown deductive tensor {name!r}; expected one of {TENSOR_NAMES}")


def pooled(run, name: str) -> np.ndarray:
    """Every entry of ``name`` across all samples, layers and heads, flattened."""
    _check_name(name)
    sets = _sets(run)
    if not sets:
        raise InputError("run holds no samples")
    return np.concatenate([np.ravel(s[name]) for s in sets])


def _matched(run_a, run_b, name: str) -> tuple[np.ndarray, np.ndarray]:
    if _ids(run_a) != _ids(run_b):
        raise InputError("runs cover different sample ids")
    sa, sb = _sets(run_a), _sets(run_b)
    for x, y in zip(sa, sb):
        if x.shape != y.shape:
            raise InputError(f"deductive shapes differ: {x.shape} vs {y.shape}")
    return pooled(run_a, name), pooled(run_b, name)


def population_stats(run, name: str) -> tuple[float, float]:
    """Mean and population (1/N) standard deviation of the pooled entries."""
    x = pooled(run, name)
    if x.size == 0:
        raise InputError("empty population")
    return float(np.mean(x)), float(np.std(x))


def rmse_between(run_a, run_b, name: str) -> float:
    a, b = _matched(run_a, run_b, name)
    d = a - b
    return float(np.sqrt(np.mean(d * d)))


def order_parameter(run_a, run_b, name: str, guard: float = MEAN_GUARD) -> float:
    """RMSE between the runs normalised by the mean magnitude of ``run_b``.

    A zero RMSE gives exactly 0. Otherwise ``|mean(run_b)| < guard`` yields
    ``inf`` instead of a division blow-up.
    """
    rmse = rmse_between(run_a, run_b, name)
    if rmse == 0.0:
        return 0.0
    mu_b, _ = population_stats(run_b, name)
    if abs(mu_b) < guard:
        log.warning("order parameter for %s: |mean| %.3g below guard, reporting inf", name, abs(mu_b))
        return math.inf
    return rmse / abs(mu_b)


@dataclass(frozen=True)
class PhaseLabel:
    phase: str
    threshold: float
    tensor: str
    value: float

    @property
    def near_critical(self) -> bool:
        return self.phase == NEAR_CRITICAL


def classify_phase(value: float, threshold: float = DEFAULT_THRESHOLD, tensor: str = "G_LM") -> PhaseLabel:
    """``NearCritical`` iff ``value < threshold`` (``inf`` is always sub-critical)."""
    if math.isnan(value) or value < 0:
        raise InputError(f"order parameter must be >= 0 or inf, got {value}")
    phase = NEAR_CRITICAL if value < threshold else SUB_CRITICAL
    return PhaseLabel(phase=phase, threshold=threshold, tensor=tensor, value=float(value))


def rank_key(order_params: dict[str, float]) -> tuple[float, float]:
    """Sort key for comparing models: ``G_LM`` first, ``A`` breaks exact ties (e.g. both zero)."""
    return (order_params["G_LM"], order_params["A"])


# ---------------------------------------------------------------------------
# distributions


@dataclass
class Histogram:
    tensor: str
    edges: np.ndarray
    densities: np.ndarray
    clip: tuple[float, float] | None = None

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)


def histogram(run, name: str, buckets: int = 100, clip_sigma: float | None | str = "auto",
              value_range: tuple[float, float] | None = None) -> Histogram:
    """Equal-width density histogram over ``[min, max]`` of the pooled entries.

    ``clip_sigma="auto"`` keeps only entries within 5 sigma of the mean for
    ``A_P`` and ``G_LM`` and leaves the other tensors unclipped.
    ``value_range`` replaces ``[min, max]`` with fixed bucket bounds; entries
    outside it are dropped before normalising.
    """
    if buckets < 1:
        raise InputError("buckets must be >= 1")
    x = pooled(run, name)
    if clip_sigma == "auto":
        clip_sigma = 5.0 if name in CLIPPED_BY_DEFAULT else None
    clip = None
    if clip_sigma is not None:
        mu, sigma = float(np.mean(x)), float(np.std(x))
        clip = (mu - clip_sigma * sigma, mu + clip_sigma * sigma)
        x = x[(x >= clip[0]) & (x <= clip[1])]
    if value_range is not None:
        lo, hi = map(float, value_range)
        if not hi > lo:
            raise InputError("value_range must satisfy low < high")
        x = x[(x >= lo) & (x <= hi)]
        if x.size == 0:
            raise InputError("no entries inside value_range")
    else:
        lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        # constant data: one bucket of unit width
        return Histogram(name, np.array([lo - 0.5, lo + 0.5]), np.array([1.0]), clip)
    counts, edges = np.histogram(x, bins=buckets, range=(lo, hi))
    dens = counts / (x.size * np.diff(edges))
    return Histogram(name, edges, dens, clip)


def heatmap_mean(run, layer: int, head: int, name: str = "A") -> np.ndarray:
    """Entrywise mean over samples of one (layer, head) matrix."""
    sets = _sets(run)
    if not sets:
        raise InputError("run holds no samples")
    L, H = sets[0].shape[:2]
    if not (0 <= layer < L and 0 <= head < H):
        raise InputError(f"(layer, head) = ({layer}, {head}) outside ({L}, {H})")
    return np.mean(np.stack([s[name][layer, head] for s in sets]), axis=0)


def heatmap_mean_A(run, layer: int, head: int) -> np.ndarray:
    return heatmap_mean(run, layer, head, "A")


# ---------------------------------------------------------------------------
# report


@dataclass
class RunComparison:
    rmse_12: float
    rmse_1c: float
    norm_rmse_12: float
    norm_rmse_1c: float


@dataclass
class CriticalityReport:
    model_id: str
    stats: dict[str, dict[str, tuple[float, float]]]  # run -> tensor -> (mu, sigma)
    comparisons: dict[str, RunComparison]
    phase: PhaseLabel
    histograms: list[tuple[str, Histogram]] = field(default_factory=list)  # (run, histogram)
    heatmaps: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    @property
    def order_parameters(self) -> dict[str, float]:
        return {n: c.norm_rmse_1c for n, c in self.comparisons.items()}


def build_report(bundle, model_id: str = "model", threshold: float = DEFAULT_THRESHOLD,
                 histogram_runs: tuple[str, ...] = ("run1",), histogram_tensors: tuple[str, ...] = TENSOR_NAMES,
                 heatmaps: tuple[tuple[int, int], ...] | None = None, buckets: int = 100) -> CriticalityReport:
    """Statistics, run-to-run RMSE, order parameters and plot payloads for one bundle.

    ``heatmaps=None`` requests head 0 of the last layer.
    """
    runs = {"run1": bundle.run1, "run2": bundle.run2, "cached": bundle.cached}
    stats = {r: {n: population_stats(run, n) for n in TENSOR_NAMES} for r, run in runs.items()}
    comps = {}
    for n in TENSOR_NAMES:
        comps[n] = RunComparison(
            rmse_12=rmse_between(bundle.run1, bundle.run2, n),
            rmse_1c=rmse_between(bundle.run1, bundle.cached, n),
            norm_rmse_12=order_parameter(bundle.run2, bundle.run1, n),
            norm_rmse_1c=order_parameter(bundle.run1, bundle.cached, n),
        )
    phase = classify_phase(comps["G_LM"].norm_rmse_1c, threshold, "G_LM")
    hists = [(r, histogram(runs[r], n, buckets)) for r in histogram_runs for n in histogram_tensors]
    if heatmaps is None:
        L = bundle.run1.deductives[0].shape[0]
        heatmaps = ((L - 1, 0),)
    maps = {(l, h): heatmap_mean_A(bundle.run1, l, h) for l, h in heatmaps}
    return CriticalityReport(model_id=model_id, stats=stats, comparisons=comps, phase=phase,
                             histograms=hists, heatmaps=maps)
