"""Stratified estimation of interventional treatment effects (PEACE).

From observational (treatment, stratum, outcome) triples, the estimator
walks the ordered treatment values within each covariate stratum and sums
the absolute change of the conditional outcome mean across every adjacent
pair, weighting each pair by the product of the two values' conditional
selection probabilities.  This per-stratum quantity (PIEV) is then averaged
over strata with empirical stratum frequencies to give the overall effect.

Everything is double precision; conditional means and the reductions use
exact compensated summation (``math.fsum``) so estimates do not depend on
sample order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Hashable, Sequence


@dataclass(frozen=True, slots=True)
class ObservationTriple:
    """One observational record: treatment ``x``, stratum key ``z``, outcome ``y``."""

    x: float
    z: Hashable
    y: float


@dataclass(frozen=True)
class StratumStats:
    """Empirical conditional statistics for a single covariate stratum."""

    stratum: Hashable
    values: tuple[float, ...]  # distinct treatment values, strictly ascending
    cond_mean: tuple[float, ...]  # mean outcome per treatment value
    cond_prob: tuple[float, ...]  # selection probability per treatment value
    count: int


@dataclass(frozen=True)
class CausalEffectEstimate:
    """Overall effect plus the per-stratum breakdown it was built from."""

    peace: float
    per_stratum_piev: dict[Hashable, float]
    stratum_weight: dict[Hashable, float]
    n_samples: int
    n_degenerate_strata: int


def build_strata(
    samples: Sequence[ObservationTriple], smoothing: float = 0.0
) -> list[StratumStats]:
    """Group samples by stratum and estimate the conditional quantities.

    ``smoothing`` adds a pseudo-count to every observed treatment value when
    estimating the selection probabilities; the default 0 keeps raw
    frequencies so the estimate stays exactly reproducible by hand.
    """
    if not samples:
        raise ValueError("build_strata: empty sample list")
    if smoothing < 0:
        raise ValueError("build_strata: smoothing must be >= 0")
    groups: dict[Hashable, dict[float, list[float]]] = {}
    for idx, s in enumerate(samples):
        if not math.isfinite(s.y):
            raise ValueError(f"build_strata: sample {idx} has non-finite outcome {s.y!r}")
        if not math.isfinite(s.x):
            raise ValueError(f"build_strata: sample {idx} has non-finite treatment {s.x!r}")
        groups.setdefault(s.z, {}).setdefault(s.x, []).append(s.y)

    keys = list(groups)
    try:
        keys.sort()
    except TypeError:
        pass  # unorderable stratum keys keep first-appearance order

    strata = []
    for z in keys:
        by_value = groups[z]
        values = sorted(by_value)
        count = sum(len(by_value[v]) for v in values)
        denom = count + smoothing * len(values)
        strata.append(
            StratumStats(
                stratum=z,
                values=tuple(values),
                cond_mean=tuple(math.fsum(by_value[v]) / len(by_value[v]) for v in values),
                cond_prob=tuple((len(by_value[v]) + smoothing) / denom for v in values),
                count=count,
            )
        )
    return strata


def piev_for_stratum(stats: StratumStats) -> float:
    """Within-stratum effect: sum over adjacent treatment pairs of
    |mean change| * P(upper value) * P(lower value).

    A stratum with fewer than two distinct treatment values has no adjacent
    pair and contributes exactly 0 (it is counted as degenerate upstream).
    """
    m, p = stats.cond_mean, stats.cond_prob
    if len(m) < 2:
        return 0.0
    return math.fsum(abs(m[i] - m[i - 1]) * p[i] * p[i - 1] for i in range(1, len(m)))


def estimate_from_strata(strata: Sequence[StratumStats]) -> CausalEffectEstimate:
    """Combine per-stratum effects into the frequency-weighted estimate."""
    if not strata:
        raise ValueError("estimate_from_strata: no strata")
    total = sum(st.count for st in strata)
    piev = {st.stratum: piev_for_stratum(st) for st in strata}
    weight = {st.stratum: st.count / total for st in strata}
    return CausalEffectEstimate(
        peace=math.fsum(weight[st.stratum] * piev[st.stratum] for st in strata),
        per_stratum_piev=piev,
        stratum_weight=weight,
        n_samples=total,
        n_degenerate_strata=sum(1 for st in strata if len(st.values) < 2),
    )


def peace_from_samples(
    samples: Sequence[ObservationTriple], smoothing: float = 0.0
) -> CausalEffectEstimate:
    """Estimate the effect of the treatment on the outcome from raw triples."""
    return estimate_from_strata(build_strata(samples, smoothing))
