"""Synthetic tabulated structural causal models with exact effect oracles.

Each model draws a covariate ``z``, a treatment ``x`` conditioned on ``z``,
and an outcome ``y = g(x, z) + u`` with additive noise ``u`` drawn
independently of ``(x, z)``.  Because ``g`` and the probability tables live
on finite supports, the true interventional effect is a finite sum that can
be evaluated exactly and compared against estimates recovered from
observational samples.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from . import kvformat
from .peace import ObservationTriple
from .rng import Xoshiro256

_PROB_TOL = 1e-9


class ScmValidationError(ValueError):
    """Raised with every violated model invariant listed in the message."""


@dataclass(frozen=True)
class SeparableParts:
    """Candidate additive decomposition of the outcome function.

    ``h1[z, x] + h2[z, u]`` should reproduce the full outcome
    ``g(x, z) + u`` over the tabulated grid; `check_separability` verifies
    this rather than the constructor, so violating decompositions can be
    built on purpose.
    """

    u_grid: tuple[float, ...]
    h1: np.ndarray  # shape (n_z, n_x)
    h2: np.ndarray  # shape (n_z, n_u)


@dataclass(frozen=True)
class ScmSpec:
    z_values: tuple
    z_probs: tuple[float, ...]
    x_values: tuple[float, ...]
    x_given_z: np.ndarray  # (n_z, n_x), row i is P(x | z_i)
    g_table: np.ndarray  # (n_z, n_x), entry [i, j] is g(x_j, z_i)
    noise_mean: float = 0.0
    noise_var: float = 0.0
    separable: SeparableParts | None = None


def validate(spec: ScmSpec) -> list[str]:
    """Return the list of violated invariants (empty for a valid model)."""
    problems: list[str] = []
    nz, nx = len(spec.z_values), len(spec.x_values)
    if nz == 0:
        problems.append("z_values is empty")
    if nx == 0:
        problems.append("x_values is empty")
    if len(spec.z_probs) != nz:
        problems.append("z_probs length does not match z_values")
    elif nz:
        if any(p < 0 for p in spec.z_probs):
            problems.append("z_probs has negative entries")
        if abs(math.fsum(spec.z_probs) - 1.0) > _PROB_TOL:
            problems.append("z_probs do not sum to 1")
    if any(b <= a for a, b in zip(spec.x_values, spec.x_values[1:])):
        problems.append("x_values not strictly increasing")
    xgz = np.asarray(spec.x_given_z, dtype=float)
    if xgz.shape != (nz, nx):
        problems.append(f"x_given_z shape {xgz.shape} != ({nz}, {nx})")
    else:
        if (xgz < 0).any():
            problems.append("x_given_z has negative entries")
        bad = [i for i in range(nz) if abs(float(xgz[i].sum()) - 1.0) > _PROB_TOL]
        if bad:
            problems.append(f"x_given_z rows {bad} do not sum to 1")
    g = np.asarray(spec.g_table, dtype=float)
    if g.shape != (nz, nx):
        problems.append(f"g_table shape {g.shape} != ({nz}, {nx})")
    elif not np.isfinite(g).all():
        problems.append("g_table has non-finite entries")
    if not math.isfinite(spec.noise_mean):
        problems.append("noise_mean is not finite")
    if not (math.isfinite(spec.noise_var) and spec.noise_var >= 0):
        problems.append("noise_var must be finite and >= 0")
    if spec.separable is not None:
        nu = len(spec.separable.u_grid)
        if np.asarray(spec.separable.h1).shape != (nz, nx):
            problems.append("separable h1 shape mismatch")
        if np.asarray(spec.separable.h2).shape != (nz, nu):
            problems.append("separable h2 shape mismatch")
    return problems


def ensure_valid(spec: ScmSpec) -> None:
    problems = validate(spec)
    if problems:
        raise ScmValidationError("invalid SCM spec: " + "; ".join(problems))


def _categorical(probs, u: float) -> int:
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if u < acc:
            return i
    return len(probs) - 1  # rounding guard at the top of the CDF


def sample_observational(spec: ScmSpec, n: int, seed: int) -> list[ObservationTriple]:
    """Draw ``n`` observational triples; deterministic given the seed.

    With zero noise variance each outcome equals ``g(x, z) + noise_mean``
    exactly.
    """
    ensure_valid(spec)
    if n < 1:
        raise ValueError("sample_observational: n must be >= 1")
    rng = Xoshiro256(seed)
    std = math.sqrt(spec.noise_var)
    rows = [tuple(float(p) for p in row) for row in np.asarray(spec.x_given_z, float)]
    g = np.asarray(spec.g_table, float)
    z_probs = spec.z_probs
    out = []
    for _ in range(n):
        zi = _categorical(z_probs, rng.random())
        xi = _categorical(rows[zi], rng.random())
        y = float(g[zi, xi]) + spec.noise_mean
        if std > 0.0:
            y += std * rng.normal()
        out.append(ObservationTriple(x=spec.x_values[xi], z=spec.z_values[zi], y=y))
    return out


def exact_piev(spec: ScmSpec, z) -> float:
    """True within-stratum effect, evaluated directly on the tabulated ``g``.

    Interventional semantics: the outcome function is read off the table,
    bypassing sampling entirely.
    """
    ensure_valid(spec)
    try:
        zi = spec.z_values.index(z)
    except ValueError:
        raise ValueError(f"exact_piev: unknown stratum {z!r}") from None
    g = np.asarray(spec.g_table, float)[zi]
    p = np.asarray(spec.x_given_z, float)[zi]
    return math.fsum(
        abs(float(g[i]) - float(g[i - 1])) * float(p[i]) * float(p[i - 1])
        for i in range(1, len(spec.x_values))
    )


def exact_peace(spec: ScmSpec) -> float:
    """True population effect: covariate-weighted expectation of `exact_piev`."""
    ensure_valid(spec)
    return math.fsum(pz * exact_piev(spec, z) for z, pz in zip(spec.z_values, spec.z_probs))


def exact_pooled_effect(spec: ScmSpec) -> float:
    """Effect a stratification-blind estimator converges to.

    Pools every stratum: uses the marginal P(x) and the observational mean
    E(Y | x) = sum_z P(z | x) g(x, z).  This differs from `exact_peace`
    exactly when the covariate confounds both treatment choice and outcome,
    which is what makes stratification necessary.
    """
    ensure_valid(spec)
    xgz = np.asarray(spec.x_given_z, float)
    g = np.asarray(spec.g_table, float)
    pz = np.asarray(spec.z_probs, float)
    px = pz @ xgz
    safe = np.where(px > 0, px, 1.0)
    mean_y = (pz[:, None] * xgz * g).sum(axis=0) / safe
    return math.fsum(
        abs(float(mean_y[i]) - float(mean_y[i - 1])) * float(px[i]) * float(px[i - 1])
        for i in range(1, len(px))
    )


def check_separability(spec: ScmSpec, tolerance: float) -> bool:
    """True iff ``h1(x, z) + h2(z, u)`` matches ``g(x, z) + u`` on the grid."""
    if spec.separable is None:
        raise ValueError("check_separability: spec has no separable parts")
    ensure_valid(spec)
    g = np.asarray(spec.g_table, float)
    h1 = np.asarray(spec.separable.h1, float)
    h2 = np.asarray(spec.separable.h2, float)
    u = np.asarray(spec.separable.u_grid, float)
    full = g[:, :, None] + u[None, None, :]
    recon = h1[:, :, None] + h2[:, None, :]
    return float(np.max(np.abs(recon - full))) <= tolerance


def additive_separable(g_table: np.ndarray, u_grid) -> SeparableParts:
    """Canonical decomposition for additive-noise models: h1 = g, h2 = u."""
    g = np.asarray(g_table, float)
    u = np.asarray(u_grid, float)
    return SeparableParts(
        u_grid=tuple(float(v) for v in u),
        h1=g.copy(),
        h2=np.tile(u, (g.shape[0], 1)),
    )


def _floored_simplex(rng: Xoshiro256, n: int, floor: float) -> list[float]:
    raw = [rng.random() + 1e-9 for _ in range(n)]
    total = math.fsum(raw)
    free = 1.0 - n * floor
    return [floor + free * r / total for r in raw]


def random_spec(
    seed: int,
    n_z: int | None = None,
    n_x: int | None = None,
    min_prob: float = 0.15,
    noise_std_range: tuple[float, float] = (0.1, 0.3),
) -> ScmSpec:
    """Seeded random tabulated model with well-separated outcome levels.

    Probabilities are floored away from zero and adjacent outcome levels
    differ by at least 1, so finite-sample estimates of the effect have a
    stable relative error.
    """
    rng = Xoshiro256(seed)
    if n_z is None:
        n_z = 2 + rng.randrange(3)  # 2..4 strata
    if n_x is None:
        n_x = 2 + rng.randrange(2)  # 2..3 treatment values
    z_probs = _floored_simplex(rng, n_z, min_prob)
    x_given_z = np.array([_floored_simplex(rng, n_x, min_prob) for _ in range(n_z)])
    g = np.empty((n_z, n_x))
    for zi in range(n_z):
        level = rng.uniform(-2.0, 2.0)
        for xi in range(n_x):
            step = 1.0 + rng.uniform(0.0, 2.0)
            level += step if rng.random() < 0.5 else -step
            g[zi, xi] = level
    std = rng.uniform(*noise_std_range)
    u_grid = tuple(std * k for k in (-2.0, -1.0, 0.0, 1.0, 2.0))
    return ScmSpec(
        z_values=tuple(range(n_z)),
        z_probs=tuple(z_probs),
        x_values=tuple(float(i) for i in range(n_x)),
        x_given_z=x_given_z,
        g_table=g,
        noise_mean=0.0,
        noise_var=std * std,
        separable=additive_separable(g, u_grid),
    )


_INT_RE = re.compile(r"^[+-]?\d+$")


def _parse_scalar(token: str):
    if _INT_RE.match(token):
        return int(token)
    try:
        return float(token)
    except ValueError:
        return token


def to_kv(spec: ScmSpec) -> str:
    """Serialize to the flat ``key = value`` format used for test fixtures."""
    pairs: dict[str, str] = {}
    pairs["z.values"] = ", ".join(str(v) for v in spec.z_values)
    pairs["z.probs"] = ", ".join(kvformat.fmt_float(p) for p in spec.z_probs)
    pairs["x.values"] = ", ".join(kvformat.fmt_float(v) for v in spec.x_values)
    xgz = np.asarray(spec.x_given_z, float)
    g = np.asarray(spec.g_table, float)
    for zi in range(len(spec.z_values)):
        pairs[f"x_given_z.{zi}"] = ", ".join(kvformat.fmt_float(p) for p in xgz[zi])
        pairs[f"g.{zi}"] = ", ".join(kvformat.fmt_float(v) for v in g[zi])
    pairs["noise.mean"] = kvformat.fmt_float(spec.noise_mean)
    pairs["noise.var"] = kvformat.fmt_float(spec.noise_var)
    if spec.separable is not None:
        pairs["separable.u_grid"] = ", ".join(kvformat.fmt_float(u) for u in spec.separable.u_grid)
        h1 = np.asarray(spec.separable.h1, float)
        h2 = np.asarray(spec.separable.h2, float)
        for zi in range(len(spec.z_values)):
            pairs[f"h1.{zi}"] = ", ".join(kvformat.fmt_float(v) for v in h1[zi])
            pairs[f"h2.{zi}"] = ", ".join(kvformat.fmt_float(v) for v in h2[zi])
    return kvformat.format_lines(pairs)


def from_kv(text: str) -> ScmSpec:
    """Parse a spec previously written by `to_kv`; validates before returning."""
    pairs = kvformat.parse(text)
    try:
        z_values = tuple(_parse_scalar(t) for t in kvformat.split_list(pairs["z.values"]))
        z_probs = tuple(float(t) for t in kvformat.split_list(pairs["z.probs"]))
        x_values = tuple(float(t) for t in kvformat.split_list(pairs["x.values"]))
        nz = len(z_values)
        xgz = np.array(
            [[float(t) for t in kvformat.split_list(pairs[f"x_given_z.{zi}"])] for zi in range(nz)]
        )
        g = np.array([[float(t) for t in kvformat.split_list(pairs[f"g.{zi}"])] for zi in range(nz)])
        noise_mean = float(pairs.get("noise.mean", "0.0"))
        noise_var = float(pairs.get("noise.var", "0.0"))
        separable = None
        if "separable.u_grid" in pairs:
            u_grid = tuple(float(t) for t in kvformat.split_list(pairs["separable.u_grid"]))
            h1 = np.array(
                [[float(t) for t in kvformat.split_list(pairs[f"h1.{zi}"])] for zi in range(nz)]
            )
            h2 = np.array(
                [[float(t) for t in kvformat.split_list(pairs[f"h2.{zi}"])] for zi in range(nz)]
            )
            separable = SeparableParts(u_grid=u_grid, h1=h1, h2=h2)
    except KeyError as exc:
        raise ScmValidationError(f"SCM spec text is missing key {exc.args[0]!r}") from None
    spec = ScmSpec(
        z_values=z_values,
        z_probs=z_probs,
        x_values=x_values,
        x_given_z=xgz,
        g_table=g,
        noise_mean=noise_mean,
        noise_var=noise_var,
        separable=separable,
    )
    ensure_valid(spec)
    return spec
