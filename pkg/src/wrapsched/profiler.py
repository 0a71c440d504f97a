"""Per-layer cost models, fitted from sampled measurements or generated
synthetically for desk-scale experiments without GPUs.

A profile set answers, for every (layer, pass) and microbatch size u within
the fitted range: compute time, memory footprint, activation sizes, and the
static (u-independent) weight / gradient / optimizer-state sizes.

Time and memory are affine in u (``a*u + b`` with non-negative slope) because
the sampled curves are close to linear; evaluations are clamped at zero and
never extrapolated above the probed maximum microbatch size.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .errors import (
    InsufficientSamplesError,
    MissingProfileError,
    NoFeasibleMicrobatchError,
    ProfileRangeError,
    ValidationError,
)

PASSES = ("F", "B", "U")


@dataclass(frozen=True)
class ProfileSample:
    """One profiled measurement of a layer at a given pass and microbatch."""

    layer_id: int
    pass_: str
    microbatch: int
    compute_time_ns: int
    mem_bytes: int
    x_bytes: int
    y_bytes: int
    w_bytes: int
    dw_bytes: int
    k_bytes: int

    def __post_init__(self) -> None:
        if self.pass_ not in PASSES:
            raise ValidationError(f"pass must be one of {PASSES}, got {self.pass_!r}")
        if self.microbatch < 1:
            raise ValidationError("microbatch must be >= 1")
        for name in ("compute_time_ns", "mem_bytes", "x_bytes", "y_bytes",
                     "w_bytes", "dw_bytes", "k_bytes"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")


@dataclass(frozen=True)
class AffineModel:
    """``value(u) = slope * u + intercept``, evaluated to a clamped int."""

    slope: float
    intercept: float

    def __call__(self, u: int) -> int:
        return max(0, round(self.slope * u + self.intercept))


def fit_affine(points: Sequence[tuple[int, float]]) -> tuple[AffineModel, bool]:
    """Least-squares affine fit; exact line through two points.

    Returns (model, clamped) where ``clamped`` reports that a negative slope
    was flattened to zero (the fit then degrades to the sample mean).
    """
    if len(points) < 2:
        raise InsufficientSamplesError("need at least two samples to fit")
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    if len(set(xs)) < 2:
        raise InsufficientSamplesError("need samples at distinct microbatch sizes")
    n = len(points)
    xbar = sum(xs) / n
    ybar = sum(ys) / n
    sxx = sum((x - xbar) ** 2 for x in xs)
    sxy = sum((x - xbar) * (y - ybar) for x, y in zip(xs, ys))
    slope = sxy / sxx
    if slope < 0:
        return AffineModel(0.0, ybar), True
    return AffineModel(slope, ybar - slope * xbar), False


class ProfileSet:
    """Fitted cost models for all layers; immutable once constructed."""

    def __init__(
        self,
        layer_count: int,
        time_models: Mapping[tuple[int, str], AffineModel],
        mem_models: Mapping[tuple[int, str], AffineModel],
        x_models: Mapping[int, AffineModel],
        y_models: Mapping[int, AffineModel],
        w_bytes: Mapping[int, int],
        dw_bytes: Mapping[int, int],
        k_bytes: Mapping[int, int],
        u_max_f: int,
        u_max_b: int,
        residuals: Mapping[tuple[int, str], float] | None = None,
        clamped: Sequence[tuple[int, str]] = (),
        stride: int | None = None,
    ) -> None:
        self.layer_count = layer_count
        self._time = dict(time_models)
        self._mem = dict(mem_models)
        self._x = dict(x_models)
        self._y = dict(y_models)
        self._w = dict(w_bytes)
        self._dw = dict(dw_bytes)
        self._k = dict(k_bytes)
        self.u_max_f = u_max_f
        self.u_max_b = u_max_b
        self.residuals = dict(residuals or {})
        self.clamped = tuple(clamped)
        self.stride = stride

    # -- evaluation ---------------------------------------------------------

    def _u_checked(self, pass_: str, u: int) -> int:
        if pass_ == "U":
            return 1  # update cost does not scale with microbatch size
        if u < 1:
            raise ProfileRangeError(f"microbatch {u} < 1")
        u_max = self.u_max_f if pass_ == "F" else self.u_max_b
        if u > u_max:
            raise ProfileRangeError(
                f"microbatch {u} above fitted maximum {u_max} for pass {pass_}"
            )
        return u

    def time_ns(self, pass_: str, layer: int, u: int) -> int:
        u = self._u_checked(pass_, u)
        try:
            return self._time[(layer, pass_)](u)
        except KeyError:
            raise MissingProfileError(f"no time model for layer {layer} pass {pass_}") from None

    def mem_bytes(self, pass_: str, layer: int, u: int) -> int:
        u = self._u_checked(pass_, u)
        try:
            return self._mem[(layer, pass_)](u)
        except KeyError:
            raise MissingProfileError(f"no memory model for layer {layer} pass {pass_}") from None

    def x_bytes(self, layer: int, u: int) -> int:
        try:
            return self._x[layer](u)
        except KeyError:
            raise MissingProfileError(f"no input-size model for layer {layer}") from None

    def y_bytes(self, layer: int, u: int) -> int:
        try:
            return self._y[layer](u)
        except KeyError:
            raise MissingProfileError(f"no output-size model for layer {layer}") from None

    def w_bytes(self, layer: int) -> int:
        try:
            return self._w[layer]
        except KeyError:
            raise MissingProfileError(f"no weight size for layer {layer}") from None

    def dw_bytes(self, layer: int) -> int:
        try:
            return self._dw[layer]
        except KeyError:
            raise MissingProfileError(f"no gradient size for layer {layer}") from None

    def k_bytes(self, layer: int) -> int:
        try:
            return self._k[layer]
        except KeyError:
            raise MissingProfileError(f"no optimizer-state size for layer {layer}") from None

    # -- pack helpers -------------------------------------------------------

    def pack_time_ns(self, pass_: str, first: int, last: int, u: int) -> int:
        return sum(self.time_ns(pass_, layer, u) for layer in range(first, last + 1))

    def pack_mem_bytes(self, pass_: str, first: int, last: int, u: int) -> int:
        return sum(self.mem_bytes(pass_, layer, u) for layer in range(first, last + 1))

    def pack_w_bytes(self, first: int, last: int) -> int:
        return sum(self.w_bytes(layer) for layer in range(first, last + 1))

    def pack_k_bytes(self, first: int, last: int) -> int:
        return sum(self.k_bytes(layer) for layer in range(first, last + 1))


def slow_start_max_u(mem_oracle: Callable[[int], bool], u_cap: int) -> int:
    """Largest microbatch size that fits in memory, probed slow-start style.

    Multiplicative doubling from 1 until the first failure (or the cap),
    halving back once, then additive +1 probing until the next failure.
    The oracle must be monotone: if u fits, every smaller u fits.
    """
    if u_cap < 1:
        raise ValidationError("u_cap must be >= 1")
    if not mem_oracle(1):
        raise NoFeasibleMicrobatchError("microbatch of 1 does not fit")
    u = 1
    failed_at: int | None = None
    while u * 2 <= u_cap:
        if mem_oracle(u * 2):
            u *= 2
        else:
            failed_at = u * 2
            break
    if failed_at is not None:
        u = failed_at // 2
        mem_oracle(u)  # re-probe after halving: the buffer state was lost at the failure
    while u + 1 <= u_cap:
        if mem_oracle(u + 1):
            u += 1
        else:
            break
    return u


def _constant_of(values: set[int], what: str, layer: int) -> int:
    if len(values) != 1:
        raise ValidationError(
            f"{what} of layer {layer} varies with microbatch size: {sorted(values)}"
        )
    return values.pop()


def fit_profiles(samples: Sequence[ProfileSample], stride: int = 4) -> ProfileSet:
    """Fit per-(layer, pass) affine models from measured samples.

    Needs at least two samples at distinct microbatch sizes per (layer, pass)
    for the F and B passes.  Update-pass samples are optional; when present a
    constant model (mean) is fitted.  Static sizes (W, dW, K) must not vary
    with the microbatch.
    """
    if not samples:
        raise InsufficientSamplesError("no samples")
    by_key: dict[tuple[int, str], list[ProfileSample]] = {}
    for s in samples:
        by_key.setdefault((s.layer_id, s.pass_), []).append(s)
    layer_ids = sorted({s.layer_id for s in samples})
    layer_count = layer_ids[-1] + 1
    if layer_ids != list(range(layer_count)):
        raise ValidationError("sample layer ids must be dense (0..R-1)")

    time_models: dict[tuple[int, str], AffineModel] = {}
    mem_models: dict[tuple[int, str], AffineModel] = {}
    x_models: dict[int, AffineModel] = {}
    y_models: dict[int, AffineModel] = {}
    w: dict[int, int] = {}
    dw: dict[int, int] = {}
    k: dict[int, int] = {}
    residuals: dict[tuple[int, str], float] = {}
    clamped: list[tuple[int, str]] = []

    u_max = {"F": None, "B": None}
    for layer in range(layer_count):
        for pass_ in ("F", "B"):
            group = by_key.get((layer, pass_))
            if not group:
                raise InsufficientSamplesError(f"no {pass_} samples for layer {layer}")
            pts_t = [(s.microbatch, float(s.compute_time_ns)) for s in group]
            pts_m = [(s.microbatch, float(s.mem_bytes)) for s in group]
            tm, c1 = fit_affine(pts_t)
            mm, c2 = fit_affine(pts_m)
            if c1 or c2:
                clamped.append((layer, pass_))
            time_models[(layer, pass_)] = tm
            mem_models[(layer, pass_)] = mm
            worst = 0.0
            for s in group:
                pred = tm(s.microbatch)
                worst = max(worst, abs(pred - s.compute_time_ns) / max(1, s.compute_time_ns))
            residuals[(layer, pass_)] = worst
            top = max(s.microbatch for s in group)
            cur = u_max[pass_]
            u_max[pass_] = top if cur is None else min(cur, top)

        f_group = by_key[(layer, "F")]
        x_models[layer], _ = fit_affine([(s.microbatch, float(s.x_bytes)) for s in f_group])
        y_models[layer], _ = fit_affine([(s.microbatch, float(s.y_bytes)) for s in f_group])
        everything = [s for key, grp in by_key.items() if key[0] == layer for s in grp]
        w[layer] = _constant_of({s.w_bytes for s in everything}, "w_bytes", layer)
        dw[layer] = _constant_of({s.dw_bytes for s in everything}, "dw_bytes", layer)
        k[layer] = _constant_of({s.k_bytes for s in everything}, "k_bytes", layer)

        u_group = by_key.get((layer, "U"))
        if u_group:
            mean_t = sum(s.compute_time_ns for s in u_group) / len(u_group)
            mean_m = sum(s.mem_bytes for s in u_group) / len(u_group)
            time_models[(layer, "U")] = AffineModel(0.0, mean_t)
            mem_models[(layer, "U")] = AffineModel(0.0, mean_m)

    return ProfileSet(
        layer_count=layer_count,
        time_models=time_models,
        mem_models=mem_models,
        x_models=x_models,
        y_models=y_models,
        w_bytes=w,
        dw_bytes=dw,
        k_bytes=k,
        u_max_f=u_max["F"] or 1,
        u_max_b=u_max["B"] or 1,
        residuals=residuals,
        clamped=clamped,
        stride=stride,
    )


@dataclass(frozen=True)
class SynthSpec:
    """Generator parameters for synthetic profiles.

    Presets:
      ``uniform``   -- every layer identical (transformer-like stacks);
      ``irregular`` -- per-layer variation (CNN-like), drawn from seeded
                       permutations so layer characteristics are pairwise
                       distinct and byte-identical across runs.

    The irregular jitter law: with permutations ``perm`` of 0..R-1 drawn from
    ``random.Random(seed)``, layer i gets multiplier 0.6 + 0.8*perm[i]/(R-1)
    (separately for compute time, weight size, and activation size).
    Distinct permutation ranks make the multipliers, and hence the layer
    times, collision-free.
    """

    layer_count: int
    preset: str = "uniform"
    u_max: int = 16
    base_time_ns: int = 1_000_000
    time_intercept_ns: int = 0
    ratio_b: float = 2.0
    mem_ratio_b: float = 1.0
    w_bytes: int = 64 << 20
    act_bytes_per_u: int = 1 << 20
    k_ratio: float = 2.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.layer_count < 1:
            raise ValidationError("layer_count must be >= 1")
        if self.preset not in ("uniform", "irregular"):
            raise ValidationError(f"unknown preset {self.preset!r}")
        if self.u_max < 1:
            raise ValidationError("u_max must be >= 1")
        if self.ratio_b <= 0 or self.mem_ratio_b <= 0:
            raise ValidationError("ratios must be positive")


def _jitter_factors(spec: SynthSpec) -> tuple[list[float], list[float], list[float]]:
    r = spec.layer_count
    if spec.preset == "uniform" or r == 1:
        ones = [1.0] * r
        return ones, list(ones), list(ones)
    rng = random.Random(spec.seed)
    def draw() -> list[float]:
        perm = rng.sample(range(r), r)
        return [0.6 + 0.8 * p / (r - 1) for p in perm]
    return draw(), draw(), draw()


def synth_profiles(spec: SynthSpec) -> ProfileSet:
    """Deterministic synthetic ProfileSet.

    Per layer i (with time factor f, weight factor g, activation factor h):
      time_F(u) = f * (base_time_ns * u + time_intercept_ns)
      time_B(u) = ratio_b * time_F(u)
      time_U    = w_i // 4                      (u-independent)
      x(u) = y(u) = h * act_bytes_per_u * u
      w_i = g * w_bytes;  dw_i = w_i;  k_i = k_ratio * w_i
      mem_F(u) = w_i + 2 * h * act_bytes_per_u * u
      mem_B(u) = mem_ratio_b * (w_i + dw_i + 3 * h * act_bytes_per_u * u)
      mem_U    = w_i + dw_i + k_i
    """
    tf, wf, af = _jitter_factors(spec)
    time_models: dict[tuple[int, str], AffineModel] = {}
    mem_models: dict[tuple[int, str], AffineModel] = {}
    x_models: dict[int, AffineModel] = {}
    y_models: dict[int, AffineModel] = {}
    w: dict[int, int] = {}
    dw: dict[int, int] = {}
    k: dict[int, int] = {}
    for i in range(spec.layer_count):
        w_i = round(spec.w_bytes * wf[i])
        dw_i = w_i
        k_i = round(w_i * spec.k_ratio)
        act = spec.act_bytes_per_u * af[i]
        time_models[(i, "F")] = AffineModel(spec.base_time_ns * tf[i],
                                            spec.time_intercept_ns * tf[i])
        time_models[(i, "B")] = AffineModel(spec.ratio_b * spec.base_time_ns * tf[i],
                                            spec.ratio_b * spec.time_intercept_ns * tf[i])
        time_models[(i, "U")] = AffineModel(0.0, w_i // 4)
        x_models[i] = AffineModel(act, 0.0)
        y_models[i] = AffineModel(act, 0.0)
        mem_models[(i, "F")] = AffineModel(2 * act, w_i)
        mem_models[(i, "B")] = AffineModel(spec.mem_ratio_b * 3 * act,
                                           spec.mem_ratio_b * (w_i + dw_i))
        mem_models[(i, "U")] = AffineModel(0.0, w_i + dw_i + k_i)
        w[i], dw[i], k[i] = w_i, dw_i, k_i
    return ProfileSet(
        layer_count=spec.layer_count,
        time_models=time_models,
        mem_models=mem_models,
        x_models=x_models,
        y_models=y_models,
        w_bytes=w,
        dw_bytes=dw,
        k_bytes=k,
        u_max_f=spec.u_max,
        u_max_b=spec.u_max,
    )


def sample_points(u_max: int, stride: int) -> tuple[int, ...]:
    """Microbatch sizes probed by the profiler: 1, then stride multiples, then u_max."""
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    pts = {1, u_max}
    pts.update(range(stride, u_max + 1, stride))
    return tuple(sorted(pts))


def synth_samples(spec: SynthSpec, stride: int = 4) -> list[ProfileSample]:
    """Sample records a real profiling run would have produced for ``spec``."""
    profiles = synth_profiles(spec)
    out: list[ProfileSample] = []
    for layer in range(spec.layer_count):
        for pass_ in PASSES:
            for u in sample_points(spec.u_max, stride):
                out.append(ProfileSample(
                    layer_id=layer,
                    pass_=pass_,
                    microbatch=u,
                    compute_time_ns=profiles.time_ns(pass_, layer, u),
                    mem_bytes=profiles.mem_bytes(pass_, layer, u),
                    x_bytes=profiles.x_bytes(layer, u),
                    y_bytes=profiles.y_bytes(layer, u),
                    w_bytes=profiles.w_bytes(layer),
                    dw_bytes=profiles.dw_bytes(layer),
                    k_bytes=profiles.k_bytes(layer),
                ))
    return out
