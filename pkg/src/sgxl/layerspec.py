"""Anti-aliased filter specifications and the progressive-growing plan.

Everything here is pure and deterministic: the same arguments always give
bitwise-identical results, so the functions are safe to call from anywhere.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

FIRST_CUTOFF = 2.0              # cutoff of the first layer
FIRST_STOPBAND = 2 ** 2.1       # stopband of the first layer
LAST_STOPBAND_REL = 2 ** 0.3    # last stopband relative to the last cutoff
NUM_CRITICAL = 2

START_LAYERS = 11
LAYERS_CUT = 2
LAYERS_ADDED = 7
LAYERS_ADDED_FINAL = 5
MAX_RESOLUTION = 1024

# (lowest resolution, highest resolution, batch size)
_BATCH_TABLE = ((16, 64, 2048), (128, 256, 256), (512, 1024, 128))


@dataclass(frozen=True)
class LayerSpec:
    index: int
    sampling_rate: int
    cutoff: float
    stopband: float
    half_width: float
    is_critical: bool

    def as_row(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GrowthStage:
    resolution: int
    layer_count: int
    layers_cut: int
    layers_added: int
    batch_size: int


@dataclass
class GrowthSchedule:
    stages: list[GrowthStage]
    per_stage_specs: list[list[LayerSpec]] = field(default_factory=list)

    @property
    def layer_counts(self) -> list[int]:
        return [s.layer_count for s in self.stages]

    def rows(self):
        """Yield one flat record per (stage, layer)."""
        for k, specs in enumerate(self.per_stage_specs):
            for spec in specs:
                yield {"stage": k, "resolution": self.stages[k].resolution, **spec.as_row()}


def _is_pow2(x: int) -> bool:
    return int(x) == x and x > 0 and (int(x) & (int(x) - 1)) == 0


def compute_layer_specs(resolution: int, n_layers: int) -> list[LayerSpec]:
    """Per-layer filter parameters for a synthesis network of ``n_layers``.

    Cutoffs and stopbands follow a geometric progression from the first-layer
    values to the last-layer values; the exponent saturates at 1 so that the
    final two layers share the critical specification (cutoff = bandlimit).
    """
    if not _is_pow2(resolution) or resolution < 16:
        raise ValueError(f"resolution must be a power of two >= 16, got {resolution}")
    if n_layers < NUM_CRITICAL:
        raise ValueError(f"need at least {NUM_CRITICAL} layers for the critical pair, got {n_layers}")

    last_cutoff = resolution / 2
    last_stopband = last_cutoff * LAST_STOPBAND_REL
    denom = n_layers - NUM_CRITICAL
    if denom == 0:
        exponents = np.ones(n_layers)
    else:
        exponents = np.minimum(np.arange(n_layers) / denom, 1.0)
    cutoffs = FIRST_CUTOFF * (last_cutoff / FIRST_CUTOFF) ** exponents
    stopbands = FIRST_STOPBAND * (last_stopband / FIRST_STOPBAND) ** exponents
    # Critical layers must land exactly on the bandlimit.
    cutoffs[exponents == 1.0] = last_cutoff
    stopbands[exponents == 1.0] = last_stopband

    return _assemble(resolution, cutoffs, stopbands)


def _assemble(resolution, cutoffs, stopbands, offset=0):
    sampling_rates = np.exp2(np.ceil(np.log2(np.minimum(stopbands * 2, resolution))))
    half_widths = np.maximum(stopbands, sampling_rates / 2) - cutoffs
    return [
        LayerSpec(
            index=offset + i,
            sampling_rate=int(sampling_rates[i]),
            cutoff=float(cutoffs[i]),
            stopband=float(stopbands[i]),
            half_width=float(half_widths[i]),
            is_critical=bool(cutoffs[i] == sampling_rates[i] / 2),
        )
        for i in range(len(cutoffs))
    ]


def _append_grown(kept: list[LayerSpec], grown: list[LayerSpec], resolution: int) -> list[LayerSpec]:
    """Kept specs verbatim, then the grown configuration's tail.

    Starting at 16 px the tail is already monotone. For larger start
    resolutions the tail's first cutoffs can dip below the last kept layer;
    those are lifted to it so filters never narrow with depth.
    """
    tail = grown[len(kept):]
    if not kept:
        return list(tail)
    floor_c, floor_t = kept[-1].cutoff, kept[-1].stopband
    if tail[0].cutoff >= floor_c and tail[0].stopband >= floor_t:
        return list(kept) + list(tail)
    cutoffs = np.maximum([s.cutoff for s in tail], floor_c)
    stopbands = np.maximum([s.stopband for s in tail], floor_t)
    return list(kept) + _assemble(resolution, cutoffs, stopbands, offset=len(kept))


def batch_size_for_resolution(resolution: int, divisor: int = 1) -> int:
    """Batch size for a growth stage, optionally shrunk by ``divisor``."""
    if divisor < 1:
        raise ValueError("divisor must be >= 1")
    for lo, hi, batch in _BATCH_TABLE:
        if lo <= resolution <= hi and _is_pow2(resolution):
            return max(1, batch // divisor)
    raise ValueError(f"resolution {resolution} is outside the growth schedule (16..1024)")


def build_growth_schedule(
    start_resolution: int,
    final_resolution: int,
    *,
    max_resolution: int = MAX_RESOLUTION,
    shortened_final: bool | None = None,
    batch_divisor: int = 1,
) -> GrowthSchedule:
    """Stage-by-stage growing plan with frozen specs for kept layers.

    ``shortened_final`` controls whether the last stage adds 5 instead of 7
    layers; by default that only happens when ``final_resolution`` equals
    ``max_resolution``.
    """
    for r in (start_resolution, final_resolution):
        if not _is_pow2(r) or r < 16:
            raise ValueError(f"resolutions must be powers of two >= 16, got {r}")
    if start_resolution > final_resolution:
        raise ValueError(f"start resolution {start_resolution} exceeds final {final_resolution}")
    if shortened_final is None:
        shortened_final = final_resolution == max_resolution

    stages = [GrowthStage(start_resolution, START_LAYERS, 0, START_LAYERS,
                          batch_size_for_resolution(start_resolution, batch_divisor))]
    per_stage = [compute_layer_specs(start_resolution, START_LAYERS)]
    res = start_resolution
    while res < final_resolution:
        res *= 2
        prev = stages[-1]
        added = LAYERS_ADDED_FINAL if (res == final_resolution and shortened_final) else LAYERS_ADDED
        count = prev.layer_count - LAYERS_CUT + added
        kept = per_stage[-1][: prev.layer_count - LAYERS_CUT]
        grown = compute_layer_specs(res, count)
        per_stage.append(_append_grown(kept, grown, res))
        stages.append(GrowthStage(res, count, LAYERS_CUT, added,
                                  batch_size_for_resolution(res, batch_divisor)))
    return GrowthSchedule(stages, per_stage)


def format_schedule(schedule: GrowthSchedule) -> str:
    """Human-readable table of every stage's layers."""
    lines = []
    for k, (stage, specs) in enumerate(zip(schedule.stages, schedule.per_stage_specs)):
        lines.append(f"stage {k}: {stage.resolution}x{stage.resolution}, {stage.layer_count} layers, "
                     f"batch {stage.batch_size}")
        lines.append(f"  {'idx':>3} {'rate':>5} {'cutoff':>9} {'stopband':>9} {'half_w':>9} crit")
        for s in specs:
            lines.append(f"  {s.index:>3} {s.sampling_rate:>5} {s.cutoff:>9.3f} {s.stopband:>9.3f} "
                         f"{s.half_width:>9.3f} {'*' if s.is_critical else ''}")
    return "\n".join(lines)
