"""Walk through the per-layer filter schedule and how it grows with resolution."""
from sgxl.layerspec import build_growth_schedule, compute_layer_specs, format_schedule

# a single 16 px stage: cutoffs rise geometrically, the last two layers are critical
specs = compute_layer_specs(16, 11)
for s in specs:
    print(f"{s.index:2d}  fc={s.cutoff:7.3f}  fs={s.stopband:7.3f}  sr={s.sampling_rate:4d}  crit={s.is_critical}")

# growing to 1024 keeps the earlier layers and appends new ones at each step
sched = build_growth_schedule(16, 1024)
print("layers per stage:", sched.layer_counts)   # 11, 16, 21, ... 39
print(format_schedule(sched))
