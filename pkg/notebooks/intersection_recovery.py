"""Bad-mouthing at a reservation-managed intersection, two round latencies.

For each latency, compares the attacked run with a same-seed control and
prints how long the fallback to all-way stop lasted and the worst smoothed
per-vehicle delay.

    python3 notebooks/intersection_recovery.py
"""
from cvtrust.sim import PRESETS, Mode, run_scenario
from cvtrust.sim.intersection import travel_time_inflation

for preset in ("intersection-22", "intersection-60"):
    for seed in range(3):
        cfg = PRESETS[preset].with_(seed=seed)
        attacked = run_scenario(cfg)
        control = run_scenario(cfg.with_(mode=Mode.NoAttack))
        extra = travel_time_inflation(attacked, control)
        s = attacked.summary
        bound = (cfg.t_lat + 2 * cfg.tb_s) / 1000
        print(f"{preset} seed {seed}: attack at {s['attack_start_s']:.0f} s on {s['victims']} vehicle(s), "
              f"service restored after {s['recovery_s']:.0f} s (bound {bound:.0f} s), "
              f"peak extra delay {extra.max():.1f} s")
    print()

s = run_scenario(PRESETS["intersection-22"].with_(seed=0)).summary
print("mode changes (ms, mode):", s["mode_log"])
print("verdicts:", s["contracts"])
