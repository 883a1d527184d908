"""A Sybil-backed fake accident report and its later redress.

Shows the stake margin of the redress evaluation round by round and the
effect of the arrival rate on how long the fake report stands.

    python3 notebooks/sybil_redress.py
"""
import numpy as np

from cvtrust.sim import PRESETS, run_scenario

run = run_scenario(PRESETS["routes-0.2"].with_(seed=0))
s = run.summary
print(f"reporter {s['reporter']} backed by {s['attacker']} and {s['sybils'][1:]}; first verdict: {s['first_verdict']}")
print(" round   t [s]   margin  opponents  fired")
for e in run.redress_log:
    print(f"{e['round']:>6} {e['time'] / 1000:7.0f} {e['margin']:8.2f} {len(e['opponents']):10d}  {e['fired']}")

for preset in ("routes-0.2", "routes-0.33"):
    times = [run_scenario(PRESETS[preset].with_(seed=k)).summary["time_to_redress_s"] for k in range(10)]
    print(f"{preset}: time to redress {np.mean(times):.0f} s on average (min {min(times):.0f}, max {max(times):.0f})")
