"""Walk through the highway merge under a position-spoofing attack.

Runs the three modes on a handful of seeds, prints mean zone speeds and the
share of the attack-induced slowdown that the voting defence wins back, then
follows one attacker through the ledger.

    python3 notebooks/merge_defence.py
"""
import numpy as np

from cvtrust.cli import vehicle_history
from cvtrust.sim import PRESETS, run_scenario

SEEDS = range(5)

speeds = {}
for mode in ("no-attack", "undefended", "defended"):
    runs = [run_scenario(PRESETS[f"merge-{mode}"].with_(seed=s)) for s in SEEDS]
    speeds[mode] = np.array([r.summary["mean_zone_speed"] for r in runs])
    print(f"{mode:>11}: {speeds[mode].mean():6.2f} m/s  (per seed {np.round(speeds[mode], 2)})")

n, u, d = speeds["no-attack"].mean(), speeds["undefended"].mean(), speeds["defended"].mean()
print(f"slowdown recovered by the defence: {(d - u) / (n - u):.0%}")

# one defended run in detail
run = run_scenario(PRESETS["merge-defended"].with_(seed=0))
first = run.summary["condemned"][0]
print(f"\nattackers: {run.summary['attackers']}")
print(f"trust history of {first}:")
for row in vehicle_history(run.ledger, first):
    print(f"  round {row['round']:>3}  t={row['time'] / 1000:6.0f} s  {row['op']} {row['value']:+}  -> {row['tp']}")

t, cautious = run.series("cautious")
_, fooled = run.series("fooled")
print("\n  t [s]  cautious  fooled")
for ti, c, f in list(zip(t, cautious, fooled))[::3]:
    print(f"  {ti / 1000:5.0f}  {c:8.0f}  {f:6.0f}")
