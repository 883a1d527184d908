"""Closed-form resource demand: block size, latency, storage and CPU.

    python3 notebooks/resource_model.py
"""
from cvtrust import resources as rm
from cvtrust.consensus import committee_size

p = rm.ResourceParams(d_0=72.0, t_lat=60.0)
border, interior = rm.block_size_terms(p)
print(f"72 km region: {rm.block_size(p) / 1e6:.3f} MB per minute "
      f"({border / 1e6:.3f} MB transfers + {interior / 1e6:.3f} MB votes)")
s = rm.storage_cost(p)
print(f"storage: {s.per_month / 1e9:.2f} GB/month, {s.per_month / 10 / 1e9:.2f} GB/month over ten shards")

big = rm.storage_cost(rm.ResourceParams(d_0=120.0, t_lat=60.0))
print(f"120 km with daily summary: {big.with_summary / 1e9:.2f} GB, summary overhead {big.overhead_fraction:.2%}")

print(f"latency stays at 22 s up to {rm.knee_radius():.1f} km")
for d in (50, 150, 200, 216, 217, 250):
    print(f"  d_0 = {d:3d} km -> {rm.min_latency(d)} s")

for h in (0.7, 0.75, 0.8, 0.9, 1.0):
    print(f"h = {h:.2f}: committee {committee_size(h):5d}, cpu {rm.cpu_model(h):.4f} of a core")

pot = rm.pot_sizing(10.0)
print(f"10 km pot chain: {pot.population:.0f} vehicles x {pot.tx_size / 1e3:.0f} kB = {pot.aggregate_size / 1e9:.2f} GB")
