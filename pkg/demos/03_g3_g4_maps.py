"""Three- and four-fold delay maps from a bright simulated source, checked against
Gaussian moment factoring.

Run: python demos/03_g3_g4_maps.py
"""

from quadcorr import gaussian_oracle as go
from quadcorr import pipeline as pl
from quadcorr import simulator as sm

cfg = sm.morphology_config()
res = pl.analyze(sm.iter_simulate(cfg))
print(f"{res.n_tags:.3g} tags, {res.duration_s:g} s")

g2 = max(res.g2((1, 2), 3).normalized.max(), res.g2((1, 2), 4).normalized.max())
lm = pl.g3_landmarks(res.g3())
rows = [
    ("plateau", lm.plateau, go.g3_reduced(1, 1, 1)),
    ("diagonal", lm.diagonal, go.g3_reduced(1, 1, 2)),
    ("ridge 3", lm.ridge_3, go.g3_reduced(g2, 1, 1)),
    ("ridge 4", lm.ridge_4, go.g3_reduced(1, g2, 1)),
    ("peak", lm.peak, go.g3_reduced(g2, g2, 2)),
]
print(f"cross g2 peak {g2:.2f}")
print(f"{'landmark':10s} {'measured':>9s} {'factored':>9s}")
for name, measured, predicted in rows:
    print(f"{name:10s} {measured:9.2f} {predicted:9.2f}")
print(f"peak/ridge {lm.peak_to_ridge:.2f}, upper limit {go.g3_peak_bound(g2) / g2:.2f}")

ns = res.tick_ps / 1000
h = res.g4_hist
peak = h.peak()
print("four-fold peak at tau_12, tau_31, tau_41 =", tuple(v * ns for v in peak), "ns")
sl = h.slice_at(peak[0], axis=0)
print(f"slice at tau_12 = {peak[0] * ns:g} ns: {int(sl.counts.sum())} events, "
      f"{int(sl.counts.max())} in the peak bin")
