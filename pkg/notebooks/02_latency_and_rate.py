"""
Latency and true update rate
============================

Two timing questions about a tracker: how late its samples arrive relative
to the reference, and how often it really updates when it streams at a
higher nominal rate.
"""

from trackbench.patterns import DistortionModel, distort, generate, robot_pattern, prediction_upsample
from trackbench.sync import build_pairs, estimate_latency, estimate_true_rate

#%%
# The speed profile of the cube circuit rises and falls on every edge,
# which gives the cross-correlation something to lock on to.
ref = generate(robot_pattern("B", repetitions=2))
for lag in (-0.05, 0.0, 0.01, 0.05):
    test = distort(ref, DistortionModel(noise_sigma=5e-4, latency=lag), seed=3)
    est = estimate_latency(ref, test)
    print(f"injected {lag * 1e3:+6.1f} ms  estimated {est.lag * 1e3:+7.2f} ms  peak r {est.peak_correlation:.3f}")

#%%
# Pairing shifts the test stream by the estimated lag and interpolates it
# onto the reference clock.
pairs = build_pairs(ref, test, latency=est.lag)
print(len(pairs), "pairs,", pairs.n_dropped, "dropped")

#%%
# A 120 Hz tracker that fills a 500 Hz stream by extrapolation.
up = prediction_upsample(generate(robot_pattern("B", kind="circle")), 500.0)
rate = estimate_true_rate(up)
print(f"nominal {up.rate():.0f} Hz, detected {rate.rate:.2f} Hz via {rate.method}")
