"""Hand-sized example: one day of offers [6, 4, 2, 0, 9], target 15, discount 0.9."""

import math

import numpy as np

from dds.model import BehaviorParams, ModelConfig, NoiseDraw, simulate_history, stopping_task, update_beta, update_lambda

day = [6, 4, 2, 0, 9]
p = BehaviorParams(a1=0.8, a2=0.2, b1=0.8, b2=0.2, lambda0=15.0, beta0=0.9)

print("satisficing stop:", stopping_task(day, 15, 1.0))
print("discounted stop: ", stopping_task(day, 15, 0.9))
print("thresholds:      ", [round(15 * 0.9 ** k, 3) for k in range(5)])
print("cumulative:      ", np.cumsum(day).tolist())

for label, total in (("full day", sum(day)), ("accepted prefix", sum(day[:4]))):
    print(f"day-2 lambda ({label}): {update_lambda(15, total, 0, p)[0]:.4f}")
for t in (3, 4):
    print(f"day-2 beta after {t} rides: {update_beta(0.9, t, 0, p)[0]:.5f} (0.72 + 0.2 e^-{t} = {0.72 + 0.2 * math.exp(-t):.5f})")

sim = simulate_history(p, np.array([day, day], float), NoiseDraw.zeros(2), ModelConfig(utility_feedback="full_day"))
print("two-day simulation stops:", sim.stop_counts.tolist())
