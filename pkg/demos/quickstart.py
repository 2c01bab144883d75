"""Fit STREAM to one simulated dataset and forecast its most recent experiments.

Run with ``python demos/quickstart.py``; takes well under a minute.
"""

import numpy as np

import stream_meta as sm
from stream_meta.report import group_summary, time_effect_summary

# A scenario-i dataset: strong time pattern, heterogeneous group effects.
data, truth = sm.generate_dataset(sm.scenario_params("i", m=40, J=10, K=4, seed=0))
train, test = sm.split_by_time(data, 0.8)
print(f"{train.m} training and {test.m} test experiments over {data.L} distinct times")

# Four seeded HMC chains; diagonal metric adaptation helps the hierarchical scales.
spec = sm.ModelSpec("STREAM")
draws = sm.run_chains(spec, train, sm.SamplerConfig(warmup=500, samples=1500, seed=0, adapt_mass=True))
rep = sm.convergence_report(draws.chains, draws.names)
print(f"acceptance {np.round(draws.accept_rate, 2)}, max R-hat {rep.max_r_hat:.3f}")

# Posterior-predictive draws for the held-out (later) experiments.
pred = sm.predict(sm.PredictionTask(test, draws, spec, seed=0))
rows = sm.summarize(pred)
true_theta = dict(zip(truth.ids, truth.theta))
theta = np.array([true_theta[r[0]] for r in rows])
scores = sm.score(theta, [r[1] for r in rows], [r[3] for r in rows], [r[4] for r in rows])
print(f"MAPE {scores.mape:.1f}%  scaled MSE {scores.scaled_mse:.4f}  interval score {scores.interval_score:.2f}")

print("\ntest_id  truth  forecast  95% HPD of y")
for r, t in zip(rows, theta):
    print(f"{r[0]:>7} {t:6.2f} {r[1]:9.2f}  [{r[3]:.2f}, {r[4]:.2f}]")

# The fitted seasonal pattern: posterior median of the GP time effect.
print("\ntime  median  HPD")
for t, med, lo, hi in time_effect_summary(draws):
    print(f"{t:4.0f} {med:7.2f}  [{lo:.2f}, {hi:.2f}]")

# Shrunken effects of the first few campaigns (group a).
print("\ngroup  effect  HPD")
for label, block, med, lo, hi in group_summary(draws)[:5]:
    print(f"{label:>5} {med:7.2f}  [{lo:.2f}, {hi:.2f}]")
