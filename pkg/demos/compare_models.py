"""Compare STREAM with the seven baselines over a few simulated replications.

Usage: ``python demos/compare_models.py [scenario] [reps]`` (defaults: i, 3).
Each replication fits all eight models, so expect a few minutes.
"""

import sys

import numpy as np

import stream_meta as sm

scenario = sys.argv[1] if len(sys.argv) > 1 else "i"
reps = int(sys.argv[2]) if len(sys.argv) > 2 else 3
sampler = dict(warmup=500, samples=1500, adapt_mass=True)

results = {kind: [] for kind in sm.KINDS}
rhat = {kind: [] for kind in sm.KINDS}
for rep in range(reps):
    data, truth = sm.generate_dataset(sm.scenario_params(scenario, m=40, J=10, K=4, seed=rep))
    train, test = sm.split_by_time(data, 0.8)
    true_theta = dict(zip(truth.ids, truth.theta))
    theta = np.array([true_theta[i] for i in test.ids])
    for kind in sm.KINDS:
        spec = sm.ModelSpec(kind)
        draws = sm.run_chains(spec, train, sm.SamplerConfig(seed=rep, **sampler))
        rows = sm.summarize(sm.predict(sm.PredictionTask(test, draws, spec, seed=rep)))
        s = sm.score(theta, [r[1] for r in rows], [r[3] for r in rows], [r[4] for r in rows])
        results[kind].append((s.mape, s.scaled_mse, s.interval_score))
        rhat[kind].append(sm.convergence_report(draws.chains, draws.names).max_r_hat)
    print(f"replication {rep + 1}/{reps} done", file=sys.stderr)

# Medians across replications, as in a simulation-study table.
print(f"scenario {scenario}, {reps} replications (medians)")
print(f"{'model':<7} {'MAPE':>7} {'sMSE':>8} {'IS':>7} {'max R-hat':>10}")
for kind in sm.KINDS:
    m = np.median(np.array(results[kind]), axis=0)
    print(f"{kind:<7} {m[0]:7.1f} {m[1]:8.4f} {m[2]:7.2f} {np.median(rhat[kind]):10.3f}")
