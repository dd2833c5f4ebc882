"""Privacy-accuracy trade-off: distributed vs centralized noise injection.

Sweeps the global budget for the three release pipelines on one synthetic
dataset. With the per-party ratio set to the party count, the distributed
curve hugs the centralized one and both approach the noise-free floor as the
budget grows (MSE on a log axis would mirror the usual trade-off plots).
Writes the table to tradeoff_results.csv.
"""

from smddp.harness import (
    ExperimentSpec,
    SyntheticSource,
    sweep,
    write_results_csv,
)

base = ExperimentSpec(
    mode="DDP",
    epsilons=(0.1, 0.4, 1.6, 6.4, 12.8),
    n_parties=7,
    data=SyntheticSource(rows=5000, attrs=8, noise_sd=1.0, coef_seed=42),
    alpha_rule="equal-to-n",
    geometric_p=0.9,
    repeats=25,  # keep the demo quick; the experiments use 100
    seed=11,
)

rows = sweep(base, modes=["NoDP", "CDP", "DDP"])
write_results_csv(rows, "tradeoff_results.csv")

print(f"{'mode':>5} {'epsilon':>8} {'mean MSE':>14} {'stddev':>12}")
for r in rows:
    print(f"{r.mode:>5} {r.epsilon:>8} {r.mean_mse:>14.5g} {r.mse_stddev:>12.4g}")
print("\nfull table written to tradeoff_results.csv")
