"""Distributed equals centralized: the statistics of disjoint row blocks add up.

Each party reduces its rows to (A'A, A'y, y'y); summing those triples and
solving the normal equations reproduces the pooled-data regression exactly,
which is the correctness backbone of the whole protocol.
"""

import numpy as np

from smddp import linmodel as lm
from smddp.harness import generate_synthetic, planted_coefficients, split_horizontal

data = generate_synthetic(rows=2000, d=6, noise_sd=0.0, seed=7)
beta = planted_coefficients(6, seed=7)

# every party computes only its own sufficient statistics
parts = [lm.compute_local_statistics(shard) for shard in split_horizontal(data, 5, seed=1)]
aggregate = lm.aggregate_statistics(parts)
w_distributed = lm.solve(aggregate)

pooled = lm.compute_local_statistics(data)
w_centralized = lm.solve(pooled)

print("planted coefficients:   ", np.round(beta, 6))
print("centralized solution:   ", np.round(w_centralized, 6))
print("5-party aggregate:      ", np.round(w_distributed, 6))
print("max |distributed - centralized|:", np.abs(w_distributed - w_centralized).max())
print("objective error at the optimum: ", lm.objective_error(aggregate, w_distributed))
assert np.abs(w_distributed - w_centralized).max() < 1e-8
assert np.abs(w_distributed - beta).max() < 1e-6
print("distributed and centralized regressions agree.")
