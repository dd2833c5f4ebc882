"""Secure multiparty linear regression with distributed differential privacy.

Parties holding horizontal shards of a dataset jointly fit a linear model on
the pooled rows without revealing their data: each party privatizes its local
normal-equation statistics with calibrated Laplace noise (the functional
mechanism) and contributes them under additively homomorphic encryption along
a ring, so the data collector only ever sees the noisy aggregate. The package
also ships the experiment harness used to study the accuracy, scalability,
and overhead of the scheme.

Modules:
    linmodel   exact distributed regression math (statistics, solve, MSE)
    dpfm       functional-mechanism noise, budgets, repair-and-optimize
    ahe        Paillier encryption plus the fixed-point codec
    wire       framed binary message format
    protocol   the ring protocol over in-process or socket transports
    harness    experiment engine (sweeps, benchmarks, CSV results)
    cli        command-line front end
"""

__version__ = "0.1.0"
