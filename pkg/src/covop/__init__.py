"""Bootstrap approximation for the operator-norm error of sample covariance matrices.

Modules
-------
models      data-generating models (Karhunen-Loeve, Marchenko-Pastur, elliptical)
covariance  sample covariance, operator norms, ``T_n`` and its projections
symspace    half-vectorization, fourth-moment operators, Gaussian proxies, KL
bootstrap   empirical and multiplier bootstrap replicates
metrics     ECDFs, Kolmogorov distance, rate fits
harness     Monte Carlo experiments and persistence
cli         command-line front end (``covop``)
"""

__version__ = "0.1.0"
