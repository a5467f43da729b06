"""
Neural modal regression
=======================

A score network is trained by the Fisher-divergence objective, then a
regression network ascends the estimated modal risk.  A least-squares
network with the same architecture is the reference.
"""

from modalreg import pipeline
from modalreg.data import GeneratorSpec, gen_synthetic, mae_to_truth

train = gen_synthetic(GeneratorSpec("M1", "skewed", 1, 500, 1))
test = gen_synthetic(GeneratorSpec("M1", "skewed", 1, 5000, 1), "test")
opts = pipeline.FitOptions(epochs=300, hidden=(16, 8))

for method in ("nn_ls", "dmrnn"):
    model, log = pipeline.fit_method(method, train, 1, opts)
    err = mae_to_truth(model.predict(test.X), "M1", test.X)
    print(f"{method:6s} MAE to the noise-free curve: {err:.3f}")
