"""lupi-lab: a deterministic benchmark harness for privileged-information
knowledge transfer (generalized distillation and transfer-around models).

Layout:
    rng       seed derivation and counter-based random streams
    net       dense-network training core (forward, exact gradients,
              sgd/rmsprop/adam, least squares, gradient checks)
    synthgen  seeded synthetic dataset generators
    lupi      distillation and shared-extractor transfer procedures
    linear    closed-form risks for the linear-Gaussian setting
    metrics   evaluation metrics (accuracy, ROC AUC, mse-to-clean-target)
    datasets  file-backed datasets (IDX images, partitioned CSV)
    sweep     experiment sweep runner and result emission
    presets   named experiment presets
    repro     end-to-end reproduction recipes
    cli       the lupi-lab command line
"""

__version__ = "0.1.0"
