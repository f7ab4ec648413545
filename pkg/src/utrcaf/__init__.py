"""Uncertainty-induced channel transferability for source-free adaptation.

Modules:

- :mod:`utrcaf.model`: MLP encoder, weight-normalized classifier, training.
- :mod:`utrcaf.utr`: perturbation spectrum and its domain/instance aggregates.
- :mod:`utrcaf.caf`: calibration and adaptation losses and the training loop.
- :mod:`utrcaf.evaluate`, :mod:`utrcaf.metrics`: channel-split validation.
- :mod:`utrcaf.data`: synthetic domain pairs and file I/O.
- :mod:`utrcaf.cli`: the ``utrcaf`` command.
"""

__version__ = "0.1.0"
