"""Multi-column CNN with scale/flip-tied filters.

The package is organized around explicit linear resampling operators
(:mod:`sicnn.scaling`), the closed-form column filter transforms built on
them (:mod:`sicnn.transforms`), a small dense-tensor layer engine
(:mod:`sicnn.layers`), the tied multi-column model (:mod:`sicnn.model`),
dataset tooling (:mod:`sicnn.data`), the training loop (:mod:`sicnn.train`)
and the measurement harness + CLI (:mod:`sicnn.analysis`, :mod:`sicnn.cli`).
"""

__version__ = "0.1.0"
