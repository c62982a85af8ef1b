"""Workbench for regularized contrastive learning with identifiable
time-series attribution maps: synthetic generators, a navigation simulator,
partitioned MLP encoders trained with a Jacobian-regularized InfoNCE
objective, attribution estimators, and scoring utilities.
"""

__version__ = "0.1.0"

from . import (  # noqa: F401
    attribution,
    diffcore,
    encoder,
    evaluation,
    navsim,
    sampling,
    synthgen,
    theoryguards,
    trainer,
)
