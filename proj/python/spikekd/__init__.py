"""Spiking-student knowledge distillation.

Thin bindings over the C++ core: the training objectives, STA weights, ELA
modification, LIF dynamics, the energy model, model inference and the
command pipeline (``run``), which writes the same files as the ``spikekd``
command-line tool.
"""

from ._spikekd import (
    commands,
    ela_modify,
    lif_step,
    load_config,
    objective,
    predict,
    run,
    sop,
    sta_confidence,
    sta_weights,
)

__all__ = [
    "commands",
    "ela_modify",
    "lif_step",
    "load_config",
    "objective",
    "predict",
    "run",
    "sop",
    "sta_confidence",
    "sta_weights",
]
