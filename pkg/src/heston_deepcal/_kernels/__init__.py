"""Kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``HESTON_DEEPCAL_PURE_PYTHON=1`` is set, the numpy
fallback is used. Both expose ``p_integrands`` and ``simulate_log_spot``.
"""
import os

from . import _pykernels

pykernels = _pykernels

ckernels = None
if os.environ.get("HESTON_DEEPCAL_PURE_PYTHON") != "1":
    try:
        from . import _ckernels as ckernels
    except ImportError:  # extension not built
        ckernels = None

backend = ckernels if ckernels is not None else _pykernels
BACKEND = backend.NAME

p_integrands = backend.p_integrands
simulate_log_spot = backend.simulate_log_spot
seed_key = _pykernels.seed_key
counter_uniforms = _pykernels.counter_uniforms
riccati_cd = _pykernels.riccati_cd

__all__ = [
    "BACKEND",
    "backend",
    "ckernels",
    "pykernels",
    "p_integrands",
    "simulate_log_spot",
    "seed_key",
    "counter_uniforms",
    "riccati_cd",
]
