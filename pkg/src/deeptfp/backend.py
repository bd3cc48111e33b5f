"""Selects the conv2d kernel backend.

Two implementations exist with the same four-function API: compiled numba
loops (_conv_numba) and a pure numpy fallback (_conv_numpy).  The choice is
read once from the DEEPTFP_BACKEND environment variable:

    auto    numba when importable, numpy otherwise (default)
    numba   require numba, fail loudly if missing
    numpy   force the fallback

Results are reproducible within a backend.  Across backends the last float
bits may differ because the summation order differs.
"""

import logging
import os

from . import _conv_numpy

log = logging.getLogger(__name__)

_ENV_VAR = "DEEPTFP_BACKEND"
_active = None


def _resolve(choice: str):
    if choice == "numpy":
        return _conv_numpy
    if choice == "numba":
        from . import _conv_numba
        return _conv_numba
    if choice == "auto":
        try:
            from . import _conv_numba
            return _conv_numba
        except ImportError:
            log.warning("numba unavailable, using the numpy conv backend")
            return _conv_numpy
    raise ValueError(
        f"{_ENV_VAR} must be auto, numba, or numpy, got {choice!r}")


def active():
    """The kernel module in use, resolved on first call and then cached."""
    global _active
    if _active is None:
        _active = _resolve(os.environ.get(_ENV_VAR, "auto").strip().lower())
        log.debug("conv backend: %s", _active.NAME)
    return _active


def active_name() -> str:
    return active().NAME


def use(choice: str) -> None:
    """Programmatic override, mainly for tests and the backend benchmark."""
    global _active
    _active = _resolve(choice)
