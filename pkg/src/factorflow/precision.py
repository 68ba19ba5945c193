"""Global floating-point precision switch.

All tensors created by the autodiff engine use the dtype selected here.
64-bit gives the headroom needed for invertibility and Jacobian checks;
32-bit is enough for training and roughly halves memory and time.
Switch precision only between computations, never mid-graph.
"""

import numpy as np

from .errors import ConfigError

_DTYPE = np.float64

_NAMES = {
    "float32": np.float32,
    "float64": np.float64,
    "f32": np.float32,
    "f64": np.float64,
    "32": np.float32,
    "64": np.float64,
}


def set_precision(name) -> None:
    """Select the global dtype. Accepts 'float32'/'float64' or a numpy dtype."""
    global _DTYPE
    if isinstance(name, str):
        key = name.lower()
        if key not in _NAMES:
            raise ConfigError(f"unknown precision {name!r}; use 'float32' or 'float64'")
        _DTYPE = _NAMES[key]
    elif name in (np.float32, np.float64):
        _DTYPE = np.dtype(name).type
    else:
        raise ConfigError(f"unsupported dtype {name!r}")


def dtype():
    """The currently selected numpy scalar type."""
    return _DTYPE


def precision_name() -> str:
    return "float64" if _DTYPE is np.float64 else "float32"


def eps() -> float:
    """Machine epsilon of the current precision."""
    return float(np.finfo(_DTYPE).eps)
