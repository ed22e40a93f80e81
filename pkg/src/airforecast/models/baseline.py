import numpy as np

from ..errors import ContractError


def persistence_forecast(target_window, k: int = 1) -> float:
    """Last observed target value, whatever the horizon."""
    values = np.asarray(target_window, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ContractError("persistence needs a non-empty window")
    return float(values[-1])
