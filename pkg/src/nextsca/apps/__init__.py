"""Problem builders for the bundled applications."""

from .cartography import build_cartography
from .flow_control import build_flow_control, random_flow_control
from .localization import build_localization
from .sparse_ml import build_sparse_ml, gaussian_sparse_ml

BUILDERS = {
    "localization": build_localization,
    "cartography": build_cartography,
    "flow_control": random_flow_control,
    "sparse_ml": gaussian_sparse_ml,
}

__all__ = ["BUILDERS", "build_cartography", "build_flow_control", "build_localization",
           "build_sparse_ml", "gaussian_sparse_ml", "random_flow_control"]
