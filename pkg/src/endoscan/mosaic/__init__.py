from .canvas import (
    CanvasError,
    MosaicCanvas,
    Mosaicker,
    PositionEstimate,
    compose,
    integrate,
    working_frame,
)
from .measure import (
    DarkRegion,
    GridMeasurement,
    MeasurementError,
    coverage_area_mm2,
    find_dark_region,
    measure_grid,
    measure_mosaic_diameter,
)
from .registration import (
    DegenerateRegistrationError,
    RegistrationError,
    RegistrationParams,
    RegistrationResult,
    ncc_map,
    ncc_map_spatial,
    register,
    register_working,
    resize_area,
)

__all__ = [
    "CanvasError", "DarkRegion", "DegenerateRegistrationError", "GridMeasurement",
    "MeasurementError", "MosaicCanvas", "Mosaicker", "PositionEstimate", "RegistrationError",
    "RegistrationParams", "RegistrationResult", "compose", "coverage_area_mm2",
    "find_dark_region", "integrate", "measure_grid", "measure_mosaic_diameter", "ncc_map",
    "ncc_map_spatial", "register", "register_working", "resize_area", "working_frame",
]
