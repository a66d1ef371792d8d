from .control import (
    ServoCalibration,
    ServoGains,
    ServoState,
    image_to_probe,
    pi_step,
    probe_to_image,
)
from .loop import (
    CalibrationError,
    Instrument,
    Interlock,
    RunLog,
    ServoAbort,
    World,
    calibrate_phi,
    servo_scan,
)

__all__ = [
    "CalibrationError", "Instrument", "Interlock", "RunLog", "ServoAbort", "ServoCalibration",
    "ServoGains", "ServoState", "World", "calibrate_phi", "image_to_probe", "pi_step",
    "probe_to_image", "servo_scan",
]
