# vrsense/errors.py

"""
Exception hierarchy for the engine.

Every error carries a short machine-readable ``code`` so the CLI and the
HTTP error handlers can report it without parsing messages.
"""


class VrsenseError(Exception):
    code = "VRSENSE_ERROR"

    def __init__(self, message="", code=None):
        super().__init__(message)
        if code is not None:
            self.code = code

    def to_dict(self):
        return {"error": str(self), "code": self.code}


class ConfigError(VrsenseError):
    code = "CONFIG_ERROR"


class CaptureError(VrsenseError):
    code = "MALFORMED_GLOBAL_HEADER"


class TableCapacityExceeded(VrsenseError):
    code = "TABLE_CAPACITY_EXCEEDED"


class SignatureTrainingError(VrsenseError):
    code = "SIGNATURE_TRAINING_FAILED"


class ModelFileError(VrsenseError):
    code = "CORRUPT_MODEL"


class ClassifierError(VrsenseError):
    code = "CLASSIFIER_ERROR"


class SynthError(VrsenseError):
    code = "SYNTH_ERROR"


class EvaluationError(VrsenseError):
    code = "SIDE_CAR_MISMATCH"
