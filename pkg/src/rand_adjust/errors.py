"""Exception taxonomy.

Every error carries a stable ``code`` string so the CLI and the simulation
engine can report it in machine-readable form. ``ValidationError`` covers bad
input (CLI exit status 2); ``FittingError`` covers statistical fitting
failures on otherwise valid input (CLI exit status 3).
"""

from __future__ import annotations

from typing import Any


class RandAdjustError(Exception):
    code = "RandAdjustError"
    exit_status = 2

    def __init__(self, message: str = "", **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"error": self.code, "message": self.message}
        for key, value in self.details.items():
            if value is not None:
                out[key] = value
        return out


class ValidationError(RandAdjustError):
    code = "ValidationError"
    exit_status = 2


class FittingError(RandAdjustError):
    code = "FittingError"
    exit_status = 3

    @property
    def arm(self) -> int | None:
        return self.details.get("arm")

    def with_arm(self, arm: int) -> "FittingError":
        self.details["arm"] = int(arm)
        return self


# input validation
class MissingColumn(ValidationError):
    code = "MissingColumn"


class NonBinaryTreatment(ValidationError):
    code = "NonBinaryTreatment"


class NonNumericCell(ValidationError):
    code = "NonNumericCell"


class DegenerateArm(ValidationError):
    code = "DegenerateArm"


class LengthMismatch(ValidationError):
    code = "LengthMismatch"


class InvalidArmSize(ValidationError):
    code = "InvalidArmSize"


class EnumerationTooLarge(ValidationError):
    code = "EnumerationTooLarge"


class OutcomeDomainError(ValidationError):
    code = "OutcomeDomainError"


class InvalidSpec(ValidationError):
    code = "InvalidSpec"


class DimensionMismatch(ValidationError):
    code = "DimensionMismatch"


class ArmMismatch(ValidationError):
    code = "ArmMismatch"


class InvalidAlpha(ValidationError):
    code = "InvalidAlpha"


class TooFewUnits(ValidationError):
    code = "TooFewUnits"


class NotPredictionUnbiased(ValidationError):
    code = "NotPredictionUnbiased"


class PlanValidationError(ValidationError):
    code = "PlanValidationError"


# fitting failures
class RankDeficient(FittingError):
    code = "RankDeficient"


class Separation(FittingError):
    code = "Separation"


class NonConvergence(FittingError):
    code = "NonConvergence"


class IllConditionedHessian(FittingError):
    code = "IllConditionedHessian"


class DegenerateCalibration(FittingError):
    code = "DegenerateCalibration"
