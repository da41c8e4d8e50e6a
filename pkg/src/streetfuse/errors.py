"""Exception hierarchy shared by all pipeline stages."""


class StreetFuseError(Exception):
    pass


class MaskSizeMismatch(StreetFuseError):
    pass


class EmptyCloud(StreetFuseError):
    pass


class TooFewPoints(StreetFuseError):
    pass


class DegenerateCorrespondences(StreetFuseError):
    pass


class NoValidFrames(StreetFuseError):
    pass


class OutOfBounds(StreetFuseError):
    pass


class NoSupervision(StreetFuseError):
    pass


class NonFiniteLoss(StreetFuseError):
    def __init__(self, step, detail=""):
        self.step = step
        super().__init__(f"non-finite loss or gradient at step {step}" + (f": {detail}" if detail else ""))


class InvalidSpec(StreetFuseError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class EmptyGroundTruth(StreetFuseError):
    pass


class ConfigError(StreetFuseError):
    pass


class IoError(StreetFuseError):
    pass


class StageError(StreetFuseError):
    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
