"""Exception types shared across the package."""


class HaleformError(Exception):
    pass


class DimensionError(HaleformError):
    pass


class HorizonError(HaleformError):
    pass


class PreconditionError(HaleformError):
    pass


class UnsupportedDimensionError(HaleformError):
    pass


class FitImpossibleError(HaleformError):
    pass


class EvaluationBlowupError(HaleformError):
    pass


class SchemaError(HaleformError):
    pass
