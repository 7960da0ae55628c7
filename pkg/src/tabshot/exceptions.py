"""Exception hierarchy shared by every tabshot module."""


class TabshotError(Exception):
    """Base class for all package errors."""


class DataFormatError(TabshotError, ValueError):
    """Malformed input file (ragged CSV row, corrupt weights, bad point file)."""


class EmptyDatasetError(TabshotError, ValueError):
    pass


class UnknownCategoryError(TabshotError, KeyError):
    def __init__(self, feature, value):
        self.feature = feature
        self.value = value
        super().__init__(f"unknown category {value!r} for feature {feature!r}")

    def __str__(self):
        return self.args[0]


class UnusableFeatureError(TabshotError, ValueError):
    """A column with no observed values at all."""


class StratificationError(TabshotError, ValueError):
    pass


class TooManyFeaturesError(TabshotError, ValueError):
    pass


class DimensionError(TabshotError, ValueError):
    pass


class DegenerateInputError(TabshotError, ValueError):
    """Inputs too small for the operation to be defined."""


class NumericError(TabshotError, FloatingPointError):
    pass


class BackboneStateError(TabshotError, RuntimeError):
    """backward() called without a cached training-mode forward pass."""


class CapacityError(TabshotError, ValueError):
    pass


class TrainingDivergedError(TabshotError, RuntimeError):
    def __init__(self, episode, loss):
        self.episode = episode
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at episode {episode}")


class UndefinedMetricError(TabshotError, ValueError):
    pass
