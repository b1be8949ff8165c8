"""Exception hierarchy shared by every module."""


class TakeoverError(Exception):
    """Base class. ``module`` names the component that raised."""

    module = "takeover"

    def __str__(self) -> str:
        return f"[{self.module}] {super().__str__()}"


class DatasetError(TakeoverError, ValueError):
    module = "dataset"


class BoosterError(TakeoverError, ValueError):
    module = "booster"


class ExplainError(TakeoverError, ValueError):
    module = "explain"


class MetricsError(TakeoverError, ValueError):
    module = "metrics"


class PipelineError(TakeoverError, ValueError):
    module = "pipeline"
