"""Exception types shared across the package."""


class ParamArityMismatch(ValueError):
    """Parameter vector length does not match the expression's slots."""

    def __init__(self, expected, got):
        super().__init__(f"expected {expected} parameter(s), got {got}")
        self.expected = expected
        self.got = got


class ParseError(ValueError):
    def __init__(self, message, position, text=""):
        super().__init__(f"{message} at offset {position}")
        self.position = position
        self.text = text


class ShapeMismatch(ValueError):
    pass


class SpaceTooLarge(ValueError):
    def __init__(self, count, budget):
        super().__init__(
            f"search space has {count} candidates, over the exhaustive budget "
            f"of {budget}; use the RL controller instead"
        )
        self.count = count
        self.budget = budget


class LayerOutOfRange(IndexError):
    pass


class NoTrainableBeta(ValueError):
    pass


class EmptyComparison(ValueError):
    pass


class WorkerPanic(RuntimeError):
    def __init__(self, task_id, cause=None):
        super().__init__(f"worker failed on task {task_id}: {cause!r}")
        self.task_id = task_id
        self.cause = cause
