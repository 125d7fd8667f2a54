"""Exception types shared across the engine, catalog and workers."""


class DefinitionError(ValueError):
    """An event-type definition is malformed or violates a structural rule."""


class EvaluationError(Exception):
    """A single input event could not be evaluated.

    The offending event is dropped for that event type only; the engine keeps
    running and the caller counts the failure.
    """


class MissingAttributeError(EvaluationError):
    def __init__(self, name: str) -> None:
        super().__init__(f"missing attribute {name!r}")
        self.name = name
