EXIT_SUCCESS = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_INCOMPATIBLE = 4


class InvalidArgumentError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class VocabularyError(ValueError):
    def __init__(self, message: str, feature_index: int | None = None, value: int | None = None):
        super().__init__(message)
        self.feature_index = feature_index
        self.value = value


class EmptyPhaseDataError(ValueError):
    pass


class FormatVersionError(ValueError):
    pass


class StaleDualError(ValueError):
    pass


class InfeasibleBudgetError(RuntimeError):
    """Raised when no assignment can satisfy the budget constraints.

    `minimum_spend` is set for the single-constraint case, `best_lambda` and
    `violation` for the multi-constraint case.
    """

    def __init__(
        self,
        message: str,
        minimum_spend: float | None = None,
        best_lambda: list[float] | None = None,
        violation: list[float] | None = None,
    ):
        super().__init__(message)
        self.minimum_spend = minimum_spend
        self.best_lambda = best_lambda
        self.violation = violation


class DualBracketError(RuntimeError):
    pass


_EXIT_CODES: tuple[tuple[type[BaseException], int], ...] = (
    (InvalidArgumentError, EXIT_USAGE),
    (ConfigError, EXIT_USAGE),
    (VocabularyError, EXIT_INCOMPATIBLE),
    (EmptyPhaseDataError, EXIT_INCOMPATIBLE),
    (FormatVersionError, EXIT_INCOMPATIBLE),
    (StaleDualError, EXIT_INCOMPATIBLE),
    (InfeasibleBudgetError, EXIT_INFEASIBLE),
    (DualBracketError, EXIT_INFEASIBLE),
)


def exit_code_for(exc: BaseException) -> int:
    for exc_type, code in _EXIT_CODES:
        if isinstance(exc, exc_type):
            return code
    return EXIT_FAILURE
