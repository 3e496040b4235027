"""Exception types shared across the explorer."""

from typing import Iterable, List, Sequence

from pydantic import ValidationError


class ExplorerError(ValueError):
    """Base class for explorer failures."""


class InputError(ExplorerError):
    """An input document failed to parse or validate.

    Attributes:
        field_paths: Dotted paths of the offending fields, e.g. ``model.hidden_dim``
    """

    def __init__(self, message: str, field_paths: Sequence[str] = ()) -> None:
        super().__init__(message)
        self.field_paths: List[str] = list(field_paths)

    @classmethod
    def from_validation_error(cls, document: str, exc: ValidationError) -> "InputError":
        """Build an InputError naming every failing field of a pydantic error.

        Args:
            document: Name of the document being validated (``model``, ``topology``...)
            exc: The pydantic validation error

        Returns:
            InputError whose message lists ``document.field: reason`` lines
        """
        paths: List[str] = []
        lines: List[str] = []
        for err in exc.errors():
            loc = ".".join(str(part) for part in err["loc"])
            path = f"{document}.{loc}" if loc else document
            paths.append(path)
            lines.append(f"{path}: {err['msg']}")
        return cls("; ".join(lines), paths)


class InfeasibleConfigError(ExplorerError):
    """A parallelism configuration violates one or more constraints."""

    def __init__(self, violations: Iterable[str]) -> None:
        self.violations: List[str] = list(violations)
        super().__init__("Infeasible configuration: " + "; ".join(self.violations))


class NoFeasibleConfigError(InfeasibleConfigError):
    """Enumeration produced no feasible configuration."""


class CycleError(ExplorerError):
    """The kernel graph contains a dependency cycle."""

    def __init__(self, kernel_id: int, cycle: Sequence[int] = ()) -> None:
        self.kernel_id = kernel_id
        self.cycle = list(cycle)
        super().__init__(f"Dependency cycle through kernel {kernel_id}")


class UnsetDurationError(ExplorerError):
    """A kernel reached reconstruction without durations."""

    def __init__(self, kernel_id: int) -> None:
        self.kernel_id = kernel_id
        super().__init__(f"Kernel {kernel_id} has no duration set")
