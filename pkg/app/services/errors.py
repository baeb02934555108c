from __future__ import annotations

from typing import Any


class PlaError(Exception):
    """Base class for every error raised by the toolkit."""


class DomainError(PlaError, ValueError):
    pass


class DegenerateGeometryError(DomainError):
    pass


class NumericalFailureError(PlaError, RuntimeError):
    def __init__(self, message: str, diagnostics: dict[str, Any] | None = None) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics or {}

    def __str__(self) -> str:
        base = super().__str__()
        if not self.diagnostics:
            return base
        details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
        return f"{base} ({details})"


class ConfigError(PlaError):
    def __init__(self, problems: list[tuple[str, str]]) -> None:
        self.problems = problems
        super().__init__("; ".join(f"{loc}: {msg}" for loc, msg in problems))
