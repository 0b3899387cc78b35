"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid distribution parameter (e.g. a non-finite tilt)."""


class DimensionError(ValueError):
    """Array shapes that do not agree with the design layout."""


class NumericError(ArithmeticError):
    """Non-finite values or a failed factorisation."""


class ConfigurationError(ValueError):
    """Sampler or run configuration that cannot be executed."""


class ValidationError(ValueError):
    """Input data failed validation.

    ``issues`` holds ``(source, row, message)`` triples; ``row`` is the
    1-based line number in the source file (header is line 1) or ``None``
    when the problem is not tied to one row.
    """

    def __init__(self, issues):
        if isinstance(issues, str):
            issues = [(None, None, issues)]
        self.issues = list(issues)
        super().__init__(self.format())

    def format(self, limit=20):
        lines = []
        for source, row, message in self.issues[:limit]:
            where = ""
            if source is not None:
                where = f"{source}"
                if row is not None:
                    where += f":{row}"
                where += ": "
            lines.append(f"{where}{message}")
        extra = len(self.issues) - limit
        if extra > 0:
            lines.append(f"... and {extra} more")
        return "\n".join(lines)
