"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class InsufficientRing(ValueError):
    """Fewer HSDirs on the ring than a lookup needs."""


class NoDataError(LookupError):
    """A consensus query fell outside the archive's coverage."""


class NotFoundError(LookupError):
    pass


class ArchiveError(ValueError):
    """Base for consensus archive ingestion failures.

    ``line`` is the 1-based line number in the source stream, if known.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParseError(ArchiveError):
    pass


class OrderingError(ArchiveError):
    pass


class ConstraintError(ArchiveError):
    pass


class ConfigError(ValueError):
    """Invalid simulator or detector configuration.

    ``fields`` lists every offending field name.
    """

    def __init__(self, problems):
        self.problems = dict(problems)
        self.fields = sorted(self.problems)
        detail = "; ".join(f"{k}: {v}" for k, v in sorted(self.problems.items()))
        super().__init__(f"invalid configuration ({detail})")


class GiveUpError(RuntimeError):
    pass
