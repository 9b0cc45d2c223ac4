"""Exception types shared across the package."""


class CotvqaError(Exception):
    """Base class for all package-specific errors."""


class CorpusError(CotvqaError):
    """Unreadable, malformed, or invariant-violating dataset content."""


class PromptError(CotvqaError):
    """A prompt or target string cannot be built from the given record."""


class BackendError(CotvqaError):
    """Invalid backend usage: bad handle, empty training data, broken checkpoint."""


class ExperimentError(CotvqaError):
    """An experiment cannot run: missing dependency, bad spec, backend failure."""


class ManifestError(CotvqaError):
    """Invalid run manifest or CLI configuration."""
