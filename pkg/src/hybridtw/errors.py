"""Exception type shared by all modules.

Every failure carries a short machine-readable ``code`` (``dangling-node``,
``fault-at-node``, ``path-explosion`` ...) so callers and the CLI can branch
on the failure kind without parsing messages.
"""


class ModelError(ValueError):
    """Validation or runtime failure with a stable diagnostic code."""

    def __init__(self, code: str, message: str = "", line: int | None = None):
        self.code = code
        self.line = line
        text = f"[{code}] {message}" if message else f"[{code}]"
        if line is not None:
            text = f"line {line}: {text}"
        super().__init__(text)
