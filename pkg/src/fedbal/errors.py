"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates an operation's precondition."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


class ConfigError(ValueError):
    """A configuration document is malformed or names an unknown key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
