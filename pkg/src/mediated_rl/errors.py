"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid game or run configuration (caught before anything runs)."""


class ContractError(RuntimeError):
    """An operation was called outside its contract (programming error)."""


class UnsupportedGameError(ConfigError):
    """Requested an exact computation the game family does not support."""


class TrainingDiverged(RuntimeError):
    """A loss or gradient went non-finite; the run aborts with diagnostics."""
