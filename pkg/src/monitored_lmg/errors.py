class IntegrationError(RuntimeError):
    """A solver produced non-finite or unstable output; retry with a smaller dt."""


class LindbladStepError(IntegrationError):
    pass


class EnergyDriftError(IntegrationError):
    pass


class InconclusiveRunError(RuntimeError):
    """Too many trajectories are still unabsorbed to estimate p_plus."""

    def __init__(self, unabsorbed_fraction: float, limit: float):
        self.unabsorbed_fraction = unabsorbed_fraction
        self.limit = limit
        super().__init__(
            f"unabsorbed fraction {unabsorbed_fraction:.4f} exceeds {limit:.4f}; increase t_final"
        )


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")
