"""Class-imbalance-aware federated learning simulator (FedBal)."""

from fedbal.errors import ConfigError, InvalidArgumentError, NumericError

__version__ = "0.1.0"

__all__ = ["ConfigError", "InvalidArgumentError", "NumericError", "__version__"]
