"""Local differential privacy mechanisms for mixed numeric/categorical data,
private empirical risk minimization, and exact privacy audits."""
from .core import (
    AttributeSpec,
    LDPError,
    PrivacyBudget,
    RandomSource,
    Schema,
)

__version__ = "0.1.0"

__all__ = ["AttributeSpec", "LDPError", "PrivacyBudget", "RandomSource", "Schema"]
