"""Neural PDE pricing of vanilla and barrier options under the two-factor Bergomi model."""

from .options import KNOCK_IN_KINDS, OptionKind

__version__ = "0.1.0"

__all__ = ["KNOCK_IN_KINDS", "OptionKind", "__version__"]
