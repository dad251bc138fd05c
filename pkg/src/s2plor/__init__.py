from .errors import (
    DegenerateDenominator,
    PreprocessingError,
    ProtocolAbort,
    S2plorError,
    TransportError,
    VerificationError,
)

__all__ = [
    "DegenerateDenominator",
    "PreprocessingError",
    "ProtocolAbort",
    "S2plorError",
    "TransportError",
    "VerificationError",
    "__version__",
]

__version__ = "0.1.0"
