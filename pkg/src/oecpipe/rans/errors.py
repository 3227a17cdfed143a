"""Exceptions raised by the rANS coder."""


class RansError(ValueError):
    """Base class for coder failures."""


class InvalidTableError(RansError):
    pass


class UncodableSymbolError(RansError):
    """A symbol index is out of range or has zero frequency in its table."""

    def __init__(self, position, symbol, reason="zero frequency"):
        self.position = position
        self.symbol = symbol
        super().__init__(f"symbol {symbol} at position {position} is uncodable ({reason})")


class TruncatedStreamError(RansError):
    pass


class CorruptStreamError(RansError):
    """Decoder finished in a state the encoder could not have produced."""
