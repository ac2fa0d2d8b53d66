"""Learning from message feeds when the receiver forgets who said what."""

__version__ = "0.1.0"
