"""banditmt: seq2seq translation policies trained from bandit and logged feedback."""

__version__ = "0.1.0"
