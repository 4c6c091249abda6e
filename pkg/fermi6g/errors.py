class Fermi6GError(Exception):
    """Base class for every error raised by the simulator and its tooling."""
    pass

class ConfigError(Fermi6GError):
    """An invalid experiment configuration. Names the offending key."""
    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        self.detail = message
        if line is not None:
            message = f"Config Error on line {line}: {message}"
        else:
            message = f"Config Error: {message}"
        super().__init__(message)

class DomainError(Fermi6GError, ValueError):
    """A scoring formula was called outside its mathematical domain."""
    pass

class ConsistencyError(Fermi6GError, ValueError):
    """Counters that contradict each other (e.g. more successes than attempts)."""
    pass

class ShapeError(Fermi6GError, ValueError):
    """An array with the wrong dimensionality reached the network."""
    pass

class LookupFailure(Fermi6GError, KeyError):
    """An unknown agent id or channel index."""
    def __str__(self):
        return str(self.args[0]) if self.args else ""

class TrainingFault(Fermi6GError):
    """A learner update produced a non-finite loss; the batch is discarded."""
    pass

class SecAggError(Fermi6GError):
    pass

class KeyAgreementError(SecAggError):
    """A public key that cannot be used for X25519 agreement."""
    pass

class RoundAbort(SecAggError):
    """A secure aggregation round that cannot release an aggregate."""
    def __init__(self, round_number, reason):
        self.round_number = round_number
        self.reason = reason
        super().__init__(f"Round {round_number} aborted: {reason}")

class ComparisonError(Fermi6GError):
    """Run directories whose metrics cannot be compared."""
    pass

class RunDirectoryError(Fermi6GError):
    """An output directory that already holds a run, or cannot be written."""
    pass
