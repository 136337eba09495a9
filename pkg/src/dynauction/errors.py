"""Exception types raised across the package."""


class DynAuctionError(Exception):
    """Base class for package errors."""


class RegularityViolation(DynAuctionError):
    pass


class InsufficientGrid(DynAuctionError):
    pass


class QuadratureFailure(DynAuctionError):
    pass


class CapExceeded(DynAuctionError):
    pass


class NoSolutionFound(DynAuctionError):
    pass


class CertificateViolation(DynAuctionError):
    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class DegenerateSystem(DynAuctionError):
    pass


class RankOutOfRange(DynAuctionError):
    pass


class ConfigError(DynAuctionError):
    pass


class ScriptError(DynAuctionError):
    pass


class CensoredCutoff(DynAuctionError):
    pass


class MonotonicityViolation(DynAuctionError):
    pass
