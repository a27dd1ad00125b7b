"""Exception hierarchy shared by all sympfold modules."""


class SympfoldError(Exception):
    """Base class for every error raised by this package."""


class EmptySet(SympfoldError):
    pass


class MaskRejectionExhausted(SympfoldError):
    pass


class DomainViolation(SympfoldError):
    pass


class BadDimension(SympfoldError):
    pass


class ScaleTooSmall(SympfoldError):
    pass


class InsufficientScales(SympfoldError):
    pass


class PairBudgetExceeded(SympfoldError):
    pass


class NoDirectionFound(SympfoldError):
    pass


class CertificationFailed(SympfoldError):
    """A numerical certificate did not hold.

    ``stage`` names the pipeline stage, ``check`` the failing check and
    ``witness`` carries whatever evidence the check produced (a violating
    pair, a residual, ...).
    """

    def __init__(self, message, stage=None, check=None, witness=None):
        super().__init__(message)
        self.stage = stage
        self.check = check
        self.witness = witness


class IntegrationFailure(SympfoldError):
    pass


class BadAreas(SympfoldError):
    pass


class EmbeddingCertificationFailed(CertificationFailed):
    pass


class NoAdmissibleTime(CertificationFailed):
    """No scanned flow time separates the folded half from the other half."""


class SerializationError(SympfoldError):
    pass
