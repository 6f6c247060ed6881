"""Exception hierarchy shared by every trustwire module.

Protocol failures derive from :class:`ProtocolError`; the class name is the
stable "error class" written to audit logs and simulation reports.
"""


class TrustwireError(Exception):
    """Root of all trustwire exceptions."""

    @property
    def error_class(self) -> str:
        return type(self).__name__


# -- wire codec ------------------------------------------------------------

class CodecError(TrustwireError):
    pass


class BadMagicError(CodecError):
    pass


class TruncatedError(CodecError):
    pass


class UnknownTagError(CodecError):
    pass


class LengthError(CodecError):
    pass


# -- keys / registry -------------------------------------------------------

class KeyMaterialError(TrustwireError):
    """Base for key material and registry problems."""


class KeyFormatError(KeyMaterialError):
    pass


class DuplicateAgencyError(KeyMaterialError):
    pass


class UnknownAgencyError(KeyMaterialError):
    pass


# -- protocol --------------------------------------------------------------

class ProtocolError(TrustwireError):
    """A message failed one of the handshake checks.

    ``source`` is filled in once the claimed source agency is known, so the
    audit log can name the peer.
    """

    def __init__(self, message: str = "", source: str | None = None):
        super().__init__(message)
        self.source = source


class DecodeError(ProtocolError):
    pass


class AuthenticationError(ProtocolError):
    pass


class IntegrityError(ProtocolError):
    pass


class AgencyVerificationError(ProtocolError):
    pass


class RequestCorrelationError(ProtocolError):
    pass


# -- trust plane -----------------------------------------------------------

class NoTrustRecordError(ProtocolError):
    pass


class UnknownSubjectError(TrustwireError):
    pass


class ArityError(ProtocolError):
    pass


# -- agency node / users ---------------------------------------------------

class DuplicateUserError(TrustwireError):
    pass


class AuthError(TrustwireError):
    pass


# -- harness ---------------------------------------------------------------

class ConfigError(TrustwireError):
    pass
