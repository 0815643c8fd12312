"""Exception hierarchy shared by all martsia modules."""


class MartsiaError(Exception):
    """Base class for every error raised by this package."""


# policy language

class PolicyError(MartsiaError):
    pass


class PolicySyntaxError(PolicyError):
    """Malformed policy text. ``offset`` is the byte offset of the offending token."""

    def __init__(self, message, offset, text=None):
        self.offset = offset
        self.text = text
        super().__init__(f"{message} (at byte {offset})")


class InvalidInstanceId(PolicyError):
    pass


class UnknownAuthority(PolicyError):
    pass


class ThresholdTooLarge(PolicyError):
    pass


# secret sharing / ABE

class FieldTooSmall(MartsiaError):
    pass


class NamespaceMismatch(MartsiaError):
    pass


class UnknownAttribute(MartsiaError):
    pass


class MissingAuthorityPublic(MartsiaError):
    pass


class MixedGid(MartsiaError):
    pass


# envelope

class Unqualified(MartsiaError):
    """The reader's keyring does not satisfy the slice policy."""


class IntegrityError(MartsiaError):
    """AEAD authentication failed: tampering, wrong key, or a collusion attempt."""


class UnknownSliceId(MartsiaError):
    pass


class MalformedEnvelope(MartsiaError):
    def __init__(self, path, detail):
        self.path = path
        super().__init__(f"{path}: {detail}")


class SliceError(MartsiaError):
    """Wraps a policy or crypto error raised while sealing one slice."""

    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(f"slice {index}: {cause}")


# content-addressed store

class NotFound(MartsiaError):
    pass


class IntegrityFault(MartsiaError):
    pass


class StorageFull(MartsiaError):
    pass


# ledger

class LedgerError(MartsiaError):
    pass


class BadSignature(LedgerError):
    pass


class InvalidTransition(LedgerError):
    pass


class NotACertifier(InvalidTransition):
    pass


# authority network

class ProtocolError(MartsiaError):
    """An ERROR frame received from an authority, or a malformed frame."""

    def __init__(self, code, detail=""):
        self.code = code
        self.detail = detail
        super().__init__(f"{code}: {detail}" if detail else code)


class NoRegisteredKey(MartsiaError):
    pass


class NoKeyMaterial(MartsiaError):
    """No authority has posted key components for the reader."""


class AuthorityUnreachable(MartsiaError):
    pass
