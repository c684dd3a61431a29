"""Exception hierarchy shared across nvxsim modules."""


class NvxError(Exception):
    """Base class for every error raised by nvxsim."""


# platform


class AbiError(NvxError):
    """An ABI descriptor file is malformed or violates a table invariant."""


class UnknownSyscall(NvxError):
    def __init__(self, raw_number: int, platform: str = "?"):
        super().__init__(f"unknown syscall number {raw_number:#x} on {platform}")
        self.raw_number = raw_number
        self.platform = platform


class UnknownFlagBits(NvxError):
    def __init__(self, residue: int, table: str = "?"):
        super().__init__(f"flag bits {residue:#x} not in table {table}")
        self.residue = residue
        self.table = table


class UnknownType(NvxError):
    def __init__(self, field: str, type_name: str):
        super().__init__(f"field {field!r} has unknown type {type_name!r}")
        self.field = field
        self.type_name = type_name


class InvalidStructDef(NvxError):
    """Bitfields, unions, packed structs and malformed field lists."""


class MismatchedDef(NvxError):
    pass


# canonical


class CanonicalizationError(NvxError):
    pass


class PathEscape(CanonicalizationError):
    def __init__(self, path: str, root: str):
        super().__init__(f"path {path!r} resolves outside application root {root!r}")
        self.path = path
        self.root = root


# rccom


class FrameError(NvxError):
    pass


class BadMagic(FrameError):
    pass


class BadVersion(FrameError):
    pass


class Truncated(FrameError):
    pass


class ProtocolError(NvxError):
    pass


class VersionMismatch(ProtocolError):
    pass


class PeerDisconnected(NvxError):
    pass


# harness


class ConfigError(NvxError):
    pass


class UnrenderableIntent(NvxError):
    pass


class BadTrigger(NvxError):
    pass


# gadgets


class UnpairedLabel(NvxError):
    pass


class GadgetInputError(NvxError):
    """Malformed pointer or gadget dump."""
