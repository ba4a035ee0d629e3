"""Error hierarchy shared across the toolkit.

Every declared failure mode derives from ToolkitError so callers (and the
command line driver) can catch a single type. Parsers are expected to be
total: any malformed input surfaces as one of these, never as a bare
IndexError or struct.error.
"""


class ToolkitError(Exception):
    """Base class for all declared errors."""


# ---- container / manifest / dex parsing ----

class NotAZip(ToolkitError):
    """Input bytes are not a readable ZIP archive."""


class MissingManifest(ToolkitError):
    """Archive has no AndroidManifest.xml entry."""


class MissingDex(ToolkitError):
    """Archive has no classes.dex entry."""


class EntryDecompressionFailure(ToolkitError):
    """A catalogued entry could not be decompressed."""

    def __init__(self, path, reason=""):
        msg = f"cannot read entry {path!r}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.path = path


class MalformedAxml(ToolkitError):
    """Binary XML chunk structure or string reference is invalid."""


class MalformedXml(ToolkitError):
    """Plain XML manifest failed to parse."""


class BadDexMagic(ToolkitError):
    """DEX header magic, version, or endian tag is unsupported."""


class TruncatedDex(ToolkitError):
    """A DEX structure runs past the end of the file."""


class InvalidIndex(ToolkitError):
    """An index or offset points outside its table."""

    def __init__(self, section, index):
        super().__init__(f"invalid index {index} in {section}")
        self.section = section
        self.index = index


class UnknownOpcode(ToolkitError):
    """Instruction byte falls in an unassigned opcode range."""

    def __init__(self, opcode):
        super().__init__(f"opcode 0x{opcode:02x} is not a defined instruction")
        self.opcode = opcode


# ---- feature pipeline ----

class EmptyCorpus(ToolkitError):
    """Vocabulary construction needs at least one app."""


class MissingFamily(ToolkitError):
    """An app lacks a vector for a requested feature family."""

    def __init__(self, app_id, family):
        super().__init__(f"app {app_id!r} has no {family} vector")
        self.app_id = app_id
        self.family = family


class FamilyMismatch(ToolkitError):
    """Two vectors being compared belong to different families or kinds."""


class SingleClassLabels(ToolkitError):
    """Classification metrics need both classes in the ground truth."""


class LengthMismatch(ToolkitError):
    """Paired prediction lists differ in length."""


# ---- classifier ----

class SingleClassTraining(ToolkitError):
    """Training labels contain only one class."""


class EmptyMatrix(ToolkitError):
    """Feature matrix has no rows or no columns."""


class BadModelFile(ToolkitError):
    """Serialized model or matrix file is corrupt or has the wrong magic."""


# ---- robust selection ----

class MissingFamilyMetric(ToolkitError):
    """Metric maps passed to family selection do not cover the same keys."""


class NoFamilySelected(ToolkitError):
    """The threshold eliminated every feature family."""


# ---- fixture serialization ----

class EmptyModel(ToolkitError):
    """Serializer needs at least one DEX model."""


class ModelTooLarge(ToolkitError):
    """Model exceeds the index widths of the minimal file layout."""


class UnserializableModel(ToolkitError):
    """Model violates a structural precondition of the serializer."""


# ---- corpus manifests ----

class MissingVtd(ToolkitError):
    """Labeling rule applied to a record without a detection count."""


class InvalidManifest(ToolkitError):
    """Corpus manifest violates a structural invariant."""
