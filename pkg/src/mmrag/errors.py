"""Exception hierarchy.

Every error carries a short ``code`` that the CLI prints as a greppable
prefix (``ERROR <code>: <message>``).
"""

from __future__ import annotations


class MMRagError(Exception):
    code = "E_INTERNAL"


# content model
class SchemaError(MMRagError):
    code = "E_SCHEMA"


class OrderError(MMRagError):
    code = "E_ORDER"


class RaggedTableError(MMRagError):
    code = "E_RAGGED_TABLE"


class DuplicateUnitError(MMRagError):
    code = "E_DUPLICATE_UNIT"


# model gateway
class ModelTransportError(MMRagError):
    code = "E_TRANSPORT"


class MalformedReplyError(MMRagError):
    code = "E_MALFORMED_REPLY"


class ContextTooLargeError(MMRagError):
    code = "E_CONTEXT_TOO_LARGE"


class EmptyInputError(MMRagError):
    code = "E_EMPTY_INPUT"


class MissingSlotError(MMRagError):
    code = "E_MISSING_SLOT"


class ProfileError(MMRagError):
    code = "E_PROFILE"


# index
class IndexFormatError(MMRagError):
    code = "E_INDEX_FORMAT"


class VersionError(IndexFormatError):
    code = "E_VERSION"


class ChecksumError(IndexFormatError):
    code = "E_CHECKSUM"


class IndexConsistencyError(MMRagError):
    code = "E_INDEX_CONSISTENCY"


# retrieval / synthesis
class EmptyQueryError(MMRagError):
    code = "E_EMPTY_QUERY"


class DimMismatchError(MMRagError):
    code = "E_DIM_MISMATCH"


class DanglingKeyError(MMRagError):
    code = "E_DANGLING_KEY"


class ConfigError(MMRagError):
    code = "E_CONFIG"
