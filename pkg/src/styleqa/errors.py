"""Exception hierarchy shared across the pipeline and the gateway."""


class StyleQAError(Exception):
    """Base class for all library errors."""


class ConfigError(StyleQAError):
    pass


class StageInputMissing(StyleQAError):
    pass


# --- style model ---

class RegistryMismatch(StyleQAError):
    pass


class UnparsableLabel(StyleQAError):
    pass


class EmptyInput(StyleQAError):
    pass


# --- style tree ---

class UnknownCluster(StyleQAError):
    pass


class SchemaVersionMismatch(StyleQAError):
    pass


class CorruptDocument(StyleQAError):
    pass


# --- llm client ---

class BackendError(StyleQAError):
    pass


class BackendTimeout(BackendError):
    pass


class UnknownAdapter(BackendError):
    pass


class RateLimited(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


# --- retrieval ---

class EmptyArticle(StyleQAError):
    pass


class UnknownAccount(StyleQAError):
    pass


# --- corpus pipeline ---

class MalformedGeneration(StyleQAError):
    pass


class UnparsableJudgment(StyleQAError):
    pass


class UnscoredInstance(StyleQAError):
    pass


class EmptyExemplarPool(StyleQAError):
    pass


# --- preference pairs / registry ---

class NoTree(StyleQAError):
    pass


class EmptyChosenSet(StyleQAError):
    pass


class EmptyPairs(StyleQAError):
    pass


class DigestMismatch(StyleQAError):
    pass


# --- eval harness ---

class MissingSystem(StyleQAError):
    pass


class EmptyRecords(StyleQAError):
    pass
