"""Exception hierarchy. Every error raised by the package derives from MMRecError."""


class MMRecError(Exception):
    pass


# content understanding
class CaptionUnavailable(MMRecError):
    pass


class InvocationSkipped(MMRecError):
    pass


class CaptionTimeout(MMRecError):
    pass


class MalformedResponse(MMRecError):
    pass


# tokenization / profiles / features
class CorpusEmpty(MMRecError):
    pass


class StaleEvent(MMRecError):
    pass


class MissingLabel(MMRecError):
    pass


class UnknownItem(MMRecError):
    pass


# ranker
class IdOutOfRange(MMRecError):
    pass


class NonFiniteActivation(MMRecError):
    pass


class Diverged(MMRecError):
    pass


class CheckpointError(MMRecError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptChecksum(CheckpointError):
    pass


# evaluation
class DegenerateLabels(MMRecError):
    pass


class BasePerfect(MMRecError):
    pass


class UnknownFeatureGroup(MMRecError):
    pass


class MismatchedEvalSets(MMRecError):
    pass


class MissingArtifacts(MMRecError):
    pass


class ConfigError(MMRecError):
    pass
