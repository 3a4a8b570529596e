"""Exception hierarchy.

CLI exit codes are derived from the base class: ``DataError`` subclasses
map to 2, ``ProviderError`` subclasses to 3.
"""


class PropGraphError(Exception):
    exit_code = 2


class DataError(PropGraphError):
    exit_code = 2


class ProviderError(PropGraphError):
    exit_code = 3


class DanglingReferenceError(DataError):
    def __init__(self, kind: str, missing_id: str):
        super().__init__(f"dangling {kind} reference: {missing_id!r}")
        self.kind = kind
        self.missing_id = missing_id


class DimensionMismatchError(DataError):
    pass


class EmptyCorpusError(DataError):
    pass


class UnknownNodeError(DataError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return Exception.__str__(self)


class EmptyInputError(DataError, ValueError):
    pass


class ZeroVectorError(DataError, ValueError):
    pass


class MalformedResponseError(DataError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class EmptyEntitiesError(MalformedResponseError):
    pass


class AllPassagesFailedError(DataError):
    pass


class SeedError(DataError, ValueError):
    pass


class EmptySubgraphError(DataError):
    pass


class PathGraphMismatchError(DataError):
    pass


class IndexIntegrityError(DataError):
    pass


class ConfigError(DataError, ValueError):
    pass


class EndpointUnreachableError(ProviderError):
    retryable = True


class DimensionDriftError(ProviderError):
    pass
