EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_GATEWAY = 4
EXIT_INTERNAL = 5


class MemweaveError(Exception):
    exit_code = EXIT_INTERNAL


# ===== Config =====
class ConfigError(MemweaveError):
    exit_code = EXIT_CONFIG


# ===== Data =====
class DataError(MemweaveError):
    exit_code = EXIT_DATA


class DatasetFormatError(DataError):
    def __init__(self, path: str, location: str, detail: str):
        super().__init__(f"{path} [{location}]: {detail}")
        self.path = path
        self.location = location


class UnmappableCategoryError(DataError):
    def __init__(self, dataset: str, raw_type: str):
        super().__init__(f"Cannot unify {dataset} question type {raw_type!r}")
        self.raw_type = raw_type


class UnsupportedVersionError(DataError):
    pass


class StoreCorruptionError(DataError):
    pass


# ===== Gateway =====
class GatewayError(MemweaveError):
    exit_code = EXIT_GATEWAY


class GatewayUnavailableError(GatewayError):
    pass


class FixtureMissingError(GatewayError):
    def __init__(self, key: str):
        super().__init__(f"No mock fixture for request {key}; rerun with --record-fixtures to record it")
        self.key = key


class StructuredOutputError(GatewayError):
    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


class EmbeddingUnavailableError(GatewayError):
    pass


# ===== Internal =====
class DimensionMismatchError(MemweaveError):
    pass


class PoolConsistencyError(MemweaveError):
    pass
