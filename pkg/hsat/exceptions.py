class HSATError(Exception):
    pass


class ConfigurationError(HSATError):
    pass


class DataError(HSATError):
    pass


class NumericError(HSATError):
    pass
