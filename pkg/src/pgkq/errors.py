"""Shared exception types.

ConfigError: bad user-facing configuration (shapes, ranges, unknown ids).
ContractError: an internal calling contract was violated (e.g. rewards
    evaluated twice, or a loss touched an episode it must not see).
NumericsError: a numerical routine left its valid regime (non-finite
    values, Cholesky failure after the jitter ladder, recombination that
    cannot match moments).
"""


class ConfigError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class NumericsError(RuntimeError):
    pass
