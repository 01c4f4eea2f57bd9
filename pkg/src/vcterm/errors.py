"""Exception types shared across the package.

Exit-code convention for the command line tool: 0 success, 2 usage,
3 data errors, 4 numerical failures.
"""


class VctermError(Exception):
    exit_code = 1


class UsageError(VctermError):
    exit_code = 2


class DataError(VctermError):
    exit_code = 3


class NumericalError(VctermError):
    exit_code = 4
