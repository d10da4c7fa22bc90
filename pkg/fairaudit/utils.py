# -*- coding: utf-8 -*-
"""Provides utility functions, classes, and constants.

Useful functions are put here in order to prevent circular importing
within the other files.

Attributes
----------
WORKER_ENVIRONMENT_VARIABLE : str
    The name of the environment variable that sets the default number of
    worker threads used by the bootstrap and the validation harness.
    The default is 'FAIRAUDIT_WORKERS'.

"""


import functools
import math
import os

import numpy as np
import pandas as pd


WORKER_ENVIRONMENT_VARIABLE = 'FAIRAUDIT_WORKERS'


class AuditError(Exception):
    """Base exception for all errors raised by fairaudit."""


class AuditInputError(AuditError, ValueError):
    """Raised when input data or a run configuration is invalid."""


class DegenerateDataError(AuditError, ArithmeticError):
    """Raised when the data make a requested quantity numerically undefined."""


def doc_lru_cache(function=None, **lru_cache_kwargs):
    """
    Memoizes a function with functools.lru_cache, keeping its name and docstring for autoapi.

    Works both bare (``@doc_lru_cache``) and with lru_cache's keyword
    arguments (``@doc_lru_cache(maxsize=32)``). Arguments must be hashable.

    """

    def decorate(func):
        return functools.wraps(func)(functools.lru_cache(**lru_cache_kwargs)(func))

    if function is None:
        return decorate
    return decorate(function)


def get_worker_count(workers=None):
    """
    Returns the number of worker threads to use.

    Parameters
    ----------
    workers : int, optional
        The requested number of workers. If None (default), the value of the
        environment variable named by WORKER_ENVIRONMENT_VARIABLE is used, and
        if that is not set, 1 is used.

    Returns
    -------
    int
        The number of workers, always >= 1.

    Raises
    ------
    AuditInputError
        Raised if the requested or environment value is not a positive integer.

    """

    if workers is None:
        value = os.environ.get(WORKER_ENVIRONMENT_VARIABLE, '1').strip() or '1'
        source = f'environment variable {WORKER_ENVIRONMENT_VARIABLE}'
    else:
        value = workers
        source = 'workers'

    try:
        count = int(value)
    except (TypeError, ValueError):
        raise AuditInputError(f'{source} must be a positive integer, not {value!r}.')
    if count < 1:
        raise AuditInputError(f'{source} must be a positive integer, not {value!r}.')

    return count


def validate_level(alpha, name='alpha'):
    """
    Ensures that a significance level lies in the open interval (0, 1).

    Parameters
    ----------
    alpha : float
        The level to check.
    name : str, optional
        The name used in the error message. Default is 'alpha'.

    Returns
    -------
    float
        The input level as a float.

    Raises
    ------
    AuditInputError
        Raised if alpha is not within (0, 1).

    """

    try:
        level = float(alpha)
    except (TypeError, ValueError):
        raise AuditInputError(f'{name} must be a number in (0, 1), not {alpha!r}.')
    if not 0 < level < 1:
        raise AuditInputError(f'{name} must be in (0, 1), not {alpha!r}.')

    return level


def parse_weight(value):
    """
    Converts a shrinkage weight to a float, allowing infinity.

    Parameters
    ----------
    value : float or str
        The weight. The strings 'inf', 'infinity', and 'Infinity' are
        all accepted as infinity.

    Returns
    -------
    float
        The positive weight.

    Raises
    ------
    AuditInputError
        Raised if the weight is not positive.

    """

    try:
        weight = float(value)
    except (TypeError, ValueError):
        raise AuditInputError(f'w0 must be a positive number or "inf", not {value!r}.')
    if math.isnan(weight) or weight <= 0:
        raise AuditInputError(f'w0 must be a positive number or "inf", not {value!r}.')

    return weight


def series_to_numpy(series, dtype=float):
    """
    Tries to convert a pandas Series to a numpy array with the desired dtype.

    Parameters
    ----------
    series : pd.Series
        The series to convert to numpy with the desired dtype.
    dtype : type, optional
        The dtype to use in the numpy array of the series. Default
        is float.

    Returns
    -------
    output : np.ndarray
        The series with the specified dtype.
    bad_rows : np.ndarray
        The integer positions of entries that could not be converted
        (missing or non-numeric). Empty if the conversion was clean.

    Notes
    -----
    Entries are first coerced with pd.to_numeric so that a single bad
    value does not hide the positions of the others; the caller decides
    how to report them.

    """

    if dtype == float:
        converted = pd.to_numeric(series, errors='coerce')
        output = np.asarray(converted.to_numpy(dtype=float, na_value=np.nan), dtype=float)
        bad_rows = np.flatnonzero(np.isnan(output))
    else:
        missing = series.isna().to_numpy()
        output = np.asarray(series.to_numpy(), dtype=dtype)
        bad_rows = np.flatnonzero(missing)

    return output, bad_rows


def readonly(array, dtype=float):
    """
    Returns a contiguous, non-writeable copy of the input array.

    Parameters
    ----------
    array : array-like
        The input data.
    dtype : type, optional
        The dtype of the output. Default is float.

    Returns
    -------
    output : np.ndarray
        The copied array with its writeable flag turned off.

    """

    output = np.array(array, dtype=dtype, copy=True)
    output.setflags(write=False)
    return output


def format_rows(rows, limit=10):
    """
    Formats a list of 0-based record indices for error messages.

    Parameters
    ----------
    rows : Sequence(int)
        The 0-based record indices.
    limit : int, optional
        The maximum number of indices to show before truncating. Default is 10.

    Returns
    -------
    str
        A comma-separated listing, truncated with the total count if needed.

    """

    rows = [int(row) for row in rows]
    text = ', '.join(str(row) for row in rows[:limit])
    if len(rows) > limit:
        text += f', ... ({len(rows)} total)'
    return text
