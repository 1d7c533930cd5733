"""Compensated (Neumaier) summation, elementwise over numpy arrays."""

import numpy as np


class CompensatedSum:
    """Running elementwise sum whose rounding error does not grow with N.

    >>> acc = CompensatedSum(())
    >>> for v in [1e16, 1.0, -1e16]:
    ...     acc.add(v)
    >>> float(acc.value)
    1.0
    """

    def __init__(self, shape, dtype=np.float64):
        self._sum = np.zeros(shape, dtype=dtype)
        self._comp = np.zeros(shape, dtype=dtype)

    def add(self, values):
        values = np.asarray(values, dtype=self._sum.dtype)
        total = self._sum + values
        big = np.abs(self._sum) >= np.abs(values)
        self._comp += np.where(big, (self._sum - total) + values,
                               (values - total) + self._sum)
        self._sum = total

    @property
    def value(self):
        return self._sum + self._comp


def compensated_total(values, axis=0):
    """Compensated sum of `values` along `axis`, processed in index order."""
    values = np.moveaxis(np.asarray(values, dtype=np.float64), axis, 0)
    acc = CompensatedSum(values.shape[1:])
    for row in values:
        acc.add(row)
    return acc.value
