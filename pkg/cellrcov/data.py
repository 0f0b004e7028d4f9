"""
The :class:`DataMatrix`, an n × p matrix of values together with a mask of observed cells, which is the universal
input of cellrcov. Missing cells are stored as NaN in :attr:`DataMatrix.values` and are never read by the estimators:
they only ever see :meth:`DataMatrix.filled` values multiplied by the mask.
"""

#  ++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++   #
#  This file is part of cellrcov (cellwise Robust Regularized Covariance)                         #
#  Copyright © 2025 The cellrcov developers.                                                     #
#                                                                                                 #
#  This program is free software: you can redistribute it and/or modify it under the terms of     #
#  the GNU General Public License as published by the Free Software Foundation, either version    #
#  3 of the License, or (at your option) any later version.                                       #
#                                                                                                 #
#  This program is distributed in the hope that it will be useful, but WITHOUT ANY WARRANTY;      #
#  without even the implied warranty of MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.      #
#  See the GNU General Public License for more details.                                           #
#                                                                                                 #
#  You should have received a copy of the GNU General Public License along with this program.     #
#  If not, see <http://www.gnu.org/licenses/>.                                                    #
#  ++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++++   #

from __future__ import annotations
from typing import Sequence
import numpy as np
import pandas as pd
from .errors import DimensionMismatch, InsufficientData


class DataMatrix:
    """
    An n × p data matrix with a missingness mask.

    :param values: array-like of shape (n, p). NaN entries are treated as missing unless a mask is given.
    :param mask: optional boolean array of shape (n, p), True where a cell is observed. Values under a False mask
        entry are discarded.
    :param columns: optional column names
    :ivar values: float array with NaN in every missing cell
    :ivar mask: boolean array, True where observed
    :ivar columns: list of column names
    """

    def __init__(self, values, mask=None, columns: Sequence[str] = None):
        values = np.array(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise DimensionMismatch("A data matrix must be two-dimensional.")
        if mask is None:
            mask = np.isfinite(values)
        else:
            mask = np.array(mask, dtype=bool)
            if mask.shape != values.shape:
                raise DimensionMismatch("Mask shape {} does not match data shape {}.".format(mask.shape, values.shape))
            mask &= np.isfinite(values)
        values[~mask] = np.nan
        self.values = values
        self.mask = mask
        self.columns = list(columns) if columns is not None else [f"V{j + 1}" for j in range(values.shape[1])]
        if len(self.columns) != values.shape[1]:
            raise DimensionMismatch("Got {} column names for {} columns.".format(len(self.columns), values.shape[1]))

    @classmethod
    def from_csv(cls, path: str, na_token: str = "NA", drop_columns: Sequence[str] = ()) -> DataMatrix:
        """
        Reads a comma-separated file with a header row. Cells equal to `na_token` (or empty) are missing.

        :param path: path of the CSV file
        :param na_token: string marking a missing cell
        :param drop_columns: columns to leave out (e.g. a label column)
        :raises ValueError: if a cell is neither numeric nor the missing token
        """
        frame = pd.read_csv(path, na_values=[na_token, ""], keep_default_na=False)
        frame = frame.drop(columns=list(drop_columns))
        return cls.from_frame(frame)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> DataMatrix:
        non_numeric = [column for column in frame.columns if not pd.api.types.is_numeric_dtype(frame[column])]
        if len(non_numeric) > 0:
            raise ValueError("Non-numeric values in column(s) {}.".format(", ".join(map(str, non_numeric))))
        return cls(frame.to_numpy(dtype=float), columns=[str(c) for c in frame.columns])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, columns=self.columns)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def complete(self) -> bool:
        """True if no cell is missing."""
        return bool(self.mask.all())

    def filled(self, value: float = 0.0) -> np.ndarray:
        """Copy of the values with every missing cell set to `value`."""
        out = self.values.copy()
        out[~self.mask] = value
        return out

    def rows(self, index) -> DataMatrix:
        """The sub-matrix made of the given rows."""
        return DataMatrix(self.values[index], self.mask[index], self.columns)

    def column_subset(self, index) -> DataMatrix:
        index = np.arange(self.p)[index]
        return DataMatrix(self.values[:, index], self.mask[:, index], [self.columns[j] for j in index])

    def scaled(self, factors: np.ndarray) -> DataMatrix:
        """Divides column j by factors[j]; missing cells stay missing."""
        return DataMatrix(self.values / np.asarray(factors, dtype=float)[None, :], self.mask, self.columns)

    def hstack(self, other: DataMatrix) -> DataMatrix:
        """Concatenates the columns of two matrices with the same number of cases."""
        if other.n != self.n:
            raise DimensionMismatch("Cannot combine {} cases with {} cases.".format(self.n, other.n))
        return DataMatrix(np.hstack([self.values, other.values]), np.hstack([self.mask, other.mask]),
                          self.columns + other.columns)

    def check_partially_observed(self) -> None:
        """
        Makes sure every row and every column contains at least one observed cell.

        :raises InsufficientData: naming the first empty column or row
        """
        empty_columns = np.flatnonzero(~self.mask.any(axis=0))
        if len(empty_columns) > 0:
            raise InsufficientData("Column {} (\"{}\") has no observed cells.".format(
                empty_columns[0], self.columns[empty_columns[0]]))
        empty_rows = np.flatnonzero(~self.mask.any(axis=1))
        if len(empty_rows) > 0:
            raise InsufficientData("Row {} has no observed cells.".format(empty_rows[0]))

    def __repr__(self):
        return "DataMatrix(n={}, p={}, missing={})".format(self.n, self.p, int((~self.mask).sum()))


def as_data_matrix(x) -> DataMatrix:
    """Wraps arrays and data frames as :class:`DataMatrix`; passes DataMatrix objects through."""
    if isinstance(x, DataMatrix):
        return x
    if isinstance(x, pd.DataFrame):
        return DataMatrix.from_frame(x)
    return DataMatrix(x)
