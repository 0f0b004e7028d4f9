"""
Exceptions raised by cellrcov. Every error derives from :class:`CellRCovError`, which can carry the name of the
pipeline stage it was raised in (see :func:`stage`), so that messages from deep inside the estimator still tell the
user where things went wrong.
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
from contextlib import contextmanager
from typing import Sequence


class CellRCovError(Exception):

    """Base class for all cellrcov errors."""

    def __init__(self, message: str = "", stage: str = None):
        super().__init__(message)
        self.message = message
        self.stage = stage

    def __str__(self):
        return f"[{self.stage}] {self.message}" if self.stage is not None else self.message


@contextmanager
def stage(name: str):
    """
    Context manager that tags any :class:`CellRCovError` escaping its block with the given stage name (unless an
    inner stage already tagged it).

    :param name: name of the pipeline stage, e.g. "standardize" or "mcd"
    """
    try:
        yield
    except CellRCovError as error:
        if error.stage is None:
            error.stage = name
        raise


# ------------------------------------------------ Value errors ------------------------------------------------


class DegenerateScale(CellRCovError, ValueError):

    """
    The M-scale equation has no positive root (more than half of the values are exactly zero), or a column does not
    have two distinct observed values.

    :ivar column: index of the offending column, if any
    """

    def __init__(self, message: str = "", column: int = None, stage: str = None):
        self.column = column
        if column is not None:
            message = f"column {column}: {message}"
        super().__init__(message, stage)


class DegenerateColumn(DegenerateScale):
    """The residual M-scale of a column is degenerate."""


class EmptyRow(CellRCovError, ValueError):
    """A case has no observed cells."""


class InvalidDelta(CellRCovError, ValueError):
    """A ridge parameter outside of (0, 1]."""


class TooFewCases(CellRCovError, ValueError):
    """Not enough cases for the requested estimate."""


class InsufficientData(CellRCovError, ValueError):
    """A column (or pair of columns) has too few observed cells to estimate anything."""


class SingleClass(CellRCovError, ValueError):
    """ROC analysis needs both positive and negative labels."""


class ConstantInput(CellRCovError, ValueError):
    """A rank correlation of a constant vector is undefined."""


class DimensionMismatch(CellRCovError, ValueError):
    """Inputs do not have compatible shapes or columns."""


class SingleCaseFold(CellRCovError, ValueError):
    """A cross-validation fold is too small to compute rank correlations."""


class InfeasibleNaRate(CellRCovError, ValueError):
    """Missing cells cannot be placed while keeping every row and column partially observed."""


class ScenarioSyntaxError(CellRCovError, ValueError):
    """A scenario grid expression could not be parsed."""


# ---------------------------------------------- Numerical errors ----------------------------------------------


class RankDeficient(CellRCovError, ArithmeticError):
    """The loadings restricted to the observed coordinates of a case do not have full column rank."""


class NoConvergence(CellRCovError, ArithmeticError):

    """
    An iterative algorithm stopped at its iteration cap.

    :ivar trace: the objective values recorded up to that point
    """

    def __init__(self, message: str = "", trace: Sequence[float] = (), stage: str = None):
        super().__init__(message, stage)
        self.trace = list(trace)


class SingularScatter(CellRCovError, ArithmeticError):
    """The cases in an MCD support lie in a lower-dimensional affine subspace."""


class DegenerateNormalizer(CellRCovError, ArithmeticError):
    """All cases were fully downweighted, so the residual covariance has no normalizer."""


class NotPositiveDefinite(CellRCovError, ArithmeticError):
    """A matrix required to be positive definite is not."""


class BlockNotPD(NotPositiveDefinite):
    """A diagonal block of a joint covariance used for canonical correlation is not positive definite."""
