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
import os
import sys
import tempfile
import functools
from typing import Callable
import numpy as np
from expenvelope.json_serializer import SavesToJSON


# ------------------------------------------- General Utilities ---------------------------------------------

# Define the data folder path (e.g. where settings are stored)
if os.getenv("CELLRCOV_DATA_DIR") is not None:
    cellrcov_data_path = os.path.expanduser(os.getenv("CELLRCOV_DATA_DIR"))
else:
    if sys.platform.startswith("win"):
        os_data_path = os.getenv("LOCALAPPDATA")
    elif sys.platform.startswith("darwin"):
        os_data_path = "~/Library/Application Support"
    else:
        # linux
        os_data_path = os.getenv("XDG_DATA_HOME", "~/.local/share")
    cellrcov_data_path = os.path.join(os.path.expanduser(os_data_path), "cellrcov")

if not os.path.exists(cellrcov_data_path):
    os.makedirs(cellrcov_data_path, exist_ok=True)


def resolve_path(path: str) -> str:
    """
    Resolves the given path based on a variety of prefixes.

    :param path: A path, possibly prefixed by "/", "~/", or "%DATA/". A prefix of "/" will be interpreted as an
        absolute path, a prefix of "~/" as relative to the user's home directory, a prefix of "%DATA/" as relative
        to the cellrcov data directory, and an unprefixed path as relative to the current working directory.
    :return: the resolved path
    """
    if path.startswith("%DATA/"):
        return os.path.join(cellrcov_data_path, path[6:])
    elif path.startswith("/") or path[1:].startswith(":\\"):
        return path
    elif path.startswith("~/"):
        return os.path.expanduser(path)
    else:
        # Unprefixed paths are relative to the working directory
        return os.path.join(os.getcwd(), path)


def memoize(obj: Callable) -> Callable:
    """
    Decorator used for memoization (see https://en.wikipedia.org/wiki/Memoization)

    :param obj: the function to be wrapped in a memoizer
    :return: the wrapped, memoized function
    """
    cache = obj.cache = {}

    @functools.wraps(obj)
    def memoizer(*args, **kwargs):
        key = str(args) + str(kwargs)
        if key not in cache:
            cache[key] = obj(*args, **kwargs)
        return cache[key]

    return memoizer


def write_atomically(path: str, write_function: Callable[[str], None]) -> None:
    """
    Writes a file by first writing to a temporary file in the same directory and then renaming it into place, so
    that readers never observe a half-written result.

    :param path: destination path
    :param write_function: function taking a path and writing the full contents there
    """
    path = os.path.abspath(path)
    directory = os.path.dirname(path)
    file_descriptor, temp_path = tempfile.mkstemp(prefix=".cellrcov-", dir=directory)
    os.close(file_descriptor)
    try:
        write_function(temp_path)
        os.replace(temp_path, path)
    finally:
        if os.path.exists(temp_path):
            os.remove(temp_path)


# ---------------------------------------- Randomness and Parallelism ---------------------------------------


def make_generator(seed: int | np.random.SeedSequence) -> np.random.Generator:
    """
    Returns a counter-based (Philox) generator, so that streams are reproducible across platforms.

    :param seed: an integer seed or an already spawned SeedSequence
    """
    seed_sequence = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed_sequence))


def spawn_generators(seed: int | np.random.SeedSequence, count: int, *key: int) -> list[np.random.Generator]:
    """
    Returns `count` independent generators derived from the seed. Extra integers in `key` select an independent
    family of streams (e.g. one family for parallel analysis references, another for CV splits).
    """
    if isinstance(seed, np.random.SeedSequence):
        root = seed
    else:
        root = np.random.SeedSequence(int(seed), spawn_key=tuple(int(x) for x in key))
    return [make_generator(child) for child in root.spawn(count)]


def resolve_n_jobs(n_jobs: int | None = None) -> int:
    """
    Number of joblib workers to use: the explicit value if given, otherwise the RCOV_THREADS environment
    variable, otherwise 1.
    """
    if n_jobs is not None:
        return int(n_jobs)
    env_value = os.getenv("RCOV_THREADS")
    if env_value is not None:
        try:
            return max(1, int(env_value))
        except ValueError:
            pass
    return 1


# -------------------------------------------- Numerical Utilities -----------------------------------------------


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    """Returns (S + Sᵀ)/2."""
    return (matrix + matrix.T) / 2


def frobenius(matrix: np.ndarray) -> float:
    return float(np.linalg.norm(matrix, "fro"))


def as_float_list(array) -> list:
    """Converts a numpy array (or None) to nested python floats for JSON output."""
    if array is None:
        return None
    return np.asarray(array, dtype=float).tolist()
