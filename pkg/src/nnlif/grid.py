"""Uniform voltage mesh on a truncated half line ``[V_min, V_F]``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform mesh with ``M`` cells; node ``M`` is the Dirichlet node at ``V_F``.

    ``i_R`` is the index of the reset node when the mesh was aligned on
    ``V_R`` (see :meth:`aligned`), otherwise the node closest to it.
    """

    V_min: float
    V_F: float
    M: int
    i_R: int = -1

    def __post_init__(self):
        if not self.V_min < self.V_F:
            raise ValueError(f"empty grid: V_min={self.V_min} >= V_F={self.V_F}")
        if self.M < 4:
            raise ValueError(f"grid needs at least 4 cells, got M={self.M}")

    @property
    def dv(self) -> float:
        return (self.V_F - self.V_min) / self.M

    @property
    def v(self) -> np.ndarray:
        v = self.V_min + self.dv * np.arange(self.M + 1)
        v[-1] = self.V_F
        return v

    def index_of(self, x: float) -> int:
        return int(round((x - self.V_min) / self.dv))

    @classmethod
    def aligned(cls, V_min: float, V_R: float, V_F: float, dv: float) -> "Grid":
        """Mesh with spacing close to ``dv`` that has a node exactly at ``V_R``.

        The spacing is shrunk so that ``V_F - V_R`` is a whole number of cells,
        and ``V_min`` is moved down to the next node below the request.
        """
        if not V_R < V_F:
            raise ValueError("need V_R < V_F")
        n_top = max(1, int(math.ceil((V_F - V_R) / dv - 1e-9)))
        h = (V_F - V_R) / n_top
        n_bottom = int(math.ceil((V_R - V_min) / h - 1e-9))
        grid = cls(V_R - n_bottom * h, V_F, n_bottom + n_top, n_bottom)
        if grid.V_min > V_R - 2.0:
            raise ValueError(
                f"V_min={grid.V_min:g} leaves less than 2 units below V_R={V_R:g}"
            )
        return grid

    @classmethod
    def for_model(cls, params, N_ref: float, dv: float = 1e-3, margin: float = 8.0):
        """Default truncation ``min(V_R, b*N_ref) - margin``."""
        V_min = min(params.V_R, params.b * N_ref) - margin
        return cls.aligned(V_min, params.V_R, params.V_F, dv)

    def mass(self, u: np.ndarray) -> float:
        """Control-volume mass ``dv * sum(u[:-1])`` (the boundary node carries none)."""
        return float(self.dv * np.sum(u[:-1]))

    def trapezoid(self, u: np.ndarray) -> float:
        return float(np.trapezoid(u, dx=self.dv))
