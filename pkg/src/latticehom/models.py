"""Named lattice models used by the examples, the test suite and the CLI."""

from __future__ import annotations

import numpy as np

from .energy import EnergyModel, Quadratic, SitePotential
from .lattice import PeriodicLatticeModel

NN_1D = [[-1], [0], [1]]
SECOND_1D = [[-2], [0], [2]]
NN_2D = [[0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]]


def two_chains() -> PeriodicLatticeModel:
    """Even and odd sites form two hard chains with second-neighbour bonds; all nearest-neighbour bonds are weak."""
    return PeriodicLatticeModel([1, 2], [NN_1D, SECOND_1D, SECOND_1D])


def chain_with_soft() -> PeriodicLatticeModel:
    """Even sites form a hard chain; odd sites are soft."""
    return PeriodicLatticeModel([1, 0], [NN_1D, SECOND_1D])


def grid_with_holes() -> PeriodicLatticeModel:
    """Planar grid lines of a hard phase around one soft site per 2x2 period."""
    return PeriodicLatticeModel([[1, 1], [1, 0]], [NN_2D, NN_2D])


def grid_with_island() -> PeriodicLatticeModel:
    """Grid lines of period 4 with one hard site in the middle of each soft 3x3 hole."""
    lab = np.zeros((4, 4), dtype=int)
    lab[0, :] = 1
    lab[:, 0] = 1
    lab[2, 2] = 1
    return PeriodicLatticeModel(lab, [NN_2D, NN_2D])


BUILTIN_MODELS = {
    "two_chains": two_chains,
    "chain_with_soft": chain_with_soft,
    "grid_with_holes": grid_with_holes,
    "grid_with_island": grid_with_island,
}


def quadratic_energy(target: float | None = None) -> EnergyModel:
    """Quadratic strong and weak densities; with ``target`` also the pinning ``|z - target|^2`` on every site."""
    site = None if target is None else SitePotential(Quadratic(), float(target))
    return EnergyModel(2, Quadratic(), Quadratic(), site)
