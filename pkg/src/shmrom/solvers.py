"""Full- and reduced-order solvers behind one interface for the portal load."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fem import FomArrays, ParamPoint
from .integrator import GenAlphaParams, StateHistory, integrate
from .loads import portal_load_coefficient, portal_load_coefficients
from .reduction import RomArrays, rom_solve


@dataclass
class FomSolver:
    fom: FomArrays
    dt: float = 5e-3
    n_steps: int = 200
    params: GenAlphaParams = GenAlphaParams()
    fidelity: str = "fom"

    def solve(self, p: ParamPoint, record=None) -> StateHistory:
        K = self.fom.stiffness_at(p.g, p.delta)
        f = self.fom.load_basis[0]
        return integrate(self.fom.mass, K, lambda t: portal_load_coefficient(p, t) * f, dt=self.dt,
                         n_steps=self.n_steps, params=self.params, record=record)

    def displacements(self, p: ParamPoint) -> np.ndarray:
        return self.solve(p).displacement

    def sensor_history(self, p: ParamPoint, rows) -> StateHistory:
        return self.solve(p, record=np.asarray(rows))


@dataclass
class RomSolver:
    rom: RomArrays
    dt: float = 5e-3
    n_steps: int = 200
    params: GenAlphaParams = GenAlphaParams()
    fidelity: str = "rom"

    def solve(self, p: ParamPoint):
        return rom_solve(self.rom, portal_load_coefficients(p, self.dt, self.n_steps), p.g, p.delta, self.dt,
                         self.params)

    def sensor_history(self, p: ParamPoint, rows) -> StateHistory:
        """Lift only the requested rows."""
        return self.solve(p).lifted_history(np.asarray(rows))
