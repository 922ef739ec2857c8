"""
Exception hierarchy for Oscilla
Each error carries the exit code the command-line front end maps it to
"""
from typing import Optional


class OscillaError(Exception):
    """Base class for all Oscilla failures"""

    exit_code = 1


class ValidationError(OscillaError):
    """Invalid parameters, configuration or requests"""

    exit_code = 2


class SolverError(OscillaError):
    """Numerical failure: divergence, singular systems, failed eigen-solves"""

    exit_code = 3

    def __init__(self, message: str, last_residual: Optional[float] = None):
        super().__init__(message)
        self.last_residual = last_residual


class MeshError(SolverError):
    """Meshing failure or inverted cell"""

    def __init__(self, message: str, cell_id: Optional[int] = None):
        if cell_id is not None:
            message = f"{message} (cell {cell_id})"
        super().__init__(message)
        self.cell_id = cell_id
