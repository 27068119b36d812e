"""Galerkin boundary elements for sound-soft scattering by fractal screens.

Screens are n-attractors of iterated function systems of similarities; the
package builds their self-similar meshes, integrates over cells, assembles
and solves the piecewise-constant Galerkin system and probes geometry.
"""
from ._backend import BACKEND
from .ifs import (AttractorModel, FractalMesh, IFSError, IteratedFunctionSystem,
                  SimilarityMap, generate_diameter_mesh, generate_level_mesh,
                  similarity_dimension)
from .kernels import IncidentPlaneWave

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "AttractorModel", "FractalMesh", "IFSError", "IncidentPlaneWave",
    "IteratedFunctionSystem", "SimilarityMap", "generate_diameter_mesh",
    "generate_level_mesh", "similarity_dimension", "__version__",
]
