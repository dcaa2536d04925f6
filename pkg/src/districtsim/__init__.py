"""Coupled thermal model of urban surfaces and building zones.

Modules: ``geometry`` (meshes, view factors), ``conduction`` (1D slabs),
``longwave`` (radiosity), ``airzone`` (zone air), ``engine`` (time loop and
fixed points), ``io``/``weather`` (files), ``verify`` (error norms, reference
solutions, sensitivity) and ``scenes`` (bundled scene generators).
"""

from .engine import ConvergenceError, Element, ResultSet, Scene, SimulationConfig, run
from .io import build_scene, load_config, load_scene, load_weather, read_results, write_results

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "Element", "ResultSet", "Scene", "SimulationConfig", "run",
    "build_scene", "load_config", "load_scene", "load_weather", "read_results", "write_results",
]
