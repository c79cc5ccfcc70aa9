"""Glued-cylinder surfaces, FEM spectra and regularized determinants."""

from .conjecture import ScanResult, ScanRow, conjecture_scan, theta_graph
from .determinant import (DetResult, DetSpec, cone_constant, logdet_regularized,
                          torus_logdet_lattice, torus_logdet_modes)
from .fem import assemble, convergence_order, fem_spectrum, torus_eigenvalues, weyl_ratio
from .mesh import (PlumbingFixture, SurfaceLabels, SurfaceMesh, area_formula, build_surface,
                   complete_widths, fixtures, labels_from_times, read_ascii, rebuild, torus_mesh,
                   width_violations)
