# # Glued surfaces and regularized determinants
#
# A labelled ribbon graph glues flat cylinders into a closed surface with
# conical points at the vertices. For a connected n = 1 graph the result has
# genus two.

# %%
from sftlab.surfaces import (build_surface, fem_spectrum, labels_from_times,
                             logdet_regularized, theta_graph, torus_logdet_modes, torus_mesh)

graph = theta_graph()
labels = labels_from_times(graph, (-0.25, 0.25), (2.42, 1.21, 1.21))
surface = build_surface(graph, labels, eps=0.5, h=0.1)
print("Euler characteristic", surface.euler_characteristic(), "area", round(surface.area, 4))
print("cone angles / pi", [round(surface.cone_angles[v] / 3.141592653589793, 3)
                           for v in surface.cone_points])

# %% [markdown]
# P1 finite elements give the low spectrum of -Laplace + m^2.

# %%
print(fem_spectrum(surface, 1.0, 8).round(4))

# %% [markdown]
# The zeta-regularized log-determinant combines the computed eigenvalues
# below a split time with the small-time heat expansion above it. On flat
# tori it can be compared with an exact mode sum.

# %%
for L, beta in ((1.0, 1.0), (1.0, 2.0)):
    res = logdet_regularized(torus_mesh(L, beta, 0.05), 1.0)
    exact = torus_logdet_modes(L, beta, 1.0)
    print(f"torus {L}x{beta}: FEM {res.log_det:.5f}  exact {exact:.5f}")

# %%
det = logdet_regularized(surface, 1.0)
print("theta surface log det", round(det.log_det, 4), "using", det.n_eigs, "eigenvalues")
