# # The cubic vertex, its partition function and its Wick expansion
#
# The cut-off interaction I couples a long string to two shorter ones whose
# lengths add up to it within a smearing v. Its characteristic function
# Z(lambda) = E exp(i lambda Re I) is the regularized partition function.

# %%
import numpy as np

from sftlab import graphs, interaction, measure

field = measure.FieldParams(L0=1.0, Linf=2.6, dl=0.04, kappa=5.0, Ts=0.5, dt=0.25, M=2.5)
vertex = interaction.VertexParams(eps=0.5, T=0.5, v=0.2)
values = interaction.interaction_values(measure.sample_batch(field, 4000), vertex)
mean = measure.batch_means(values)
print(f"E[I] = {mean.value:.4f} +- {mean.stderr:.4f}")

# %%
for p in interaction.partition_from_values(np.linspace(0, 4, 5), values):
    print(f"lambda={p.lam:4.1f}  Z={p.Z.real:+.5f}{p.Z.imag:+.5f}i  +- {p.stderr:.5f}")

# %% [markdown]
# Moments of Re I expand into sums over trivalent ribbon graphs. At n = 1
# (two vertices) there are six graphs; only those without tadpoles
# contribute.

# %%
for g in graphs.enumerate_graphs(1):
    print(g.edges, "connected" if g.is_connected else "disconnected",
          "multiplicity", g.multiplicity)

# %%
model = graphs.feynman_model(field, vertex)
second = graphs.wick_moment(2, model)
mc = measure.batch_means(np.real(values) ** 2)
print(f"E[(Re I)^2]: graphs {second.value:.5e}, Monte Carlo {mc.value.real:.5e} +- {mc.stderr:.1e}")

# %% [markdown]
# Raising the cut-offs (M, kappa) moves I by less and less: the coupled
# estimator E|I_j - I_j+1|^2 falls along an escalating schedule.

# %%
from dataclasses import replace

steps = interaction.cauchy_schedule([(1.5, 2.5), (2.5, 4.0), (3.5, 5.0)], 400,
                                    replace(field, M=3.5, kappa=5.0), vertex)
for s in steps:
    print(s.cut_a, "->", s.cut_b, f"{s.estimate.value.real:.3e} +- {s.estimate.stderr:.1e}")
