# %% [markdown]
# # Frictional contact with memory
#
# A unit square is clamped on the left, loaded by gravity and a ramped
# horizontal traction, and slides on a rigid floor against a Tresca bound.
# The viscoelastic memory makes the response depend on the load history.

# %%
from __future__ import annotations

import numpy as np

from hdmix import TimeGrid, assemble, check_friction_kkt, demo_model, solve_evolution, to_evolution_problem

asm = assemble(demo_model(nx=8, g=0.1))
grid = TimeGrid.from_horizon(1.0, 20)
traj = solve_evolution(to_evolution_problem(asm, grid))
print(f"{asm.n} displacement dofs, {asm.m} contact nodes, m_A = {asm.m_A}, L_A = {asm.L_A}")

# %% [markdown]
# As the traction ramps up the sliding region grows until only the node next
# to the clamp sticks. Sliding nodes carry a multiplier at the friction bound.

# %%
for t in (0.25, 0.5, 1.0):
    u, lam = traj.at(t)
    rep = check_friction_kkt(asm.tangential(u), lam, asm.bounds)
    print(f"t={t:4.2f}  stick={rep.stick.tolist()}  slip={len(rep.slip)} nodes  "
          f"residual={rep.max_residual:.1e}  max|u_nu|={np.abs(asm.normal_on_contact(u)).max():g}")

# %%
u, lam = traj.at(1.0)
print("tangential slip:", np.round(asm.tangential(u), 4))
print("multiplier     :", np.round(lam, 4))
