"""
Registering two tracking frames
===============================

A calibration cube traced by the robot is seen by the reference system and
by the system under test in different coordinate frames. Rigid
registration of the paired samples recovers the frame change.
"""

import numpy as np
from scipy.spatial.transform import Rotation

from trackbench.patterns import DistortionModel, distort, generate, robot_pattern
from trackbench.registration import (
    pivot_calibrate,
    registration_residual,
    rigid_register,
    similarity_register,
)

#%%
# The 5 cm calibration cube, visited corner by corner.
ref = generate(robot_pattern("A"))
print(len(ref), "samples over", round(ref.t[-1], 2), "s")

#%%
# Simulate the test tracker: half a millimetre of noise, then an unknown
# rotation and offset.
R_true = Rotation.from_euler("xyz", [20, -35, 60], degrees=True).as_matrix()
t_true = np.array([0.4, -1.2, 2.0])
noisy = distort(ref, DistortionModel(noise_sigma=5e-4), seed=1).positions
test = noisy @ R_true.T + t_true

#%%
# Registering test onto reference returns the inverse frame change.
T, diag = rigid_register(test, ref.positions)
err = Rotation.from_matrix(T.rotation @ R_true).magnitude()
print(f"rotation error {err * 1e3:.3f} mrad, rms residual {diag.rms_residual * 1e3:.3f} mm")
print("residual mean / sd / max (mm):", registration_residual(test, ref.positions, T).format_row())

#%%
# A tracker whose scale is off by 3 % shows up in the similarity fit. The
# fit maps the stretched points back, so it reports the reciprocal.
S, _ = similarity_register(1.03 * ref.positions, ref.positions)
print(f"estimated scale {S.scale:.4f}, tracker scale {1 / S.scale:.4f}")

#%%
# Pivot calibration: rotate the tracked body about a fixed tip and solve for
# the tip in body coordinates.
rng = np.random.default_rng(0)
tip = np.array([0.0, 0.0, -0.12])
Rs = Rotation.from_rotvec(rng.normal(scale=0.4, size=(50, 3))).as_matrix()
ts = np.array([0.2, 0.1, 0.9]) - Rs @ tip + rng.normal(scale=3e-4, size=(50, 3))
res = pivot_calibrate(Rs, ts)
print("tool offset (mm):", np.round(res.tool_offset * 1e3, 2))
