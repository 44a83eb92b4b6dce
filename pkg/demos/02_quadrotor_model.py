"""The 12-state quadrotor: hover trim, motor mixing, and the exact
control-affine decomposition in motor-thrust space."""

import numpy as np

from cbfguard.dynamics import QuadrotorParams, as_affine_in_motors, mix_motors, quadrotor_derivative

params = QuadrotorParams()
print("hover thrust m*g =", params.hover_thrust, "N")

hover = np.zeros(12)
hover[2] = 5.0
wrench = (params.hover_thrust, 0.0, 0.0, 0.0)
print("derivative at hover trim:", np.round(quadrotor_derivative(hover, wrench, params), 12))

print("wrench from equal thrusts:", mix_motors([11.0, 11.0, 11.0, 11.0], params))

# exact affinity: the wrench map is linear, so f(x) + g(x) u reproduces the
# dynamics for any motor vector
model = as_affine_in_motors(params, vulnerable={4})
f = np.array([9.0, 12.0, 10.0, 13.0])
direct = quadrotor_derivative(hover, mix_motors(f, params), params)
affine = model.drift(hover) + model.input_matrix(hover) @ f
print("affinity gap:", np.max(np.abs(direct - affine)))
print("secure motors:", model.input_labels[: model.m_s], "vulnerable:", model.input_labels[model.m_s:])
