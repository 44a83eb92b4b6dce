"""Effective barriers for the quadrotor: values, rates, and the robust
margin H on a descending state."""

import numpy as np

from cbfguard.barrier import (
    BarrierBank,
    evaluate_H,
    evaluate_bank,
    quad_phi_spec,
    quad_theta_spec,
    quad_z_spec,
    region_label,
)
from cbfguard.dynamics import QuadrotorParams, as_affine_in_motors

params = QuadrotorParams()
model = as_affine_in_motors(params, vulnerable={4}, delta=0.02)
bank = BarrierBank((quad_z_spec(alpha=0.5), quad_phi_spec(), quad_theta_spec()))

diving = np.zeros(12)
diving[2] = 1.0    # 1 m altitude
diving[5] = -0.6   # descending
diving[6] = 0.25   # rolled toward the limit

hover_trim = np.full(4, params.hover_thrust / 4)
for spec, eff in zip(bank, evaluate_bank(bank, model, diving)):
    H = evaluate_H(spec, model, diving, hover_trim)
    print(f"{spec.name}: Btilde={eff.value:+.4f} region={region_label(eff.value, spec.c_bar):8s} "
          f"L_f={eff.lie_f:+.3f} H(hover trim)={H:+.3f}")
