"""Zoom in on one tick of a continuous measurement.

Couple the system to a fresh two-level probe for a short window, read
the probe out in the quadrature basis, and compare the conditioned
state with one diffusive filter step driven by the matching record
increment.  The gap closes faster than the step itself.
"""

import numpy as np

from qlqg.sme import (
    DensityMatrix,
    FiniteModel,
    ancilla_quadrature_projectors,
    discrete_conditioning,
    sme_step,
    trace_norm,
    weak_measurement_unitary,
)

SY = np.array([[0.0, -1.0j], [1.0j, 0.0]])
SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SZ = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)


def main():
    L = SZ + 0.3 * SY
    H = 0.4 * SX
    model = FiniteModel(H0=H, L_list=[L])
    rho = DensityMatrix(
        np.array([[0.6, 0.15 - 0.05j], [0.15 + 0.05j, 0.4]], dtype=complex)
    )
    plus, minus = ancilla_quadrature_projectors()

    print("   dt      p(+)     ancilla vs diffusive step")
    steps = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
    errors = []
    for dt in steps:
        U = weak_measurement_unitary(L, dt, H=H)
        outcomes = discrete_conditioning(rho, U, [plus, minus])
        sqrt_dt = np.sqrt(dt)
        worst = 0.0
        for (prob, post), dY in zip(outcomes, [sqrt_dt, -sqrt_dt]):
            euler = sme_step(rho, model, np.zeros(0), np.array([dY]), dt)
            worst = max(worst, trace_norm(post.entries - euler.entries))
        errors.append(worst)
        print(f"  {dt:.0e}  {outcomes[0][0]:.4f}   {worst:.3e}")

    slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
    print(f"\nerror scales like dt^{slope:.2f}; the step itself is order dt^0.5")


if __name__ == "__main__":
    main()
