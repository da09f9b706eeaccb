"""Position dispersion with and without the measurement record.

The monitored particle settles to a finite stationary uncertainty;
unmonitored, the same particle spreads without bound, cubically in
time.  Continuous observation does not freeze the state, it pins the
dispersions.
"""

import numpy as np

from qlqg import free_particle as fp
from qlqg.phase_space import build_coefficients, free_particle_model
from qlqg.riccati import TimeGrid, integrate_filter_riccati, lyapunov_unconditional


def main():
    model = free_particle_model()
    coeffs = build_coefficients(model)
    Sigma0 = np.diag([2.0, 2.0])
    grid = TimeGrid(0.0, 10.0, 10_000)

    filtered = integrate_filter_riccati(
        coeffs, Sigma0, grid, uncertainty=(model.J, model.hbar)
    )
    free = lyapunov_unconditional(coeffs, Sigma0, grid)
    target = fp.stationary_dispersions()

    print("      monitored            unmonitored")
    print("  t   sigma_Q  sigma_P     sigma_Q     sigma_P")
    for t in [0.0, 0.5, 1.0, 2.0, 5.0, 10.0]:
        k = round(t / grid.dt)
        f, u = filtered.at(k), free.at(k)
        print(
            f"{t:5.1f}  {f[0, 0]:7.4f}  {f[1, 1]:7.4f}  {u[0, 0]:10.2f}  {u[1, 1]:10.2f}"
        )
    print()
    print(f"stationary point      ({target[0, 0]}, {target[1, 1]})")
    print(f"closed-form growth    sigma_Q(t) ~ t^3 / 3:  {fp.spread_covariance(Sigma0, 10.0)[0, 0]:.2f}")

    product = np.sqrt(filtered.at(-1)[0, 0] * filtered.at(-1)[1, 1])
    print(f"uncertainty product   {product:.6f}  (Heisenberg bound 0.5)")


if __name__ == "__main__":
    main()
