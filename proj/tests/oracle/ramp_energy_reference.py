#!/usr/bin/env python3
"""Fine-step quadrature oracle for the energy integrator. Integrates the
piecewise-linear interpolation of a sampled power series with a 1 ms step,
which is exact for a linear ramp. Regenerates the frozen constants in
tests/test_attribution.cpp."""


def fine_step_joules(points_ms_watts, step_ms=1):
    total = 0.0
    for (t0, v0), (t1, v1) in zip(points_ms_watts, points_ms_watts[1:]):
        t = t0
        while t < t1:
            tn = min(t + step_ms, t1)
            # linear interpolation at both sub-step ends
            a = v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            b = v0 + (v1 - v0) * (tn - t0) / (t1 - t0)
            total += 0.5 * (a + b) * (tn - t) / 1000.0
            t = tn
    return total


if __name__ == "__main__":
    # linear ramp 0 -> 100 W over 3600 s, sampled every 60 s
    ramp = [(i * 60_000, 100.0 * i * 60.0 / 3600.0) for i in range(61)]
    joules = fine_step_joules(ramp)
    print(f"ramp joules={joules!r} kwh={joules / 3.6e6!r}")

    # constant 100 W over 3600 s
    const = [(0, 100.0), (3_600_000, 100.0)]
    print(f"constant joules={fine_step_joules(const)!r}")
