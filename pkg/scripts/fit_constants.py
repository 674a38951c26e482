"""One-shot fits for the simulated-device and synthetic-workload constants.

The resulting numbers are frozen into the package defaults
(device.SimModel, workload.TABLE_FIT) and tests/fixtures/sim_model_fit.json;
this script exists so they can be re-derived and audited. Residuals are
printed for the record.

The device fit is a penalized least squares: alongside matching the four
reference (throttle config -> measured sustained TFLOPS) points, the model
must leave each tier's target reachable within 2% at that tier's power and
memory caps with the core clock free, otherwise calibration could never
converge inside its +/-3% tolerance.
"""

import numpy as np
from scipy.optimize import minimize

# (power_cap_w, core_cap_mhz, mem_cap_mhz) -> measured sustained TFLOPS
ROWS = [
    ((450.0, 2520.0, 10501.0), 53.58),
    ((285.0, 1125.0, 5001.0), 26.49),
    ((150.0, 570.0, 5001.0), 13.49),
    ((150.0, 255.0, 5001.0), 6.12),
]
# (target_tflops, power_cap, mem_cap) per tier; core clock free up to nominal
TIERS = [(55.05, 450.0, 10501.0), (26.73, 285.0, 5001.0),
         (13.54, 150.0, 5001.0), (6.07, 150.0, 5001.0)]
NOM_CORE, NOM_POWER = 2520.0, 450.0
MARGIN = 0.98


def predict(x, cfg):
    peak, bw, pexp = x
    p, c, m = cfg
    return min(peak * c / NOM_CORE, bw * m, peak * (p / NOM_POWER) ** pexp)


def achievable(x, power, mem):
    peak, bw, pexp = x
    return min(peak, bw * mem, peak * (power / NOM_POWER) ** pexp)


def loss(x):
    sse = sum((predict(x, cfg) - meas) ** 2 for cfg, meas in ROWS)
    pen = 0.0
    for tgt, p, m in TIERS:
        short = MARGIN * tgt - achievable(x, p, m)
        if short > 0:
            pen += 1e4 * short ** 2
    return sse + pen


def fit_device_model():
    best = None
    for x0 in [(60.0, 0.0052, 1.3), (55.0, 0.0053, 1.2), (59.3, 0.00519, 1.35)]:
        r = minimize(loss, x0=x0, method="Nelder-Mead",
                     options={"xatol": 1e-12, "fatol": 1e-14,
                              "maxiter": 50000, "maxfev": 50000})
        if best is None or r.fun < best.fun:
            best = r
    peak, bw, pexp = best.x
    print(f"sim model: peak_tflops={peak:.6f} bw_coefficient={bw:.8f} "
          f"power_exponent={pexp:.6f} loss={best.fun:.6f}")
    for cfg, meas in ROWS:
        pred = predict(best.x, cfg)
        print(f"  cfg={cfg} meas={meas} pred={pred:.4f} resid={pred-meas:+.4f}")
    print("calibration feasibility (achievable vs target):")
    for tgt, p, m in TIERS:
        a = achievable(best.x, p, m)
        print(f"  target={tgt} achievable={a:.4f} dev={100*(a-tgt)/tgt:+.2f}%")


# synthetic workload: top tier's measured no-animation frame rates by scene size
FPS_ROWS = [(3448340, 44.8), (2795038, 47.9), (1834311, 51.3), (580604, 58.8)]
TIER_TFLOPS = 55.05  # estimated sustained for the top tier


def fit_synthetic_cost():
    # frame_time_ms = (overhead_work + work_per_splat * splats) / (tflops * 1e6)
    t = np.array([1000.0 / f for _, f in FPS_ROWS])  # ms
    s = np.array([float(n) for n, _ in FPS_ROWS])
    A = np.vstack([np.ones_like(s), s]).T
    coef, *_ = np.linalg.lstsq(A, t * TIER_TFLOPS * 1e6, rcond=None)
    overhead_work, work_per_splat = coef
    print(f"\nsynthetic: overhead_work={overhead_work:.6e} "
          f"work_per_splat={work_per_splat:.6f}")
    for n, fps in FPS_ROWS:
        ft = (overhead_work + work_per_splat * n) / (TIER_TFLOPS * 1e6)
        pred = 1000.0 / ft
        print(f"  splats={n} fps={fps} pred={pred:.2f} "
              f"rel_err={100*(pred-fps)/fps:+.2f}%")


if __name__ == "__main__":
    fit_device_model()
    fit_synthetic_cost()
