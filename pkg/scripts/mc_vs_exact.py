"""Monte Carlo estimators against the matrix routes.

Every quantity here is computable two ways: by simulation and by a
dense linear-algebra route on the truncated window.  The script prints
both with the Monte Carlo standard error so drift is obvious.
"""

import warnings

import numpy as np

from qsdctl import (SimConfig, build_generator, estimate_cost,
                    estimate_survival, evaluate_policy, load_builtin,
                    policies, simulate_thinning, solve_qsd, survival_profile)

SAMPLES = 4000


def main():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = load_builtin("culling")
    control = model.constant_control(1)
    gen = build_generator(model, control, model.level)
    lam = solve_qsd(gen).lam
    print(f"culling, all-cull control: extinction rate {lam:.9f}/s")

    times = [0.5, 1.0, 2.0]
    exact = survival_profile(gen, times)
    mc = estimate_survival(model, control, 3, times,
                           SimConfig(seed=11, samples=SAMPLES))
    print(f"\nsurvival from x=3 ({SAMPLES} paths):")
    for j, t in enumerate(times):
        print(f"  t={t:4.1f}s  exact {exact[j, 2]:.5f}   mc {mc[j].value:.5f}"
              f" +- {mc[j].stderr:.5f}")

    beta = 0.2
    f = np.zeros(model.level + 1)
    for x in range(1, model.level + 1):
        f[x] = model.cost_rate(x, control.action_at(x))
    v = evaluate_policy(gen, f, beta, lam=lam)
    est = estimate_cost(model, control, 2, beta,
                        SimConfig(seed=13, samples=SAMPLES))
    print(f"\ndiscounted cost from x=2 at beta={beta}/s:")
    print(f"  linear solve {v[2]:.5f}   mc {est.value:.5f} "
          f"+- {est.stderr:.5f}")

    # a history rule only the thinning simulator can run
    rule = policies.peak_threshold(5, 0, 1)
    taus = []
    for i in range(SAMPLES):
        traj = simulate_thinning(model, rule, 3, SimConfig(seed=17),
                                 stream_index=i)
        taus.append(traj.extinction_time)
    taus = np.array(taus)
    print(f"\n{rule.name} from x=3: mean extinction "
          f"{taus.mean():.4f}s +- {taus.std(ddof=1) / len(taus) ** 0.5:.4f}s"
          f" (between the two stationary extremes)")


if __name__ == "__main__":
    main()
