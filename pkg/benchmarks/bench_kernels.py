"""Compare the compiled and NumPy likelihood kernels.

Times one observed-data log-likelihood/E-step pass, one Hessian increment
evaluation and one full MLE fit (EM plus numerical Hessian) with each
backend, and checks they agree.

    python benchmarks/bench_kernels.py [--n 2200] [--repeat 200]
"""

import argparse
import timeit

import numpy as np

from misclassreg import kernels
from misclassreg.em import fit_mle, problem_for
from misclassreg.inference import loglik_increment
from misclassreg.sim import SimConfig, apply_query_design, generate, replicate_rng


def _data(n, seed=1):
    cfg = SimConfig(n_obs=n, seed=seed)
    rng = replicate_rng(seed, 0)
    return apply_query_design(generate(cfg, rng), cfg.q, cfg.misclass_mode, rng)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2200)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--fits", type=int, default=5)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not built; only the NumPy backend is available")
    data = _data(args.n)
    prob = problem_for(data)
    beta = np.array([-2.28, 0.18, 0.14])
    eta = np.array([0.4, 0.39])
    lin0, lin1, logit = prob._linear(beta, eta)
    call = (prob.y, prob.lgy, prob.logoff, lin0, lin1, logit, prob.xstar, prob.x, prob.queried, True, True)

    print(f"N = {args.n}")
    theta = np.r_[beta, eta]
    step = theta + 1e-5
    print(f"{'backend':<8} {'kernel (us)':>12} {'increment (us)':>15} {'fit (ms)':>10} {'loglik':>22}")
    results = {}
    original = kernels.loglik_and_phi, kernels.increment_sum
    try:
        for name, mod in sorted(backends.items()):
            per_call = min(timeit.repeat(lambda: mod.loglik_and_phi(*call), number=args.repeat, repeat=3))
            kernels.loglik_and_phi, kernels.increment_sum = mod.loglik_and_phi, mod.increment_sum
            g = loglik_increment(data, theta)
            per_inc = min(timeit.repeat(lambda: g(step), number=args.repeat, repeat=3))
            fit_time = min(timeit.repeat(lambda: fit_mle(data), number=args.fits, repeat=3))
            ll = mod.loglik_and_phi(*call)[0]
            results[name] = (ll, fit_mle(data).theta)
            print(f"{name:<8} {1e6 * per_call / args.repeat:12.1f} {1e6 * per_inc / args.repeat:15.1f} "
                  f"{1e3 * fit_time / args.fits:10.1f} {ll:22.12f}")
    finally:
        kernels.loglik_and_phi, kernels.increment_sum = original

    if len(results) == 2:
        (ll_c, th_c), (ll_p, th_p) = results["cython"], results["python"]
        print(f"loglik difference {abs(ll_c - ll_p):.2e}; max parameter difference {np.max(np.abs(th_c - th_p)):.2e}")


if __name__ == "__main__":
    main()
