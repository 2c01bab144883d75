import mpmath
import numpy as np
import pytest

from stream_meta.data import Dataset, ExperimentRecord


def toy_dataset(seed=0, m=6, J=3, K=2, L=4, q=1, n_low=5, n_high=60):
    """Small random dataset with every level of a, b and time present."""
    rng = np.random.default_rng(seed)
    ga = np.concatenate([np.arange(J), rng.integers(0, J, max(0, m - J))])[:m]
    gb = np.concatenate([np.arange(K), rng.integers(0, K, max(0, m - K))])[:m]
    times = np.arange(1, L + 1, dtype=float) * 2.0 + 1.0
    tt = np.concatenate([times, rng.choice(times, max(0, m - L))])[:m]
    rng.shuffle(ga)
    rng.shuffle(gb)
    rng.shuffle(tt)
    records = []
    for i in range(m):
        records.append(ExperimentRecord(
            id=f"r{i}",
            y=float(rng.normal(2.0, 1.0)),
            s2=float(rng.uniform(0.2, 2.0)),
            n=int(rng.integers(n_low, n_high)),
            t=float(tt[i]),
            group_a=f"a{ga[i]}",
            group_b=f"b{gb[i]}",
            x=tuple(float(v) for v in rng.uniform(-1, 1, q)),
        ))
    return Dataset(tuple(records))


@pytest.fixture
def toy():
    return toy_dataset()


def exact_condition(train, values, test, kp, jitter=1e-8, digits=30):
    """Joint covariance of (train, test), conditioned by explicit inversion in
    ``digits``-digit arithmetic; returns float64 (mean, cov)."""
    with mpmath.workdps(digits):
        allt = [mpmath.mpf(float(v)) for v in [*train, *test]]
        sp2, lp, pe = mpmath.mpf(kp.sigma_p2), mpmath.mpf(kp.l_p), mpmath.mpf(kp.p_e)
        C = mpmath.matrix([[sp2 * mpmath.exp(-2 * mpmath.sin(mpmath.pi * abs(a - b) / pe) ** 2 / lp ** 2)
                            for b in allt] for a in allt])
        L, M = len(train), len(test)
        C11 = C[0:L, 0:L] + mpmath.mpf(jitter) * sp2 * mpmath.eye(L)
        C12, C22 = C[0:L, L:L + M], C[L:L + M, L:L + M]
        inv = C11 ** -1
        mean = C12.T * inv * mpmath.matrix([mpmath.mpf(float(v)) for v in values])
        cov = C22 - C12.T * inv * C12
        return (np.array([float(mean[i]) for i in range(M)]),
                np.array([[float(cov[i, j]) for j in range(M)] for i in range(M)]))


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Criterion number -> (passed, detail); printed at the end of the run."""
    return request.config.stash.setdefault(_ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(_ACCEPTANCE, {})
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(log):
        passed, detail = log[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'}  {detail}")
