# tests/conftest.py
import numpy as np
import pytest

import config
from app import create_app
from app.services.bench import RunConfig, plan_run
from app.services.communicator import CommGroup, run_ranks
from app.services.power_svd import SvdConfig


@pytest.fixture
def app(tmp_path):
    """
    Създава Flask app за теста; логове и изход отиват във временна директория.
    VS Code ще показва бутони за pytest тестове автоматично.
    """

    class TestConfig(config.Config):
        TESTING = True
        LOG_DIR = tmp_path / "logs"
        OUT_DIR = tmp_path / "out"
        HOST_TIER_DIR = None
        COLLECTIVE_TIMEOUT_S = 10.0

    app = create_app(TestConfig)
    yield app


@pytest.fixture
def client(app):
    """Flask test клиент за HTTP заявки."""
    return app.test_client()


@pytest.fixture
def runner(app):
    """CLI runner за командите gen / decompose / bench."""
    return app.test_cli_runner()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# ---------------- Независим oracle: one-sided Jacobi SVD ----------------

def one_sided_jacobi(a, max_sweeps=80, tol=1e-14):
    """
    Ротации по двойки колони, докато всички станат взаимно ортогонални.
    Връща (U, sigma, V), sigma в намаляващ ред. Не ползва numpy.linalg.svd.
    """
    a = np.array(a, dtype=np.float64)
    transposed = a.shape[0] < a.shape[1]
    if transposed:
        a = a.T.copy()
    m, n = a.shape
    w = a.copy()
    v = np.eye(n)
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = w[:, p] @ w[:, p]
                beta = w[:, q] @ w[:, q]
                gamma = w[:, p] @ w[:, q]
                if gamma == 0.0 or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta)) if zeta != 0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                wp = w[:, p].copy()
                w[:, p] = c * wp - s * w[:, q]
                w[:, q] = s * wp + c * w[:, q]
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if not rotated:
            break
    sigma = np.sqrt(np.sum(w * w, axis=0))
    order = np.argsort(-sigma, kind="stable")
    sigma, w, v = sigma[order], w[:, order], v[:, order]
    u = w / np.where(sigma > 0, sigma, 1.0)
    if transposed:
        return v, sigma, u
    return u, sigma, v


@pytest.fixture
def jacobi_svd():
    return one_sided_jacobi


def make_spectrum_matrix(m, n, sigma, seed=0):
    """A = Q_u·diag(sigma)·Q_vᵀ с ортонормирани Q от QR на гаусови матрици."""
    sigma = np.asarray(sigma, dtype=np.float64)
    r = sigma.size
    g = np.random.default_rng(seed)
    qu, _ = np.linalg.qr(g.standard_normal((m, r)))
    qv, _ = np.linalg.qr(g.standard_normal((n, r)))
    return (qu * sigma) @ qv.T


def geometric_sigma(count, top=4.0, ratio=1.5):
    return top / ratio ** np.arange(count)


@pytest.fixture
def spectrum_matrix():
    return make_spectrum_matrix


def run_on_ranks(size, target, timeout=10.0):
    """Пуска target(comm) на `size` rank-а; връща (group, резултати по rank)."""
    group = CommGroup(size, timeout=timeout)
    return group, run_ranks(group, target)


@pytest.fixture
def ranks():
    return run_on_ranks


def sign_align(reference, other):
    """Обръща колоните на other към знака на reference (за сравнение на вектори)."""
    signs = np.sign(np.sum(reference * other, axis=0))
    signs[signs == 0] = 1.0
    return other * signs


def make_plans(m, n, *, workers=1, batches=1, queue_size=1, orientation="orthogonal",
               budget=1 << 30, sparse=False, density=1.0, **svd):
    cfg = RunConfig(svd=SvdConfig(**svd), workers=workers, batches=batches, queue_size=queue_size,
                    orientation=orientation, device_budget=budget, collective_timeout=10.0)
    return cfg, plan_run(m, n, cfg, sparse=sparse, density=density)
