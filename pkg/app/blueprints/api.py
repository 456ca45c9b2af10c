# -------------------------------------------------------------
# JSON API върху същите услуги, които ползва CLI-то:
#   • GET  /api/health     → жив ли е сървърът
#   • POST /api/plan       → partition + batches + OOM оценка, без изпълнение
#   • POST /api/decompose  → truncated SVD на малка плътна матрица
#
# Грешките на приложението (ConfigError, CapacityError, ...) стигат до
# error handlers в errors.py и се връщат като JSON.
# -------------------------------------------------------------

from flask import Blueprint, request, jsonify, current_app
import numpy as np

from ..errors import ConfigError
from ..services.bench import RunConfig, decompose, plan_run
from ..services.partition import estimate_memory

bp = Blueprint("api", __name__)


def _payload():
    data = request.get_json(silent=True)
    if not isinstance(data, dict):
        raise ConfigError("request body must be a JSON object")
    return data


def _int(data, key, default=None):
    value = data.get(key, default)
    if value is None:
        return None
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be an integer") from None


def _run_config(data, **extra):
    return RunConfig.from_app_config(
        current_app.config,
        k=_int(data, "k"),
        eps=data.get("eps"),
        max_iter=_int(data, "max_iter"),
        seed=_int(data, "seed"),
        path=data.get("path"),
        fixed_iters=_int(data, "fixed_iters"),
        workers=_int(data, "workers"),
        batches=_int(data, "batches"),
        queue_size=_int(data, "queue_size"),
        orientation=data.get("orientation"),
        device_budget=_int(data, "device_budget_bytes"),
        **extra,
    )


@bp.get("/api/health")
def api_health():
    return jsonify({"status": "ok", "app": current_app.config.get("APP_NAME")})


@bp.post("/api/plan")
def api_plan():
    """
    Планира изпълнение за m×n матрица, без да я изисква.

    Вход: {m, n, workers, k, sparse, density, device_budget_bytes, batches, queue_size, orientation}
    Изход: partition, batches, oom (degree, placement, gram_mode) и оценка на паметта.
    Degree 2 → 507 с категория "degree2".
    """
    data = _payload()
    m, n = _int(data, "m"), _int(data, "n")
    if not m or not n:
        raise ConfigError("m and n are required")
    sparse = bool(data.get("sparse", False))
    density = float(data.get("density", 1.0))
    config = _run_config(data)
    plan = plan_run(m, n, config, sparse=sparse, density=density)
    estimate = estimate_memory(m, n, config.svd.resolve_k(m, n), sparse, density)
    body = plan.to_dict()
    body["memory"] = {"s_a": estimate.s_a, "s_svd": estimate.s_svd}
    body["path"] = config.svd.path_for(sparse)
    return jsonify(body)


@bp.post("/api/decompose")
def api_decompose():
    """
    Truncated SVD на {"matrix": [[...]], ...}. Матрици над API_MAX_ELEMENTS → 400.
    Връща sigma, U, V, report и metrics.
    """
    data = _payload()
    try:
        a = np.asarray(data.get("matrix"), dtype=np.float64)
    except (TypeError, ValueError):
        raise ConfigError("matrix must be a rectangular list of numbers") from None
    if a.ndim != 2 or a.size == 0:
        raise ConfigError("matrix must be a non-empty 2-D list")
    limit = current_app.config.get("API_MAX_ELEMENTS", 1_000_000)
    if a.size > limit:
        raise ConfigError(f"matrix has {a.size} elements; the API accepts at most {limit}")

    result = decompose(a, _run_config(data))
    current_app.logger.info("API decompose %s → k=%d", a.shape, result.factors.k)
    return jsonify({
        "sigma": result.factors.sigma.tolist(),
        "U": result.factors.U.tolist(),
        "V": result.factors.V.tolist(),
        "report": result.report.to_dict(),
        "metrics": result.metrics.to_dict(),
    })
