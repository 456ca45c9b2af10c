import os
from pathlib import Path

BASE_DIR = Path(__file__).resolve().parent

class Config:
    # име на приложението (излиза в /api/health и в логовете)
    APP_NAME = "OOM SVD"

    # ниво на логване: OOMSVD_LOG=DEBUG|INFO|WARNING
    LOG_LEVEL = os.environ.get("OOMSVD_LOG", "INFO").upper()
    LOG_DIR = BASE_DIR / "logs"

    # къде CLI пише фактори и метрики по подразбиране
    OUT_DIR = BASE_DIR / "out"

    # Optional: директория за file-backed host tier. Ако липсва -> масиви в RAM.
    HOST_TIER_DIR = os.environ.get("OOMSVD_HOST_DIR")

    # бюджет на "device" паметта на един rank (байтове)
    DEVICE_BUDGET_BYTES = 1 << 30

    # колективите чакат най-много толкова секунди (fault -> грешка, не зависване)
    COLLECTIVE_TIMEOUT_S = 30.0

    # power method
    EPS = 1e-10
    MAX_ITER = 10_000
    SEED = 0

    # разпределение и batching
    WORKERS = 1
    BATCHES = 1
    QUEUE_SIZE = 1
    ORIENTATION = "orthogonal"
    PATH = "auto"
    TRANSFER_COST_NS_PER_BYTE = 0.0

    # HTTP API приема само малки матрици
    API_MAX_ELEMENTS = 1_000_000
