import logging
from logging.handlers import RotatingFileHandler
from pathlib import Path

def configure_logging(app):
    """
    Конфигурира централизирано логването за приложението.

    ➤ Какво прави тази функция:
      - Създава LOG_DIR ако не съществува
      - Записва логове във файл oomsvd.log с RotatingFileHandler (≈1MB × 3)
      - Нивото идва от LOG_LEVEL (env OOMSVD_LOG)
      - Services логват през logging.getLogger(__name__) → "app.services.*",
        т.е. деца на app.logger, и попадат в същия handler
    """

    log_dir = Path(app.config["LOG_DIR"])
    log_dir.mkdir(parents=True, exist_ok=True)
    log_file = log_dir / "oomsvd.log"

    level = logging.getLevelName(app.config.get("LOG_LEVEL", "INFO"))
    if not isinstance(level, int):
        level = logging.INFO

    # factory-то се вика многократно в тестовете → не дублираме handler-и
    for h in list(app.logger.handlers):
        if isinstance(h, RotatingFileHandler):
            app.logger.removeHandler(h)
            h.close()

    handler = RotatingFileHandler(log_file, maxBytes=1_000_000, backupCount=3)
    formatter = logging.Formatter(
        "%(asctime)s [%(levelname)s] %(name)s -> %(message)s [in %(pathname)s:%(lineno)d]"
    )
    handler.setFormatter(formatter)
    handler.setLevel(level)

    app.logger.setLevel(level)
    app.logger.addHandler(handler)

    app.logger.info("Application logger configured (level=%s).", logging.getLevelName(level))
