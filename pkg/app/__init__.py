from flask import Flask
from config import Config
from .extensions import configure_logging


def create_app(config_object: type = Config) -> Flask:
    """
    Factory функция за създаване на Flask приложение.

    Тук:
      - Зареждаме конфигурация
      - Настройваме логове
      - Регистрираме JSON error handlers
      - Регистрираме API blueprint-а и CLI командите (gen / decompose / bench)
    """

    app = Flask(__name__)
    app.config.from_object(config_object)  # зареждане на Config класа

    # Конфигурация на логване (rotation, нива, без външни пакети)
    configure_logging(app)

    # Error handlers → JSON {"error", "message"}
    from .errors import init_error_handlers
    init_error_handlers(app)

    # ==========================
    #   Регистрация на Blueprints
    # ==========================

    from .blueprints.api import bp as api_bp
    app.register_blueprint(api_bp)  # /api/plan, /api/decompose, /api/health

    # CLI команди върху app.cli (FlaskGroup в run.py)
    from .commands import init_commands
    init_commands(app)

    return app
