from flask import jsonify


class OomSvdError(Exception):
    """
    Базова грешка на приложението.

    Всяка подкласа носи три неща:
      - category   → машинно-четима категория (излиза в JSON)
      - exit_code  → код за изход на CLI (0/2/3/4 договор, 1 за всичко останало)
      - http_status → HTTP статус за API-то
    """

    category = "internal"
    exit_code = 1
    http_status = 500

    def to_dict(self):
        return {"error": self.category, "message": str(self)}


class ConfigError(OomSvdError):
    """Невалидни параметри: k, n_b, N, плътност, пътища към файлове..."""
    category = "config"
    exit_code = 2
    http_status = 400


class ShapeError(OomSvdError):
    """Несъвместими размери на матрици/вектори."""
    category = "shape"
    exit_code = 2
    http_status = 400


class CapacityError(OomSvdError):
    """Device бюджетът е изчерпан и няма какво да се освободи."""
    category = "capacity"
    exit_code = 3
    http_status = 507


class UnsupportedScenarioError(CapacityError):
    """OOM degree 2: дори един блок не се побира в бюджета."""
    category = "degree2"

    def __init__(self, message, assessment=None):
        super().__init__(message)
        self.assessment = assessment


class DegenerateInputError(OomSvdError):
    """Нулев вектор там, където трябва да нормализираме."""
    category = "degenerate"
    exit_code = 4
    http_status = 422


class NumericError(OomSvdError):
    """NaN/Inf в итерациите."""
    category = "numeric"
    exit_code = 4
    http_status = 422


class LeaseError(OomSvdError):
    """Опит за evict на блок, който някоя задача още използва."""
    category = "lease"
    http_status = 409


class ResidencyError(OomSvdError):
    """Операция върху блок, който не е на device."""
    category = "residency"
    http_status = 409


class CollectiveError(OomSvdError):
    """Rank-овете са извикали колектива несъвместимо (форма, вид, root)."""
    category = "collective"


class CollectiveTimeout(CollectiveError):
    """Някой rank не е дошъл на колектива навреме."""
    category = "timeout"


class CollectiveAborted(CollectiveError):
    """Групата е abort-ната, защото друг rank е гръмнал."""
    category = "aborted"


def init_error_handlers(app):
    """
    Регистрира глобални обработчици на грешки за API-то.

    Всички отговори са JSON: {"error": <category>, "message": ...}.
    Stack trace никога не стига до клиента, само до лога.
    """

    @app.errorhandler(OomSvdError)
    def domain_error(e):
        app.logger.warning("Request failed: %s (%s)", e, e.category)
        return jsonify(e.to_dict()), e.http_status

    @app.errorhandler(404)
    def not_found(e):
        return jsonify({"error": "not_found", "message": "Not Found"}), 404

    @app.errorhandler(500)
    def server_error(e):
        app.logger.exception("Unhandled exception")
        return jsonify({"error": "internal", "message": "Internal Server Error"}), 500
