# Утилити за CLI командите
# -----------------------------------------------------
#  - handle_errors → декоратор: грешка на приложението → JSON на stderr + exit code
#  - parse_int_list → "2,4,8" → [2, 4, 8]
#
# Договор за exit code: 0 успех, 2 конфигурация/форма, 3 капацитет/degree 2,
# 4 числена/дегенерирана, 1 всичко останало.
# -----------------------------------------------------

import json

import click
from flask import current_app

from ..errors import OomSvdError, ConfigError


def _fail(payload, code):
    click.echo(json.dumps(payload), err=True)
    raise SystemExit(code)


def handle_errors(fn):
    """
    Декоратор за click команди.

    Поведение:
      - OomSvdError → {"error": category, "message": ...} на stderr, exit_code на грешката
      - OSError (неписваем път и т.н.) → категория "io", exit 1
      - всичко друго → "internal", exit 1, traceback само в лога
    """
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except OomSvdError as e:
            current_app.logger.warning("Command failed: %s (%s)", e, e.category)
            _fail(e.to_dict(), e.exit_code)
        except OSError as e:
            current_app.logger.warning("Command failed on I/O: %s", e)
            _fail({"error": "io", "message": str(e)}, 1)
        except (SystemExit, click.exceptions.Exit, click.ClickException):
            raise
        except Exception as e:
            current_app.logger.exception("Unhandled error in command")
            _fail({"error": "internal", "message": str(e)}, 1)

    # click взима името и help текста от функцията
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def parse_int_list(text, name="list"):
    try:
        values = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{name}: expected comma-separated integers, got {text!r}") from None
    if not values:
        raise ConfigError(f"{name}: empty list")
    return values
