"""Error handling for command-line entry points."""

from functools import wraps
import sys
import traceback

from adareg.utils.exceptions import AdaRegError, StorageError
from adareg.utils.logger import setup_logger

logger = setup_logger('ErrorHandler')


def handle_cli_errors(f):
    """Decorator turning exceptions raised by a subcommand into exit codes.

    Returns 0 on success, the error's ``exit_code`` for package errors,
    3 for unhandled ``OSError`` and 2 for anything else.
    """
    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            result = f(*args, **kwargs)
            return 0 if result is None else int(result)
        except AdaRegError as e:
            logger.error(f"{f.__name__} failed: {e.message}")
            print(f"error: {e.message}", file=sys.stderr)
            return e.exit_code
        except OSError as e:
            logger.error(f"I/O failure in {f.__name__}: {e}")
            print(f"error: {e}", file=sys.stderr)
            return StorageError.exit_code
        except Exception as e:
            logger.error(f"Unhandled error in {f.__name__}: {str(e)}\n{traceback.format_exc()}")
            print(f"error: {e}", file=sys.stderr)
            return 2
    return decorated_function
