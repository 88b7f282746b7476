import logging
import threading

# Thread local storage for the active run id
_thread_locals = threading.local()


def get_run_id():
    """Get the id of the run executing on this thread"""
    return getattr(_thread_locals, 'run_id', None)


def set_run_id(run_id):
    """Set the id of the run executing on this thread"""
    _thread_locals.run_id = run_id


class RunIdFilter(logging.Filter):
    """
    Make sure every record carries a ``run_id`` attribute so the
    configured formatters can always reference it.
    """
    def filter(self, record):
        if not getattr(record, 'run_id', None):
            record.run_id = get_run_id() or '-'
        return True


class RunLoggerAdapter(logging.LoggerAdapter):
    """
    Logger adapter that automatically adds the run id to log records
    """
    def process(self, msg, kwargs):
        run_id = get_run_id()
        if run_id:
            if 'extra' not in kwargs:
                kwargs['extra'] = {}
            kwargs['extra']['run_id'] = run_id

        return msg, kwargs


def get_logger(name):
    """Get a logger that automatically includes the run id"""
    logger = logging.getLogger(name)
    return RunLoggerAdapter(logger, {})
