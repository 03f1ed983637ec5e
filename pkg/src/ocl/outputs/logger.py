import logging
import os

FORMAT = "%(asctime)s %(levelname)s | %(name)s | %(message)s"


def get_logger(name: str = "ocl", logs_dir: str | None = "logs", level: int = logging.INFO):
    """
    Wire the `name` logger once: a stream handler, plus a file handler the
    first time a `logs_dir` is given. Library modules log under `ocl.*`, so
    wiring the package logger covers all of them.
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)
    fmt = logging.Formatter(FORMAT, "%Y-%m-%d %H:%M:%S")
    if not any(type(h) is logging.StreamHandler for h in logger.handlers):
        ch = logging.StreamHandler()
        ch.setFormatter(fmt)
        logger.addHandler(ch)
    if logs_dir and not any(isinstance(h, logging.FileHandler) for h in logger.handlers):
        os.makedirs(logs_dir, exist_ok=True)
        fh = logging.FileHandler(os.path.join(logs_dir, f"{name}.log"))
        fh.setFormatter(fmt)
        logger.addHandler(fh)
    return logger
