"""
KS Lab - Logger
Catalog-keyed logging on top of rich, plus console helpers for the CLI
"""

import logging
from pathlib import Path
from typing import Optional

from rich.console import Console
from rich.logging import RichHandler
from rich.progress import (
    BarColumn, MofNCompleteColumn, Progress, SpinnerColumn,
    TaskProgressColumn, TextColumn, TimeElapsedColumn, TimeRemainingColumn,
)

from .i18n import get_i18n

LOG_FILE = "kslab.log"

VERBOSITY_LEVELS = {
    "quiet": logging.ERROR,
    "normal": logging.WARNING,
    "verbose": logging.INFO,
    "debug": logging.DEBUG,
}

# Third-party loggers that flood DEBUG during kernel compilation
NOISY_LOGGERS = ("numba", "numba.core")

console = Console()


class Logger:
    """
    Logger taking catalog keys instead of messages.

    The key is resolved against the active language only when the record
    would actually be emitted, so debug calls inside the step loop cost a
    level check and nothing else.
    """

    def __init__(self, name: str):
        self.logger = logging.getLogger(name)
        self.i18n = get_i18n()

    def _emit(self, level: int, key: str, kwargs: dict):
        if self.logger.isEnabledFor(level):
            self.logger.log(level, self.i18n.get(key, **kwargs))

    def debug(self, key: str, **kwargs):
        self._emit(logging.DEBUG, key, kwargs)

    def info(self, key: str, **kwargs):
        self._emit(logging.INFO, key, kwargs)

    def warning(self, key: str, **kwargs):
        self._emit(logging.WARNING, key, kwargs)

    def error(self, key: str, **kwargs):
        self._emit(logging.ERROR, key, kwargs)


def setup_logging(log_dir: Optional[Path] = None, verbosity: str = "normal"):
    """
    Configure the root logger

    Args:
        log_dir: Directory for kslab.log; None disables the file handler
        verbosity: quiet, normal, verbose or debug (console level only)
    """
    debug = verbosity == "debug"
    console_handler = RichHandler(
        console=console,
        show_time=debug,
        show_path=debug,
        markup=False,
        rich_tracebacks=True,
    )
    console_handler.setLevel(VERBOSITY_LEVELS.get(verbosity, logging.WARNING))
    handlers = [console_handler]

    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_dir / LOG_FILE, encoding="utf-8")
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(logging.Formatter(
            "%(asctime)s %(processName)s %(name)s %(levelname)s: %(message)s"
        ))
        handlers.append(file_handler)

    for name in NOISY_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)

    logging.basicConfig(level=logging.DEBUG, handlers=handlers, force=True)


def get_logger(name: str) -> Logger:
    return Logger(name)


def make_progress(transient: bool = True) -> Progress:
    """Progress bar for replica batches: done/total, elapsed and ETA"""
    return Progress(
        SpinnerColumn(),
        TextColumn("[bold blue]{task.description}"),
        BarColumn(complete_style="green", finished_style="bold green"),
        TaskProgressColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        TimeRemainingColumn(),
        console=console,
        transient=transient,
    )


_MARKERS = {
    "success": "[green]✓[/green]",
    "error": "[red]✗[/red]",
    "warning": "[yellow]⚠[/yellow]",
    "info": "[blue]ℹ[/blue]",
}


def _mark(kind: str, text: str):
    console.print(f"{_MARKERS[kind]} {text}", highlight=False)


def print_header(text: str):
    console.print(f"\n[bold cyan]{text}[/bold cyan]\n")


def print_success(text: str):
    _mark("success", text)


def print_error(text: str):
    _mark("error", text)


def print_warning(text: str):
    _mark("warning", text)


def print_info(text: str):
    _mark("info", text)
