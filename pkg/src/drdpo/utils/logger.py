from drdpo.utils.ui import UI


class Logger:
    """User-facing output of the CLI commands, routed through the UI.

    With ``quiet`` set only errors, warnings and verification failures are
    printed.
    """

    def __init__(self, quiet: bool = False):
        self.ui = UI()
        self.quiet = quiet
        self.log = []

    def log_header(self, msg: str):
        self.log.append(msg)
        if not self.quiet:
            self.ui.print_header(msg)

    def log_plan(self, title: str, items):
        items = list(items)
        self.log.extend(items)
        if not self.quiet:
            self.ui.print_plan(title, items)

    def log_check(self, result):
        self.log.append(f"{result.name}: {result.error!r} <= {result.tolerance!r} {result.passed}")
        if result.passed and self.quiet:
            return
        self.ui.print_check(result.name, result.error, result.tolerance, result.passed, result.detail)

    def log_metric(self, name: str, value):
        shown = f"{value:.6g}" if isinstance(value, float) else str(value)
        self.log.append(f"{name}={shown}")
        if not self.quiet:
            self.ui.print_metric(name, shown)

    def log_summary(self, title: str, summary: str):
        self.log.append(summary)
        if not self.quiet:
            self.ui.print_summary(title, summary)

    def log_info(self, msg: str):
        self.log.append(msg)
        if not self.quiet:
            self.ui.print_info(msg)

    def log_error(self, msg: str):
        self.log.append(msg)
        self.ui.print_error(msg)

    def progress(self, message: str, success_message: str = ""):
        """Return a progress context manager for showing loading states."""
        return self.ui.progress(message, success_message)
