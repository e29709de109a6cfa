import itertools
import sys
import threading
from contextlib import contextmanager
from typing import Iterable, Optional


class Colors:
    RED = "\033[91m"
    GREEN = "\033[92m"
    YELLOW = "\033[93m"
    CYAN = "\033[96m"
    ENDC = "\033[0m"
    BOLD = "\033[1m"
    DIM = "\033[2m"


class Spinner:
    """Braille spinner drawn from a daemon thread while a command works.

    Off a terminal (pipes, CliRunner) nothing animates; only the final
    message is printed.
    """

    FRAMES = "⠋⠙⠹⠸⠼⠴⠦⠧⠇⠏"
    INTERVAL = 0.08

    def __init__(self, message: str = "", color: str = Colors.CYAN):
        self.message = message
        self.color = color
        self.animated = sys.stdout.isatty()
        self._done = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def _animate(self):
        for frame in itertools.cycle(self.FRAMES):
            if self._done.wait(self.INTERVAL):
                break
            sys.stdout.write(f"\r{self.color}{frame}{Colors.ENDC} {self.message}")
            sys.stdout.flush()

    def start(self):
        if self.animated and self._thread is None:
            self._done.clear()
            self._thread = threading.Thread(target=self._animate, daemon=True)
            self._thread.start()

    def stop(self, final_message: str = "", symbol: str = "✓", symbol_color: str = Colors.GREEN):
        """Stop drawing, wipe the spinner line and print ``final_message`` if given."""
        self._done.set()
        if self._thread is not None:
            self._thread.join()
            self._thread = None
            sys.stdout.write("\r" + " " * (len(self.message) + 10) + "\r")
        if final_message:
            print(f"{symbol_color}{symbol}{Colors.ENDC} {final_message}")
        sys.stdout.flush()


class UI:
    """Terminal presentation of commands: headers, check lines, metric boxes."""

    def __init__(self):
        self.current_spinner: Optional[Spinner] = None

    @contextmanager
    def progress(self, message: str, success_message: str = ""):
        """Context manager for showing progress with a spinner."""
        spinner = Spinner(message)
        self.current_spinner = spinner
        spinner.start()
        try:
            yield spinner
            spinner.stop(success_message or message.replace("...", " ✓"))
        except Exception as e:
            spinner.stop(f"Failed: {str(e)}", symbol="✗", symbol_color=Colors.RED)
            raise
        finally:
            self.current_spinner = None

    def print_header(self, text: str):
        print(f"\n{Colors.BOLD}{Colors.CYAN}╭─ {text}{Colors.ENDC}")

    def print_plan(self, title: str, items: Iterable[str]):
        """Print what a command is about to do, one item per line."""
        items = list(items)
        if not items:
            return
        self.print_header(title)
        for item in items:
            print(f"{Colors.CYAN}│{Colors.ENDC} {Colors.DIM}+{Colors.ENDC} {item}")
        print(f"{Colors.CYAN}╰{'─' * 50}{Colors.ENDC}\n")

    def print_check(self, name: str, error: float, tolerance: float, passed: bool, detail: str = ""):
        """One verification line: status, name, measured error against tolerance."""
        mark = f"{Colors.GREEN}✓ PASS{Colors.ENDC}" if passed else f"{Colors.RED}✗ FAIL{Colors.ENDC}"
        extra = f" {Colors.DIM}│ {detail}{Colors.ENDC}" if detail else ""
        print(f"  {mark} {name:<28} error {error:.3e}  tol {tolerance:.1e}{extra}")

    def print_metric(self, name: str, value: str):
        print(f"  {Colors.YELLOW}•{Colors.ENDC} {name}: {value}")

    def print_summary(self, title: str, body: str):
        """Print a result in a box at least 80 columns wide, widened to fit the longest line."""
        lines = body.split('\n')
        width = max(80, len(title) + 4, max(len(line) for line in lines) + 4)

        print(f"\n{Colors.BOLD}{Colors.CYAN}╔{'═' * (width - 2)}╗{Colors.ENDC}")

        padding = (width - len(title) - 2) // 2
        print(f"{Colors.BOLD}{Colors.CYAN}║{' ' * padding}{title}{' ' * (width - len(title) - padding - 2)}║{Colors.ENDC}")

        print(f"{Colors.CYAN}╠{'═' * (width - 2)}╣{Colors.ENDC}")

        for line in lines:
            print(f"{Colors.CYAN}║{Colors.ENDC} {line.ljust(width - 4)} {Colors.CYAN}║{Colors.ENDC}")

        print(f"{Colors.BOLD}{Colors.CYAN}╚{'═' * (width - 2)}╝{Colors.ENDC}\n")

    def print_info(self, message: str):
        print(f"{Colors.DIM}{message}{Colors.ENDC}")

    def print_error(self, message: str):
        print(f"{Colors.RED}✗ Error:{Colors.ENDC} {message}")
