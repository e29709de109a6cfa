from drdpo import __version__


def print_intro():
    """Display the banner with ASCII art."""
    # ANSI color codes
    CYAN = "\033[96m"
    GOLD = "\033[93m"
    RESET = "\033[0m"
    BOLD = "\033[1m"

    print()

    box_width = 50
    welcome_text = f"drdpo {__version__}"
    padding = (box_width - len(welcome_text) - 2) // 2

    print(f"{CYAN}{'═' * box_width}{RESET}")
    print(f"{CYAN}║{' ' * padding}{BOLD}{welcome_text}{RESET}{CYAN}{' ' * (box_width - len(welcome_text) - padding - 2)}║{RESET}")
    print(f"{CYAN}{'═' * box_width}{RESET}")
    print()

    art = f"""{BOLD}{CYAN}    ██████╗ ██████╗    ██████╗ ██████╗  ██████╗
    ██╔══██╗██╔══██╗   ██╔══██╗██╔══██╗██╔═══██╗
    ██║  ██║██████╔╝   ██║  ██║██████╔╝██║   ██║
    ██║  ██║██╔══██╗   ██║  ██║██╔═══╝ ██║   ██║
    ██████╔╝██║  ██║██╗██████╔╝██║     ╚██████╔╝
    ╚═════╝ ╚═╝  ╚═╝╚═╝╚═════╝ ╚═╝      ╚═════╝{RESET}"""

    print(art)
    print()
    print(f"{GOLD}      Distributionally robust preference optimization{RESET}")
    print()
