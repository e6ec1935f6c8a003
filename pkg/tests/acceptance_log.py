"""Result lines collected by the acceptance suite."""

LINES: list[str] = []
