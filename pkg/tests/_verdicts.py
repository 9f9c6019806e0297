"""Registry of acceptance-criterion verdict lines.

The conftest terminal-summary hook replays these after the run so every
criterion's pass/fail line is visible even when its test passes (pytest
normally swallows stdout of passing tests).
"""

lines = []


def record(num: int, name: str, ok: bool, detail: str = "") -> str:
    verdict = "PASS" if ok else "FAIL"
    line = f"criterion {num} ({name}): {verdict}"
    if detail:
        line += f" [{detail}]"
    lines.append(line)
    return line
