"""
Output formatting helpers for btforge
"""

import json
import sys
from collections import Counter
from typing import Dict, Iterable, List, Optional, Sequence, TextIO


def format_percent(value: float, digits: int = 2) -> str:
    """
    Format a rate in [0, 1] as a percentage.

    Args:
        value: Rate
        digits: Decimal places

    Returns:
        Formatted string (e.g., "96.93%")
    """
    return f"{value * 100:.{digits}f}%"


def format_mean_std(mean: float, std: float, digits: int = 3) -> str:
    """Format as 0.971±0.129."""
    return f"{mean:.{digits}f}±{std:.{digits}f}"


def format_table(headers: Sequence[str], rows: Iterable[Sequence], indent: int = 2) -> str:
    """
    Plain-text table; the first column is left aligned, the rest right aligned.

    Args:
        headers: Column titles
        rows: Row values (converted with str)
        indent: Spaces in front of each line

    Returns:
        The table as a single string
    """
    cells = [[str(v) for v in row] for row in rows]
    widths = [len(h) for h in headers]
    for row in cells:
        for i, value in enumerate(row):
            widths[i] = max(widths[i], len(value))

    def line(values):
        parts = [values[0].ljust(widths[0])] + [v.rjust(w) for v, w in zip(values[1:], widths[1:])]
        return ' ' * indent + '  '.join(parts).rstrip()

    out = [line(list(headers)), ' ' * indent + '-' * (sum(widths) + 2 * (len(widths) - 1))]
    out.extend(line(row) for row in cells)
    return '\n'.join(out)


def format_breakdown(counts: Dict[str, int], title: str, top_n: int = 10) -> str:
    """
    Format counts (e.g. failure reasons) into a bar breakdown.

    Args:
        counts: Label to count
        title: Heading line
        top_n: Number of labels to show before folding the rest into "Other"

    Returns:
        Formatted summary string
    """
    total = sum(counts.values())
    if not total:
        return f"No {title.lower()} to summarize"

    ordered = sorted(counts.items(), key=lambda x: (-x[1], x[0]))
    lines = [f"\n{title}:", "-" * 50]
    for label, count in ordered[:top_n]:
        percentage = count / total * 100
        bar = "█" * int(percentage / 2)
        lines.append(f"  {label:<20} {count:>4} ({percentage:>5.1f}%) {bar}")

    if len(ordered) > top_n:
        other = sum(count for _, count in ordered[top_n:])
        lines.append(f"  {'Other':<20} {other:>4} ({other / total * 100:>5.1f}%)")
    return "\n".join(lines)


def count_values(values: Iterable[Optional[str]]) -> Dict[str, int]:
    return dict(Counter(v for v in values if v))


def write_records(records: Iterable[Dict], stream: Optional[TextIO] = None) -> None:
    """Write one JSON object per line with sorted keys."""
    stream = stream or sys.stdout
    for record in records:
        stream.write(json.dumps(record, sort_keys=True) + '\n')


def print_summary(title: str, lines: List[str], elapsed_time: Optional[float] = None) -> None:
    """
    Print a boxed summary of a run.

    Args:
        title: Heading
        lines: Body lines, printed indented
        elapsed_time: Time elapsed in seconds, shown when given
    """
    print("\n" + "=" * 60)
    print(title.upper())
    print("=" * 60)
    for line in lines:
        print(f"  {line}")
    if elapsed_time is not None:
        print(f"\n  ⏱  Done in {elapsed_time:.1f} seconds!")
    print("=" * 60)
