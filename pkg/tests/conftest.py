import csv

import pytest

from saferec.data import InteractionRecord
from saferec.selection import UserCandidates

CANONICAL = ["user_id", "item_id", "timestamp_ms", "watch_time_s", "duration_s", "flagged"]


def rec(user="u", item="i", ts=0, watch=5.0, duration=10.0, flagged=False, view=1):
    return InteractionRecord(user, item, ts, watch, duration, flagged, view)


def write_csv(path, rows, header=CANONICAL):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


@pytest.fixture
def four_item_user():
    """Scores 5, 1, 1, 1 for D, A, B, C with only D flagged."""
    return UserCandidates(
        user_id="u",
        items=("A", "B", "C", "D"),
        scores=[1.0, 1.0, 1.0, 5.0],
        flags=[False, False, False, True],
    )


@pytest.fixture
def four_item_user_with_safe_item(four_item_user):
    """Same user plus a re-viewable unflagged item E watched to 80%."""
    hist = (rec("u", "E", ts=1, watch=8.0, duration=10.0),)
    return UserCandidates(
        user_id="u",
        items=four_item_user.items,
        scores=four_item_user.scores,
        flags=four_item_user.flags,
        history=hist,
        revealed={"E": False},
    )


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
