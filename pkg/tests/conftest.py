import sqlite3

import pytest

# lines appended by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_lines():
    return ACCEPTANCE_LINES


@pytest.fixture
def company_db(tmp_path):
    """Small two-table database; returns the file path."""
    path = tmp_path / "company.sqlite"
    con = sqlite3.connect(path)
    con.executescript(
        """
        CREATE TABLE dept (id INTEGER PRIMARY KEY, name TEXT);
        CREATE TABLE emp (id INTEGER PRIMARY KEY, name TEXT, dept_id INTEGER, salary REAL, photo BLOB);
        INSERT INTO dept VALUES (1, 'eng'), (2, 'ops');
        INSERT INTO emp VALUES
            (1, 'ada', 1, 120.5, x'00ff'),
            (2, 'bob', 1, 99.0, NULL),
            (3, 'cy', 2, 80.25, NULL),
            (4, 'dee', NULL, NULL, NULL);
        """
    )
    con.commit()
    con.close()
    return path
