#!/usr/bin/env python3
"""Deterministic stand-in for an external simulation code.

Usage: ``mock_solver.py <input-file>``. The input file holds ``name = value``
lines (``#`` starts a comment). Keys starting with ``solver_`` configure the
solver; every other key is a model parameter, taken in file order. Results
are written to ``output.csv`` in the working directory, one value per line.

Solver keys:
    solver_mode            ``sum`` (default): y = sum of parameters.
                           ``beam``: y_k = 1000 c_k^2 / p0 + p1 c_k at the
                           coordinates ``solver_coords`` (default 0.1..1.0).
    solver_coords          Comma-separated observation coordinates.
    solver_sleep           Seconds to sleep before computing.
    solver_crash           Non-zero: print to stderr and exit with code 3.
    solver_fail_corner     ``a, b``: exit 1 ("did not converge") when
                           p0 > a and p1 < b.
    solver_fail_unless_retry
                           Non-zero: exit 1 unless the working directory name
                           contains ``_retry``.

Only the standard library is used so the solver starts fast with ``-I -S``.
"""

import os
import sys
import time

DEFAULT_COORDS = [round(0.1 * k, 1) for k in range(1, 11)]


def parse_input(path):
    settings, params = {}, []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'name = value'")
            key, value = (t.strip() for t in line.split("=", 1))
            if key.startswith("solver_"):
                settings[key] = value
            else:
                params.append((key, float(value)))
    return settings, params


def main(argv):
    if len(argv) < 2:
        print("usage: mock_solver.py <input-file>", file=sys.stderr)
        return 2
    settings, params = parse_input(argv[-1])
    values = [v for _, v in params]

    sleep = float(settings.get("solver_sleep", "0"))
    if sleep > 0:
        time.sleep(sleep)
    if float(settings.get("solver_crash", "0")) != 0:
        print("mock solver: forced crash", file=sys.stderr)
        return 3
    if float(settings.get("solver_fail_unless_retry", "0")) != 0:
        if "_retry" not in os.path.basename(os.getcwd()):
            print("mock solver: transient failure", file=sys.stderr)
            return 1
    corner = settings.get("solver_fail_corner")
    if corner:
        a, b = (float(t) for t in corner.split(","))
        if values[0] > a and values[1] < b:
            print("mock solver: nonlinear solver did not converge", file=sys.stderr)
            return 1

    mode = settings.get("solver_mode", "sum")
    if mode == "sum":
        outputs = [sum(values)]
    elif mode == "beam":
        coords = settings.get("solver_coords")
        coords = [float(c) for c in coords.split(",")] if coords else DEFAULT_COORDS
        stiffness, ratio = values[0], values[1]
        outputs = [1000.0 * c * c / stiffness + ratio * c for c in coords]
    else:
        print(f"mock solver: unknown mode {mode}", file=sys.stderr)
        return 2

    with open("output.csv", "w") as fh:
        for y in outputs:
            fh.write(repr(float(y)) + "\n")
    print(f"mock solver: wrote {len(outputs)} value(s)")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
