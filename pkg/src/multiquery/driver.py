"""External-solver driver: template rendering, job execution, output extraction."""

import logging
import math
import os
import re
import shlex
import shutil
import signal
import subprocess
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from multiquery.models import COMPLETED, FAILED, TIMED_OUT

_logger = logging.getLogger(__name__)

PLACEHOLDER = re.compile(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}")
INPUT_NAME = "input.rendered"
STDOUT_NAME = "stdout.log"
STDERR_NAME = "stderr.log"
EXTRACTORS = ("csv_scalar_column", "csv_vector_row", "single_number_file")


class TemplateError(ValueError):
    """Unresolved placeholder or unused parameter."""


class DriverError(ValueError):
    """Invalid driver configuration."""


def format_value(value):
    """Decimal text for a parameter value.

    Integral values print without a fractional part; other reals use the
    shortest repr that round-trips (at most 17 significant digits).
    """
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    v = float(value)
    if math.isfinite(v) and v == int(v) and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def template_placeholders(template):
    return [m.group(1) for m in PLACEHOLDER.finditer(template)]


def render_template(template, params):
    """Substitute every ``{{ name }}`` placeholder.

    Raises:
        TemplateError: if a placeholder has no value (``unresolved placeholder
            <name>``) or a parameter never appears (``unused parameter <name>``).
    """
    used = set(template_placeholders(template))
    for name in template_placeholders(template):
        if name not in params:
            raise TemplateError(f"unresolved placeholder {name}")
    for name in params:
        if name not in used:
            raise TemplateError(f"unused parameter {name}")
    return PLACEHOLDER.sub(lambda m: format_value(params[m.group(1)]), template)


# --------------------------------------------------------------------------
# output extractors
# --------------------------------------------------------------------------


def _parse_floats(tokens):
    return np.array([float(t) for t in tokens], dtype=float)


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def extract_output(path, extractor):
    """Read the declared output file into a vector of floats."""
    text = Path(path).read_text()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"output file {path} is empty")
    if extractor == "csv_scalar_column":
        if not _is_number(lines[0].split(",")[-1]):
            lines = lines[1:]  # header
        values = _parse_floats(ln.split(",")[-1] for ln in lines)
    elif extractor == "csv_vector_row":
        row = lines[-1] if len(lines) > 1 and not _is_number(lines[0].split(",")[0]) else lines[0]
        values = _parse_floats(t for t in row.split(",") if t.strip())
    elif extractor == "single_number_file":
        if len(lines) != 1:
            raise ValueError(f"expected a single number in {path}, found {len(lines)} lines")
        values = _parse_floats([lines[0]])
    else:
        raise ValueError(f"unknown extractor '{extractor}'")
    if values.size == 0:
        raise ValueError(f"no values in {path}")
    return values


# --------------------------------------------------------------------------
# configuration and records
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DriverConfig:
    """How to turn one parameter row into one solver run.

    Attributes:
        executable: Path of the solver, or a command prefix list. A ``.py``
            path is launched with the current interpreter.
        template: Path of the input-file template.
        output_file: Output file name relative to the job directory.
        extractor: One of ``csv_scalar_column``, ``csv_vector_row``,
            ``single_number_file``.
        timeout: Wall-clock limit per job in seconds.
        extra_args: Arguments placed before the input-file path.
        output_dim: Expected output length, checked after parsing if set.
    """

    executable: object
    template: str
    output_file: str = "output.csv"
    extractor: str = "csv_scalar_column"
    timeout: float = 3600.0
    extra_args: tuple = ()
    output_dim: int = None
    template_text: str = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        tpath = Path(self.template)
        if self.template_text is None:
            if not tpath.is_file():
                raise DriverError(f"template file not found: {self.template}")
            try:
                text = tpath.read_text()
            except OSError as exc:
                raise DriverError(f"template not readable: {exc}") from None
            object.__setattr__(self, "template_text", text)
        if not self.timeout > 0:
            raise DriverError("timeout must be positive")
        if self.extractor not in EXTRACTORS:
            raise DriverError(f"unknown extractor '{self.extractor}', expected one of {EXTRACTORS}")
        if isinstance(self.extra_args, str):
            object.__setattr__(self, "extra_args", tuple(shlex.split(self.extra_args)))
        else:
            object.__setattr__(self, "extra_args", tuple(str(a) for a in self.extra_args))

    @property
    def placeholders(self):
        return tuple(dict.fromkeys(template_placeholders(self.template_text)))

    def command(self, input_path):
        exe = self.executable
        prefix = list(exe) if isinstance(exe, (list, tuple)) else [str(exe)]
        if len(prefix) == 1 and prefix[0].endswith(".py"):
            prefix = [sys.executable, prefix[0]]
        return [*prefix, *self.extra_args, str(input_path)]


@dataclass(frozen=True, eq=False)
class JobRecord:
    """Outcome of one solver run; created once by the worker that ran it."""

    job_id: int
    row: tuple
    input_path: str
    workdir: str
    exit_code: int
    status: str
    output: np.ndarray
    wall_time: float
    stdout_path: str
    stderr_path: str
    diagnostic: str = ""
    attempt: int = 0


def job_dirname(job_id, attempt=0):
    return f"job_{job_id}" if attempt == 0 else f"job_{job_id}_retry{attempt}"


def _terminate(proc):
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass
    except OSError:  # pragma: no cover - non-POSIX fallback
        proc.kill()


def execute_job(config, params, job_id, workspace, attempt=0):
    """Render, run and parse one job inside ``workspace/job_<id>/``.

    Args:
        config: The :class:`DriverConfig`.
        params: Mapping of parameter name to value.
        job_id: Integer id, unique within the workspace.
        workspace: Root directory under which the job directory is created.
        attempt: Retry counter; ``k > 0`` uses ``job_<id>_retry<k>``.

    Returns:
        A :class:`JobRecord`. Solver failures never raise; template errors do.
    """
    params = dict(params)
    rendered = render_template(config.template_text, params)
    nan_out = np.full(config.output_dim or 1, np.nan)
    workdir = Path(workspace) / job_dirname(job_id, attempt)
    if workdir.exists():
        shutil.rmtree(workdir)
    workdir.mkdir(parents=True)
    input_path = workdir / INPUT_NAME
    input_path.write_text(rendered)
    stdout_path = workdir / STDOUT_NAME
    stderr_path = workdir / STDERR_NAME
    row = tuple(float(v) for v in params.values())
    cmd = config.command(input_path.resolve())

    t0 = time.perf_counter()
    exit_code = None
    status = FAILED
    diagnostic = ""
    output = nan_out
    with open(stdout_path, "wb") as out, open(stderr_path, "wb") as err:
        try:
            proc = subprocess.Popen(
                cmd, cwd=workdir, stdout=out, stderr=err, start_new_session=True
            )
        except OSError as exc:
            diagnostic = f"could not start solver: {exc}"
            exit_code = -1
        else:
            try:
                exit_code = proc.wait(timeout=config.timeout)
            except subprocess.TimeoutExpired:
                _terminate(proc)
                proc.wait()
                exit_code = proc.returncode
                status = TIMED_OUT
                diagnostic = f"timeout after {config.timeout:g} s"
    wall = time.perf_counter() - t0

    if status != TIMED_OUT and exit_code == 0:
        out_path = workdir / config.output_file
        if not out_path.is_file():
            diagnostic = f"output file {config.output_file} missing"
        else:
            try:
                values = extract_output(out_path, config.extractor)
            except (ValueError, OSError) as exc:
                diagnostic = f"unparseable output: {exc}"
            else:
                if config.output_dim is not None and values.size != config.output_dim:
                    diagnostic = f"expected {config.output_dim} outputs, parsed {values.size}"
                elif not np.all(np.isfinite(values)):
                    diagnostic = "non-finite value in output"
                else:
                    status = COMPLETED
                    output = values
    elif status != TIMED_OUT and not diagnostic:
        diagnostic = f"solver exited with code {exit_code}"

    return JobRecord(
        job_id=int(job_id),
        row=row,
        input_path=str(input_path),
        workdir=str(workdir),
        exit_code=exit_code,
        status=status,
        output=output,
        wall_time=wall,
        stdout_path=str(stdout_path),
        stderr_path=str(stderr_path),
        diagnostic=diagnostic,
        attempt=attempt,
    )


def mock_solver_path():
    """Filesystem path of the bundled mock solver script."""
    return str(Path(__file__).with_name("mock_solver.py"))


def mock_solver_command():
    """Fast-start command prefix for the mock solver (stdlib only, no site packages)."""
    return (sys.executable, "-I", "-S", mock_solver_path())
