# rgbethe/config.py
from __future__ import annotations

import logging
import os
from typing import Optional

# ----------------------------
# Tolerances
# ----------------------------
TAU_RESIDUAL = 1e-10        # absolute, on scaled residuals
TAU_CONJ = 1e-8             # relative, conjugation closure / Im Λ
TAU_COINCIDE = 1e-12        # times level spread
TAU_POLISH = 1e-10

# ----------------------------
# Capacities
# ----------------------------
ED_DIM_CAP = 20_000
DENSE_DIM_CAP = 200_000
SUM_RULE_THRESHOLD = 1e-3

# ----------------------------
# Continuation defaults
# ----------------------------
G_SMALL_FACTOR = 1e-3       # |g_small| = factor * mean level spacing
NEWTON_MAX_ITER = 25
STEP_GROW = 1.5
CLEAN_STEPS_TO_GROW = 3
CROSSING_PERTURBATION = 1e-9

THREADS_ENV = "RG_BETHE_THREADS"


def resolve_threads(cli: Optional[int] = None, job: Optional[int] = None) -> int:
    """
    Thread count, first hit wins:
      - explicit CLI value
      - job file `threads`
      - RG_BETHE_THREADS
      - auto (cpu count)
    """
    for candidate in (cli, job):
        if candidate is not None and int(candidate) > 0:
            return int(candidate)
    raw = os.environ.get(THREADS_ENV, "").strip()
    if raw:
        try:
            n = int(raw)
        except ValueError:
            n = 0
        if n > 0:
            return n
    return max(1, os.cpu_count() or 1)


def setup_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING
    root = logging.getLogger("rgbethe")
    root.setLevel(level)
    if not root.handlers:
        h = logging.StreamHandler()
        h.setFormatter(logging.Formatter("[%(levelname)s] %(name)s: %(message)s"))
        root.addHandler(h)
