"""Why a measure made of a few atoms cannot be pushed onto a spread-out one.

Run with ``python3 demos/atomic_obstruction.py``. A Lipschitz flow moves atoms
but never splits them, so 2^(n-1) equal atoms stay at least eps_n/(2 sqrt 3)
away from the uniform measure on [0, 1] however they are relocated.
"""

from __future__ import annotations

from wstab import run_counterexample

print(" n   eps_n     w2 to uniform   eps_n/(2 sqrt 3)   best relocation")
for row in run_counterexample(6, 4096):
    print(
        f" {row.n}   {row.eps_n:<8g}  {row.w2:.8f}      {row.analytic:.8f}         {row.relocation_min_w2:.8f}"
    )
