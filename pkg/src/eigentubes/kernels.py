"""Backend selection for the integrator kernel.

The compiled extension is preferred; the pure-Python twin is used when the
extension is unavailable or when EIGENTUBES_PURE_PYTHON=1 is set.  Both
expose the same two functions:

conformal_flow(a, q, z0, t, step, tol, renormalize, want_jac)
    -> (z, jac_or_None, conorm_drift, n_steps)
conformal_flow_dense(a, q, z0, ts, step, tol, renormalize)
    -> (trajectory, conorm_drift)
"""

from __future__ import annotations

import os

if os.environ.get("EIGENTUBES_PURE_PYTHON", "") == "1":
    from . import _stepper_py as _impl
else:
    try:
        from . import _stepper as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _stepper_py as _impl

BACKEND = _impl.BACKEND
conformal_flow = _impl.conformal_flow
conformal_flow_dense = _impl.conformal_flow_dense


def backend_name() -> str:
    return BACKEND
