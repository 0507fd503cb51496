"""Plain record types shared by the flow integrator and the diagnostics drivers."""

from dataclasses import dataclass, fields

RECORD_COLUMNS = (
    "tau", "E_m", "kosc", "Lambda", "grad_norm_sq", "closure_residual",
    "length", "physical_time", "resonant_norm",
)


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Scalar diagnostics of one recorded flow state (normalised scaling)."""

    tau: float
    E_m: float
    kosc: float
    Lambda: float
    grad_norm_sq: float
    closure_residual: float
    length: float
    physical_time: float
    resonant_norm: float

    def as_row(self):
        return [getattr(self, name) for name in RECORD_COLUMNS]


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one verification check; ``passed`` is decided by the check."""

    name: str
    passed: bool
    measured: float
    bound: float
    tolerance: float
    context: str = ""

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}
