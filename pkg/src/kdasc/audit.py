"""Parameter, byte and MAC accounting for model specs, with budget verdicts."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from enum import Enum

from .exceptions import AuditError
from .nn.spec import LayerKind, output_shape

BYTES_PER_PARAM = 4
BUDGET_BYTES = 128 * 1024
BUDGET_MACS = 30_000_000


class MacConvention(str, Enum):
    CONV_FC = "CONV_FC"  # convolutions and dense layers only
    EXTENDED = "EXTENDED"  # plus 2 per BN output element and pool-area per pooled output


@dataclass(frozen=True)
class LayerRow:
    name: str
    params: int
    macs: int
    buffers: int = 0  # non-trainable values stored alongside (BN running stats)

    @property
    def bytes(self):
        return BYTES_PER_PARAM * self.params


@dataclass
class ComplexityReport:
    model: str
    rows: list[LayerRow]
    convention: MacConvention
    budget_bytes: int = BUDGET_BYTES
    budget_macs: int = BUDGET_MACS
    n_models: int = 1
    members: list[str] = field(default_factory=list)

    @property
    def params(self):
        return sum(r.params for r in self.rows)

    @property
    def bytes(self):
        return sum(r.bytes for r in self.rows)

    @property
    def macs(self):
        return sum(r.macs for r in self.rows)

    @property
    def checkpoint_bytes(self):
        return BYTES_PER_PARAM * sum(r.params + r.buffers for r in self.rows)

    @property
    def fits_128KB(self):
        return self.bytes <= self.budget_bytes

    @property
    def fits_30M_macs(self):
        return self.macs <= self.budget_macs

    @property
    def bytes_margin(self):
        """Headroom as a fraction of the budget (negative when over)."""
        return (self.budget_bytes - self.bytes) / self.budget_bytes

    @property
    def macs_margin(self):
        return (self.budget_macs - self.macs) / self.budget_macs


def _layer_costs(layer, in_shape, convention):
    """(params, macs, buffers, out_shape) for one layer; recurses into residual bodies."""
    kind = layer.kind
    out = output_shape(layer, in_shape)
    extended = convention is MacConvention.EXTENDED
    if kind is LayerKind.CONV2D:
        kh, kw = layer.kernel
        cin, cout = in_shape[-1], layer.units
        return kh * kw * cin * cout + cout, out[0] * out[1] * cout * kh * kw * cin, 0, out
    if kind is LayerKind.DENSE:
        fin, fout = in_shape[0], layer.units
        return fin * fout + fout, fin * fout, 0, out
    if kind is LayerKind.BATCHNORM:
        c = in_shape[-1]
        n_out = _size(out)
        return 2 * c, 2 * n_out if extended else 0, 2 * c, out
    if kind is LayerKind.AVGPOOL:
        ph, pw = layer.pool
        return 0, ph * pw * _size(out) if extended else 0, 0, out
    if kind is LayerKind.GLOBALAVGPOOL:
        return 0, in_shape[0] * in_shape[1] * out[0] if extended else 0, 0, out
    if kind in (LayerKind.RELU, LayerKind.DROPOUT, LayerKind.SOFTMAX):
        return 0, 0, 0, out
    if kind is LayerKind.RESIDUAL:
        params = macs = buffers = 0
        shape = in_shape
        for sub in layer.body:
            p, m, b, shape = _layer_costs(sub, shape, convention)
            params, macs, buffers = params + p, macs + m, buffers + b
        # the shortcut addition is one add per element, not a MAC
        return params, macs, buffers, out
    raise AuditError(f"cannot audit layer kind {kind!r}")


def _size(shape):
    n = 1
    for s in shape:
        n *= s
    return n


def audit(spec, convention=MacConvention.CONV_FC) -> ComplexityReport:
    convention = MacConvention(convention)
    rows = []
    shape = tuple(spec.input_shape)
    for i, layer in enumerate(spec.layers):
        if not hasattr(layer, "kind") or not isinstance(layer.kind, LayerKind):
            raise AuditError(f"layer {i}: unknown layer kind {getattr(layer, 'kind', layer)!r}")
        p, m, b, shape = _layer_costs(layer, shape, convention)
        rows.append(LayerRow(f"{i:02d}_{layer.kind.value.lower()}", p, m, b))
    return ComplexityReport(spec.name, rows, convention)


def count_params(spec) -> list[int]:
    return [r.params for r in audit(spec).rows]


def count_macs(spec, convention=MacConvention.CONV_FC) -> list[int]:
    return [r.macs for r in audit(spec, convention).rows]


def ensemble(reports: list[ComplexityReport], name="ensemble") -> ComplexityReport:
    """Sum member reports; rows are prefixed with the member name."""
    if not reports:
        raise AuditError("ensemble needs at least one member")
    conventions = {r.convention for r in reports}
    if len(conventions) != 1:
        raise AuditError("ensemble members use different MAC conventions")
    rows = [
        LayerRow(f"{i}:{r.model}/{row.name}", row.params, row.macs, row.buffers)
        for i, r in enumerate(reports)
        for row in r.rows
    ]
    return ComplexityReport(name, rows, conventions.pop(), n_models=len(reports), members=[r.model for r in reports])


def check_budgets(report: ComplexityReport, budgets=None) -> dict:
    budgets = budgets or {"bytes": BUDGET_BYTES, "macs": BUDGET_MACS}
    report.budget_bytes = budgets["bytes"]
    report.budget_macs = budgets["macs"]
    return {
        "fits_128KB": report.fits_128KB,
        "fits_30M_macs": report.fits_30M_macs,
        "bytes_margin_pct": 100.0 * report.bytes_margin,
        "macs_margin_pct": 100.0 * report.macs_margin,
    }


def verdict_line(report: ComplexityReport) -> str:
    """Single machine-readable line for CI gating."""
    ok = report.fits_128KB and report.fits_30M_macs
    return (
        f"{'FITS' if ok else 'EXCEEDS'}\tbytes={report.bytes}/{report.budget_bytes}"
        f"\tbytes_margin={100 * report.bytes_margin:+.1f}%"
        f"\tmacs={report.macs}/{report.budget_macs}\tmacs_margin={100 * report.macs_margin:+.1f}%"
        f"\tconvention={report.convention.value}"
    )


def format_report(report: ComplexityReport) -> str:
    """Tab-separated per-layer table followed by totals and the verdict line."""
    out = io.StringIO()
    out.write("layer\tparams\tbytes\tmacs\tcheckpoint_bytes\n")
    for r in report.rows:
        out.write(f"{r.name}\t{r.params}\t{r.bytes}\t{r.macs}\t{BYTES_PER_PARAM * (r.params + r.buffers)}\n")
    out.write(f"TOTAL\t{report.params}\t{report.bytes}\t{report.macs}\t{report.checkpoint_bytes}\n")
    out.write(verdict_line(report) + "\n")
    return out.getvalue()


# Published per-student figures; our counts are reported next to these rather
# than tuned to match them.
REFERENCE_PARAMS_3_STUDENTS = 22962
REFERENCE_BYTES_3_STUDENTS = 88704
REFERENCE_MACS_PER_STUDENT = 9.75e6
REFERENCE_MACS_3_STUDENTS = 29_267_550


def reconciliation(spec) -> str:
    """Our counts under both conventions beside the published figures."""
    conv = audit(spec, MacConvention.CONV_FC)
    ext = audit(spec, MacConvention.EXTENDED)
    lines = [
        "quantity\tours\treference\tgap",
        f"params (3 models)\t{3 * conv.params}\t{REFERENCE_PARAMS_3_STUDENTS}\t{3 * conv.params - REFERENCE_PARAMS_3_STUDENTS:+d}",
        f"bytes (3 models)\t{3 * conv.bytes}\t{REFERENCE_BYTES_3_STUDENTS}\t{3 * conv.bytes - REFERENCE_BYTES_3_STUDENTS:+d}",
        f"MACs/model CONV_FC\t{conv.macs}\t{REFERENCE_MACS_PER_STUDENT:.0f}\t{conv.macs - REFERENCE_MACS_PER_STUDENT:+.0f}",
        f"MACs/model EXTENDED\t{ext.macs}\t{REFERENCE_MACS_PER_STUDENT:.0f}\t{ext.macs - REFERENCE_MACS_PER_STUDENT:+.0f}",
        f"MACs (3 models) CONV_FC\t{3 * conv.macs}\t{REFERENCE_MACS_3_STUDENTS}\t{3 * conv.macs - REFERENCE_MACS_3_STUDENTS:+d}",
    ]
    return "\n".join(lines) + "\n"
