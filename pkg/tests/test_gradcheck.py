import numpy as np
import pytest

from freqpriv.core.errors import NumericalError
from freqpriv.frequency.fdaf import fdaf_graph
from freqpriv.pipeline.gradcheck_suite import check_total_loss, op_cases, run_gradcheck_suite
from freqpriv.tensor.gradcheck import gradcheck, gradcheck_scalar, numerical_grad
from freqpriv.tensor.ops import OPS, SILU, Op
from freqpriv.tensor.tape import Tape

LINEAR_OPS = ["dft2", "idft2", "conv1x1", "conv3x3s2", "bilinear_resize", "add", "scale", "concat_channels"]


# ---------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------

class BrokenSilu(Op):
    """SiLU whose VJP drops the x·σ'(x) term."""

    name = "silu"

    def forward(self, x):
        return SILU.forward(x)

    def vjp(self, ctx, grad):
        _, s = ctx
        return (grad * s,)


def fdaf_loss(params, direction):
    """Projection of the FDAF output onto ``direction``, with gradients."""
    tape = Tape()
    out = fdaf_graph(
        tape,
        tape.leaf("x", params["x"]),
        tape.leaf("gate_logits", params["gate_logits"]),
        tape.leaf("fusion_weight", params["fusion_weight"]),
        tape.leaf("fusion_bias", params["fusion_bias"]),
    )
    value = float(np.sum(out.value * direction))
    return value, tape.backward(out, grad=direction)


# ---------------------------------------------------------------------
# Op-level checks
# ---------------------------------------------------------------------

@pytest.mark.parametrize("name", LINEAR_OPS)
def test_linear_ops_are_exact(name):
    """Central differences are exact up to rounding for linear maps."""
    case = op_cases(0)[name]

    error = gradcheck(OPS[name], case.inputs, eps=case.eps, attrs=case.attrs)

    assert error <= 1e-10


def test_sigmoid_gradcheck(rng):
    error = gradcheck(OPS["sigmoid"], [rng.standard_normal((2, 3, 3))], eps=1e-5)

    assert error <= 1e-4


@pytest.mark.parametrize("name", ["apply_gate", "spectral_distance", "silu", "detection_loss"])
def test_nonlinear_ops_pass(name):
    case = op_cases(3)[name]

    assert gradcheck(OPS[name], case.inputs, eps=case.eps, attrs=case.attrs) <= 1e-4


def test_every_registered_op_has_a_case():
    assert set(OPS) <= set(op_cases(0))


def test_fdaf_block_gradcheck(rng):
    """Input, gate logits and fusion parameters of one FDAF block."""
    params = {
        "x": rng.standard_normal((2, 4, 4)),
        "gate_logits": rng.standard_normal((2, 4, 4)),
        "fusion_weight": rng.standard_normal((2, 4)) * 0.5,
        "fusion_bias": rng.standard_normal(2),
    }
    direction = rng.standard_normal((2, 4, 4))

    errors = gradcheck_scalar(lambda p: fdaf_loss(p, direction), params, eps=1e-5, name="fdaf")

    assert set(errors) == {"x", "gate_logits", "fusion_weight", "fusion_bias"}
    assert max(errors.values()) <= 1e-4


def test_numerical_grad_restores_inputs(rng):
    x = rng.standard_normal(5)
    before = x.copy()

    numerical_grad(lambda: float(np.sum(x ** 2)), [x])

    assert np.array_equal(x, before)


def test_numerical_grad_flags_non_finite():
    x = np.array([0.0])
    with pytest.raises(NumericalError):
        numerical_grad(lambda: 1.0 / x[0] if x[0] > 0 else float("nan"), [x])


# ---------------------------------------------------------------------
# Full loss and suite
# ---------------------------------------------------------------------

def test_total_loss_gradients_per_group():
    """Every parameter group of the tiny detector passes at 1e-4."""
    errors = check_total_loss(seed=0)

    assert {"backbone.conv1.weight", "neck.gate_logits", "neck.fusion_weight", "head.bias"} <= set(errors)
    assert max(errors.values()) <= 1e-4


def test_suite_passes_on_fresh_build():
    report = run_gradcheck_suite(tolerance=1e-4, seed=0)

    assert report["passed"].all(), report[~report["passed"]]
    assert set(report.loc[report["check"] == "op", "target"]) == set(OPS)


def test_suite_names_a_corrupted_vjp(monkeypatch):
    """Negative control: a wrong VJP shows up as a failed row for that op."""
    monkeypatch.setitem(OPS, "silu", BrokenSilu())

    report = run_gradcheck_suite(tolerance=1e-4, seed=0, include_pipeline=False)
    failed = report.loc[~report["passed"], "target"].tolist()

    assert failed == ["silu"]


def test_suite_reports_missing_case():
    report = run_gradcheck_suite(ops=["silu"], include_pipeline=False, cases=lambda seed: {})

    assert not report["passed"].any()
    assert "no evaluation point" in report.loc[0, "message"]
