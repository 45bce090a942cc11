"""Command-line front end: JSON model files in, reports/CSV/JSON out.

Commands
--------
rects       admissible dropout rectangles, one per decomposition
analyze     membership verdict for one dropout-probability vector
region      member/non-member grid as CSV (two channels)
synthesize  optimal controller for a certified dropout vector, as JSON
simulate    exact and Monte-Carlo second-moment traces as CSV
supremum    simultaneous-dropout threshold for minimum-phase models

Exit codes: 0 success (and, for verdict commands, "member"); 2 negative
verdict (dropout vector not certified); 1 any error.  Reports print
numbers with six significant digits, rectangle corners with four
decimals, and volumes in two-decimal scientific notation.
"""

import argparse
import json
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import config
from .factorization import (
    AssumptionViolation,
    bezout,
    coprime_factorize,
    gamma_scale,
    observer_gain,
    validate_assumption,
    wonham_decompose,
    wonham_gain,
)
from .numkernel import eigenvalues
from .stabilizability import (
    ChannelSpec,
    _phi_vector,
    _true_gamma,
    closed_loop_map,
    controller,
    max_blocking_probability,
    membership,
    mp_supremum,
    ms_radius,
    rectangle_set,
    sweep_bounds,
    synthesize_Q,
    t_hat,
    union_membership,
)
from .statespace import StateSpaceModel, TransferMatrix, realize, scale_io
from .verification import (
    assemble,
    exact_moment_trace,
    monte_carlo_trace,
    second_moment_radius,
)

__all__ = ["ModelFile", "load_model", "model_to_json", "main"]


# ---------------------------------------------------------------------------
# model files


@dataclass(frozen=True)
class ModelFile:
    """A parsed model document plus its canonical re-serialization."""

    name: str
    format: str
    plant: StateSpaceModel
    zeros: tuple        # per-channel unstable zero or None
    document: dict      # canonical JSON-ready form of the file


def _poly_grid(body, key, path):
    grid = body.get(key)
    if not isinstance(grid, list) or not grid:
        raise ValueError(f"{path}: tf.{key} must be a non-empty nested list")
    return tuple(tuple(tuple(cell) for cell in row) for row in grid)


def _shaped(raw, key, shape, path):
    try:
        arr = np.asarray(raw[key], dtype=float).reshape(shape)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: ss.{key} is missing or badly shaped") from exc
    return arr


def load_model(path: str, tol: float = config.STAIRCASE_RTOL) -> ModelFile:
    """Read and validate a JSON model file.

    The file carries ``name``, ``format`` ("tf" or "ss"), exactly one of a
    ``tf`` block (``num``/``den`` coefficient grids in descending powers of
    z) or an ``ss`` block (``A``/``B``/``C``/``D`` row-major), and an
    optional ``channel_zeros`` list overriding zero detection.  Transfer-
    function models are checked against the admissible model class and
    their per-channel unstable zeros detected; state-space models must
    supply ``channel_zeros`` explicitly and be strictly proper.

    Raises
    ------
    ValueError
        Malformed file or inconsistent shapes.
    AssumptionViolation
        Transfer-function model outside the admissible class.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: top level must be a JSON object")
    name = raw.get("name")
    fmt = raw.get("format")
    if not isinstance(name, str) or not name:
        raise ValueError(f"{path}: missing model name")
    if fmt not in ("tf", "ss"):
        raise ValueError(f"{path}: format must be 'tf' or 'ss'")
    if ("tf" in raw) == ("ss" in raw):
        raise ValueError(f"{path}: exactly one of tf/ss must be present")
    if fmt not in raw:
        raise ValueError(f"{path}: format is '{fmt}' but that block is absent")

    doc: dict = {"format": fmt, "name": name}
    if fmt == "tf":
        body = raw["tf"]
        if not isinstance(body, dict):
            raise ValueError(f"{path}: tf must be an object with num/den")
        try:
            tf = TransferMatrix(num=_poly_grid(body, "num", path),
                                den=_poly_grid(body, "den", path))
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}: bad transfer matrix ({exc})") from exc
        detected = validate_assumption(tf, tol)
        plant = realize(tf, tol)
        r = plant.n_inputs
        doc["tf"] = {"num": [[list(c) for c in row] for row in tf.num],
                     "den": [[list(c) for c in row] for row in tf.den]}
    else:
        body = raw["ss"]
        if not isinstance(body, dict):
            raise ValueError(f"{path}: ss must be an object with A/B/C/D")
        A = np.asarray(body.get("A", []), dtype=float)
        if A.ndim == 1 and A.size == 0:
            A = A.reshape(0, 0)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"{path}: ss.A must be square")
        n = A.shape[0]
        B = np.asarray(body.get("B"), dtype=float)
        if B.ndim != 2 or B.shape[0] != n:
            raise ValueError(f"{path}: ss.B must have {n} rows")
        r = B.shape[1]
        C = _shaped(body, "C", (-1, n) if n else (-1, 0), path)
        D = _shaped(body, "D", (C.shape[0], r), path)
        if C.shape[0] != r:
            raise ValueError(f"{path}: model must be square "
                             f"({C.shape[0]} outputs, {r} inputs)")
        if np.max(np.abs(D), initial=0.0) != 0.0:
            raise ValueError(f"{path}: model must be strictly proper (D = 0)")
        plant = StateSpaceModel(A, B, C, D)
        detected = None
        doc["ss"] = {"A": plant.A.tolist(), "B": plant.B.tolist(),
                     "C": plant.C.tolist(), "D": plant.D.tolist()}

    if "channel_zeros" in raw:
        zl = raw["channel_zeros"]
        if not isinstance(zl, list) or len(zl) != r:
            raise ValueError(f"{path}: channel_zeros must list {r} entries")
        zeros = tuple(None if z is None else float(z) for z in zl)
        for z in zeros:
            if z is not None and abs(z) <= 1.0:
                raise ValueError(f"{path}: channel zero {z} is not outside "
                                 "the unit circle")
        doc["channel_zeros"] = [z for z in zeros]
    elif fmt == "tf":
        zeros = tuple(detected)
    else:
        raise ValueError(f"{path}: state-space models need explicit "
                         "channel_zeros")
    return ModelFile(name=name, format=fmt, plant=plant, zeros=zeros,
                     document=doc)


def model_to_json(model: ModelFile) -> str:
    """Canonical serialization; parsing it back is value-identical."""
    return json.dumps(model.document, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# small formatting / parsing helpers


def _fmt(x) -> str:
    return f"{float(np.real(x)):.6g}"


def _real_list(M) -> list:
    """Strip the zero imaginary part the state-space dtype always carries."""
    return np.real(np.asarray(M)).tolist()


def _fmt_c(x) -> str:
    x = complex(x)
    if abs(x.imag) <= 1e-12 * max(1.0, abs(x)):
        return f"{x.real:.6g}"
    return f"{x.real:.6g}{x.imag:+.6g}j"


def _blaschke_str(lams) -> str:
    """Human-readable all-pass product over one channel's eigenvalues."""
    if not lams:
        return "1"
    num, den = [], []
    for lam in lams:
        c = complex(lam)
        if abs(c.imag) <= 1e-12 * max(1.0, abs(c)):
            v = c.real
            num.append(f"(z + {-v:.6g})" if v < 0 else f"(z - {v:.6g})")
            den.append(f"({v:.6g} z - 1)")
        else:
            num.append(f"(z - {_fmt_c(c)})")
            den.append(f"({_fmt_c(c)} z - 1)")
    bottom = "".join(den) if len(den) == 1 else "(" + "".join(den) + ")"
    return "".join(num) + "/" + bottom


def _parse_probs(text: str, r: int) -> np.ndarray:
    try:
        vals = [float(tok) for tok in text.split(",")]
    except ValueError as exc:
        raise ValueError(f"--probs: could not parse '{text}'") from exc
    if len(vals) != r:
        raise ValueError(f"--probs: expected {r} values, got {len(vals)}")
    return np.asarray(vals)


def _parse_gamma(text: str, r: int) -> np.ndarray:
    try:
        vals = [float(tok) for tok in text.split(",")]
    except ValueError as exc:
        raise ValueError(f"--gamma: could not parse '{text}'") from exc
    if len(vals) != r:
        raise ValueError(f"--gamma: expected {r} values, got {len(vals)}")
    if vals[0] != 1.0:
        raise ValueError("--gamma: the first channel is the reference and "
                         "must be scaled by 1")
    return np.asarray(vals)


def _parse_grid(text: str) -> tuple:
    parts = text.lower().split("x")
    try:
        n1, n2 = (int(tok) for tok in parts)
    except ValueError as exc:
        raise ValueError(f"--grid: expected N1xN2, got '{text}'") from exc
    if n1 < 1 or n2 < 1:
        raise ValueError("--grid: counts must be positive")
    return n1, n2


def _parse_pmax(text: str) -> tuple:
    try:
        a, b = (float(tok) for tok in text.split(","))
    except ValueError as exc:
        raise ValueError(f"--pmax: expected a,b, got '{text}'") from exc
    if a < 0 or b < 0 or a >= 1 or b >= 1:
        raise ValueError("--pmax: bounds must lie in [0, 1)")
    return a, b


def _zeros_str(zeros) -> str:
    return ", ".join("none" if z is None else _fmt(z) for z in zeros)


# ---------------------------------------------------------------------------
# commands


def cmd_rects(args) -> int:
    model = load_model(args.model, args.tol)
    rects = rectangle_set(model.plant, model.zeros, args.tol)
    print(f"model: {model.name}")
    print(f"channels: {model.plant.n_inputs}")
    print(f"channel zeros: {_zeros_str(model.zeros)}")
    print(f"decompositions: {len(rects.forms)}")
    for k, form in enumerate(rects.forms):
        order = ", ".join(str(c + 1) for c in form.ordering)
        print(f"decomposition {k + 1} (processing order {order})")
        lam = form.lambda_by_channel()
        for j in range(form.n_channels):
            poles = ", ".join(_fmt_c(v) for v in lam[j]) or "none"
            print(f"  channel {j + 1} poles: {poles}")
            print(f"  channel {j + 1} inner: {_blaschke_str(lam[j])}")
        vert = ", ".join(f"{v:.4f}" for v in rects.vertices[k])
        print(f"  vertex: ({vert})")
        print(f"  volume: {rects.volumes[k]:.2e}")
    print(f"max blocking probability: {max_blocking_probability(rects):.2e}")
    return 0


def cmd_analyze(args) -> int:
    model = load_model(args.model, args.tol)
    p = _parse_probs(args.probs, model.plant.n_inputs)
    channels = ChannelSpec(p)
    print(f"model: {model.name}")
    print(f"dropout probabilities: {', '.join(_fmt(v) for v in p)}")
    rects = rectangle_set(model.plant, model.zeros, args.tol)
    covered, idx = union_membership(rects, p)
    if covered:
        print(f"rectangle union: member (decomposition {idx + 1})")
    else:
        print("rectangle union: not covered")
    report = membership(model.plant, model.zeros, channels, tol=args.tol)
    verdict = "member" if report.member else "not found"
    print(f"scaling search: {verdict}")
    print(f"  best value: {_fmt(report.best_value)}")
    if report.member:
        cert = ", ".join(_fmt(g) for g in report.certificate.gamma)
        print(f"  certificate gamma: {cert}")
        levels = ", ".join(_fmt(b) for b in report.bounds)
        print(f"  admissible levels at certificate: {levels}")
    return 0 if report.member else 2


def cmd_region(args) -> int:
    model = load_model(args.model, args.tol)
    if model.plant.n_inputs != 2:
        raise ValueError("region grids cover exactly two channels")
    n1, n2 = _parse_grid(args.grid)
    a, b = _parse_pmax(args.pmax)
    # shared certificate pool: the dense scaling sweep plus the exact
    # decoupled corners, so the grid decision matches the rectangle report
    # at its extremes
    pool = sweep_bounds(model.plant, model.zeros, tol=args.tol)
    corners = np.array([v for v in
                        rectangle_set(model.plant, model.zeros, args.tol).vertices])
    pool = np.vstack([pool, corners])
    p1 = np.linspace(0.0, a, 1 if a == 0.0 else n1)
    p2 = np.linspace(0.0, b, 1 if b == 0.0 else n2)
    grid = np.array([(x, y) for x in p1 for y in p2])
    ok = (grid[:, None, :] < pool[None, :, :] * (1.0 - config.MEMBER_GUARD))
    member = ok.all(axis=2).any(axis=1)
    out = sys.stdout
    out.write("p1,p2,member\n")
    for (x, y), m in zip(grid, member):
        out.write(f"{_fmt(x)},{_fmt(y)},{int(m)}\n")
    return 0


def _certificate_for(model: ModelFile, channels: ChannelSpec, gamma_text,
                     tol: float):
    """Free scaling certificate: searched, or the user's, re-checked."""
    r = model.plant.n_inputs
    if gamma_text is not None:
        g = _parse_gamma(gamma_text, r)
        form = wonham_decompose(model.plant, tuple(range(r)), tol)
        M, _ = coprime_factorize(model.plant, wonham_gain(form), tol)
        phi = _phi_vector(gamma_scale(M, g), model.zeros, tol)
        value = float(np.max(channels.p * (phi + 1.0)))
        if value >= 1.0 - config.MEMBER_GUARD:
            print(f"error: the supplied scaling does not certify this "
                  f"dropout vector (value {_fmt(value)})", file=sys.stderr)
            return None, value
        return g, value
    report = membership(model.plant, model.zeros, channels, tol=tol)
    if not report.member:
        print(f"error: dropout vector is not certified (best value "
              f"{_fmt(report.best_value)})", file=sys.stderr)
        return None, report.best_value
    tame = report.tame_certificate
    g = tame.gamma if tame is not None else report.certificate.gamma
    phi = report.phi_diag
    # phi_diag sits at the optimizer's point; recompute at the tame one
    if tame is not None:
        form = wonham_decompose(model.plant, tuple(range(r)), tol)
        M, _ = coprime_factorize(model.plant, wonham_gain(form), tol)
        phi = _phi_vector(gamma_scale(M, g), model.zeros, tol)
    return g, float(np.max(channels.p * (phi + 1.0)))


def cmd_synthesize(args) -> int:
    model = load_model(args.model, args.tol)
    p = _parse_probs(args.probs, model.plant.n_inputs)
    channels = ChannelSpec(p)
    gamma_free, value = _certificate_for(model, channels, args.gamma, args.tol)
    if gamma_free is None:
        return 2
    gamma_true = _true_gamma(np.asarray(gamma_free, dtype=float), channels)
    r = model.plant.n_inputs
    Gmu = scale_io(model.plant, None, np.diag(channels.mu))
    form = wonham_decompose(Gmu, tuple(range(r)), args.tol)
    bez = bezout(Gmu, wonham_gain(form), observer_gain(Gmu, args.tol))
    Q = synthesize_Q(Gmu, bez, gamma_true, model.zeros, args.tol)
    K = controller(bez, Q, args.tol)
    T = closed_loop_map(Gmu, K, args.tol)
    analysis_radius = ms_radius(t_hat(T, args.tol), channels)
    loop = assemble(model.plant, K, channels)
    try:
        verify_radius = second_moment_radius(loop)
    except ValueError:
        verify_radius = None
    print(f"certificate value {_fmt(value)} at gamma "
          f"{', '.join(_fmt(g) for g in gamma_free)}", file=sys.stderr)
    radii = f"analysis radius {_fmt(analysis_radius)}"
    if verify_radius is not None:
        radii += f"; verification radius {_fmt(verify_radius)}"
    print(f"controller order {K.order}; {radii}", file=sys.stderr)
    payload = {
        "certified_value": value,
        "channel_zeros": [z for z in model.zeros],
        # assemble() above has already checked the controller is real
        "controller": {
            "A": _real_list(K.A), "B": _real_list(K.B),
            "C": _real_list(K.C), "D": _real_list(K.D),
            "state_count": K.order,
            "input_count": K.n_inputs,
            "output_count": K.n_outputs,
        },
        "gamma": [float(g) for g in gamma_free],
        "gamma_true": [float(g) for g in gamma_true],
        "model": model.name,
        "ms_radius": float(analysis_radius),
        "nominal_radius": float(loop.nominal_radius),
        "probs": [float(v) for v in p],
        "second_moment_radius":
            None if verify_radius is None else float(verify_radius),
    }
    print(json.dumps(payload, sort_keys=True, indent=2))
    return 0


def _load_controller(path: str) -> StateSpaceModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: controller file must be a JSON object")
    d = raw.get("controller", raw)
    for key in ("A", "B", "C", "D", "state_count", "input_count",
                "output_count"):
        if key not in d:
            raise ValueError(f"{path}: controller block lacks '{key}'")
    n, m, q = int(d["state_count"]), int(d["input_count"]), int(d["output_count"])
    try:
        A = np.asarray(d["A"], dtype=float).reshape(n, n)
        B = np.asarray(d["B"], dtype=float).reshape(n, m)
        C = np.asarray(d["C"], dtype=float).reshape(q, n)
        D = np.asarray(d["D"], dtype=float).reshape(q, m)
    except ValueError as exc:
        raise ValueError(f"{path}: controller matrices do not match the "
                         "declared sizes") from exc
    return StateSpaceModel(A, B, C, D)


def cmd_simulate(args) -> int:
    model = load_model(args.model, args.tol)
    p = _parse_probs(args.probs, model.plant.n_inputs)
    channels = ChannelSpec(p)
    K = _load_controller(args.controller)
    loop = assemble(model.plant, K, channels)
    exact = exact_moment_trace(loop, args.steps)
    mc = monte_carlo_trace(loop, args.steps, args.trials, seed=args.seed)
    out = sys.stdout
    out.write("step,exact_trace,mc_trace\n")
    for k in range(args.steps + 1):
        out.write(f"{k},{_fmt(exact[k])},{_fmt(mc[k])}\n")
    return 0


def cmd_supremum(args) -> int:
    model = load_model(args.model, args.tol)
    try:
        sup = mp_supremum(model.plant, model.zeros)
    except ValueError as exc:
        raise ValueError(f"{exc}; run the rects command for this model") from exc
    w = eigenvalues(model.plant.A).values
    unstable = [v for v in w if abs(v) > 1.0]
    print(f"model: {model.name}")
    print(f"unstable poles: {', '.join(_fmt_c(v) for v in unstable) or 'none'}")
    print(f"simultaneous-dropout supremum, squared-product rule "
          f"(used for verdicts): {_fmt(sup.derived_bound)}")
    print(f"simultaneous-dropout supremum, linear-product rule "
          f"(for comparison): {_fmt(sup.stated_bound)}")
    rects = rectangle_set(model.plant, model.zeros, args.tol)
    for k, form in enumerate(rects.forms):
        order = ", ".join(str(c + 1) for c in form.ordering)
        levels = ", ".join(_fmt(v) for v in rects.vertices[k])
        print(f"decomposition {k + 1} (processing order {order}): "
              f"per-channel thresholds {levels}")
    return 0


# ---------------------------------------------------------------------------
# parser and entry point


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with code 1; code 2 is a verdict, not an error."""

    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(sub):
    sub.add_argument("model", help="path to a JSON model file")
    sub.add_argument("--tol", type=float, default=config.STAIRCASE_RTOL,
                     help="staircase reduction tolerance")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="dropstab",
        description="Mean-square stabilizability over lossy input channels: "
                    "admissible dropout regions, optimal controllers, and "
                    "second-moment verification.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    q = sub.add_parser("rects", help="admissible dropout rectangles")
    _add_common(q)
    q.set_defaults(func=cmd_rects)

    q = sub.add_parser("analyze", help="membership verdict for one dropout vector")
    _add_common(q)
    q.add_argument("--probs", required=True,
                   help="comma-separated per-channel dropout probabilities")
    q.set_defaults(func=cmd_analyze)

    q = sub.add_parser("region", help="member/non-member grid as CSV")
    _add_common(q)
    q.add_argument("--grid", required=True, help="grid resolution, N1xN2")
    q.add_argument("--pmax", required=True,
                   help="upper corner a,b of the scanned box [0,a]x[0,b]")
    q.set_defaults(func=cmd_region)

    q = sub.add_parser("synthesize", help="optimal controller as JSON")
    _add_common(q)
    q.add_argument("--probs", required=True,
                   help="comma-separated per-channel dropout probabilities")
    q.add_argument("--gamma", default=None,
                   help="certifying channel scaling (skips the search); "
                        "first entry must be 1")
    q.set_defaults(func=cmd_synthesize)

    q = sub.add_parser("simulate", help="second-moment traces as CSV")
    _add_common(q)
    q.add_argument("--probs", required=True,
                   help="comma-separated per-channel dropout probabilities")
    q.add_argument("--controller", required=True,
                   help="controller JSON (as written by synthesize)")
    q.add_argument("--steps", type=int, default=2000)
    q.add_argument("--trials", type=int, default=200)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_simulate)

    q = sub.add_parser("supremum",
                       help="simultaneous-dropout threshold (minimum phase)")
    _add_common(q)
    q.set_defaults(func=cmd_supremum)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        return args.func(args)
    except AssumptionViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
