"""End-to-end convergence study: eps-problems against the homogenized problem."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .cellsolve import CellGrid, load_law, persist_law, phase_representatives, tabulate_effective_law
from .config import StudyConfig
from .errors import ConfigError, HomogLabError
from .evolver import (ProblemData, apriori_monitor, l2_space_time_error, l2_space_time_norm,
                      phi_certificate, solve_parabolic)
from .fitz import RepresentativeFn, import_graph
from .persist import output_path, persist_report
from .twoscale import TwoScaleField, corrector_error, default_family, twoscale_gap


@dataclass
class StudyReport:
    rows: list
    config_hash: str
    partial: bool = False
    meta: dict = field(default_factory=dict)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def eps(self):
        return self.column("eps")


def build_law(cfg: StudyConfig):
    """Load the configured effective law or tabulate it from the flux preset."""
    if cfg.law_file:
        return load_law(cfg.law_file, config_hash=cfg.hash)
    xi = np.linspace(-cfg.xi_range, cfg.xi_range, cfg.xi_points)
    eta = np.linspace(-cfg.eta_range, cfg.eta_range, cfg.eta_points)
    return tabulate_effective_law(cfg.gamma, xi, eta, CellGrid(1, cfg.cell_M), tol=cfg.cell_tol,
                                  meta={"config_hash": cfg.hash})


def eps_data(cfg: StudyConfig, eps):
    return ProblemData.epsilon(cfg.phi, cfg.gamma, eps, T=cfg.T, m=cfg.m,
                               mesh_factor=cfg.mesh_factor, source=cfg.source, w0=cfg.initial,
                               grad_tol=cfg.grad_tol, incl_tol=cfg.incl_tol)


def gamma_representative(cfg: StudyConfig):
    """``None`` for the Fenchel certificate, else per-phase Fitzpatrick representatives."""
    if cfg.representative == "fenchel":
        return None
    if cfg.graph_file:
        return RepresentativeFn.fitzpatrick(import_graph(cfg.graph_file))
    v = np.linspace(-2 * cfg.xi_range, 2 * cfg.xi_range, 8 * cfg.xi_points + 1)
    return phase_representatives(cfg.gamma, v)


def run_convergence_study(cfg: StudyConfig, write=True) -> StudyReport:
    """Tabulate the law, solve the homogenized problem once and every eps-problem.

    A failing eps-run is recorded in its row (status ``failed``) and the
    report is marked partial; the remaining eps values still run.
    """
    if cfg.gamma == "general":
        raise ConfigError("general flux graphs can be certified but not evolved")
    law = build_law(cfg)
    hom_data = ProblemData.homogenized(law, cfg.phi, T=cfg.T, m=cfg.m, n_el=cfg.hom_n_el,
                                       source=cfg.source, w0=cfg.initial, grad_tol=cfg.grad_tol,
                                       incl_tol=cfg.incl_tol)
    u_hom = solve_parabolic(hom_data)
    hom_norm = l2_space_time_norm(u_hom)
    limit = TwoScaleField(u_hom.x, np.repeat(u_hom.u[-1][:, None], 8, axis=1))
    rep = gamma_representative(cfg)
    tests = default_family()
    rows, partial = [], False
    for i, eps in enumerate(cfg.eps):
        row = {"run_id": f"{cfg.hash[:8]}-{i}", "eps": float(eps), "config_hash": cfg.hash,
               "status": "ok", "message": ""}
        try:
            data = eps_data(cfg, eps)
            row["n_el"] = data.n_el
            traj = solve_parabolic(data)
            cert = phi_certificate(traj, data, rep=rep)
            norms = apriori_monitor(traj)
            err = l2_space_time_error(traj, u_hom)
            gaps = twoscale_gap({eps: traj.u[-1]}, limit, tests)
            row.update({"error_L2": err, "rel_error": err / hom_norm if hom_norm else math.nan,
                        "cert_alpha": cert.alpha, "cert_gamma": cert.gamma, "cert_total": cert.total,
                        "cert_scale": cert.scale, "twoscale_gap": gaps.max_gap(eps),
                        "corrector_error": corrector_error(traj, u_hom, law, eps)})
            row.update(norms.as_dict())
        except HomogLabError as exc:
            partial = True
            row["status"] = "failed"
            row["message"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    meta = {"law_preset": law.meta.get("preset"), "law_M": law.meta.get("M"),
            "conjugacy_gap": repr(float(law.meta.get("conjugacy_gap", math.nan))),
            "hom_n_el": hom_data.n_el, "hom_norm": repr(hom_norm),
            "representative": cfg.representative, "tests": len(tests),
            "config": cfg.canonical()}
    report = StudyReport(rows, cfg.hash, partial, meta)
    if write:
        out = output_path("", cfg.out_dir) or "."
        os.makedirs(out, exist_ok=True)
        persist_report(report, os.path.join(out, "report.csv"))
        if not cfg.law_file:
            persist_law(law, os.path.join(out, "law.csv"))
    return report
