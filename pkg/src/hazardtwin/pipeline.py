"""Stage runners: each reads its upstream CSV/JSON artifacts and writes its own.

Stages communicate only through files in the output directory, so running the
full pipeline and running the stages one by one produce identical artifacts.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from . import _io
from .affiliation import build_knn_graph, centrality_and_criticals, grl_update
from .calibration import predict_node, split_nodes, train, validate
from .config import PipelineConfig, config_hash
from .district import BuildingType, District, NodeRecord, TYPE_TOKENS, generate_district
from .equity import RiskTable, community_index, node_risks
from .exceptions import HazardTwinError, NumericalError
from .fusion import assimilate_district, fuse_weights
from .intervention import (apply_intervention, eval_metrics, fallback_risks, overheating_hours, pareto_front,
                           standard_interventions)
from .scenario import HazardTimeline, build_timeline
from .sensing import STREAMS, StreamSet, synthesize_streams
from .thermal import TruthMode, daily_blackout_peaks, default_params, simulate_building, simulate_district

__all__ = ["STAGES", "run_stage", "run_pipeline", "load_district", "load_timeline", "load_streams"]

STAGES = ("generate", "simulate", "sense", "fuse", "calibrate", "graph", "equity", "intervene")

NODE_HEADER = ("id", "x", "y", "type", "pop", "income", "energy_burden", "vuln", "has_sensor", "req")


# --- artifact readers -------------------------------------------------------

def load_district(out, seed=0) -> District:
    (path,) = _io.require(out, "nodes.csv")
    header, rows = _io.read_csv(path)
    if tuple(header) != NODE_HEADER:
        raise ValueError(f"nodes.csv has header {header}, expected {list(NODE_HEADER)}")
    nodes = tuple(
        NodeRecord(id=int(r[0]), x=float(r[1]), y=float(r[2]), btype=BuildingType.from_token(r[3]),
                   pop=int(r[4]), income=float(r[5]), energy_burden=float(r[6]), vuln=float(r[7]),
                   has_sensor=r[8] == "1", req=float(r[9]))
        for r in rows
    )
    return District(nodes=nodes, seed=seed)


def load_timeline(out, dt_h: float) -> HazardTimeline:
    (path,) = _io.require(out, "time.csv")
    cols = _io.read_columns(path)
    return HazardTimeline(
        dt_h=dt_h,
        t_h=np.array(cols["time_h"], dtype=float),
        T_out=np.array(cols["T_out"], dtype=float),
        outage=np.array(cols["outage"], dtype=int),
        smoke=np.array(cols["smoke"], dtype=float),
    )


def load_streams(out, sigmas) -> StreamSet:
    paths = _io.require(out, "iot.csv", "uav.csv", "uav_idx.csv", "sat.csv", "sat_idx.csv")
    iot = _io.read_matrix_csv(paths[0])[2].T
    uav = _io.read_matrix_csv(paths[1])[2].T
    uav_idx = np.array(_io.read_columns(paths[2])["t_index"], dtype=int)
    sat = _io.read_matrix_csv(paths[3])[2].T
    sat_idx = np.array(_io.read_columns(paths[4])["t_index"], dtype=int)
    return StreamSet(iot=iot, uav=uav, uav_idx=uav_idx, sat=sat, sat_idx=sat_idx, sigmas=dict(sigmas))


def _sigmas(cfg):
    s = cfg.sensing
    return {"iot": s.sigma_iot, "uav": s.sigma_uav, "sat": s.sigma_sat}


def _node_cols(district):
    return [str(n.id) for n in district.nodes]


# --- stages -----------------------------------------------------------------

def stage_generate(cfg: PipelineConfig, out: Path):
    district = generate_district(cfg.district, cfg.seed)
    timeline = build_timeline(cfg.scenario)
    _io.write_csv(out / "nodes.csv", NODE_HEADER, (
        (n.id, n.x, n.y, n.btype.token, n.pop, n.income, n.energy_burden, n.vuln, n.has_sensor, n.req)
        for n in district.nodes))
    _io.write_csv(out / "time.csv", ("t_index", "time_h", "T_out", "outage", "smoke"), (
        (k, timeline.t_h[k], timeline.T_out[k], int(timeline.outage[k]), timeline.smoke[k])
        for k in range(len(timeline))))
    return {"inputs": [], "outputs": ["nodes.csv", "time.csv"],
            "n_nodes": len(district), "n_steps": len(timeline),
            "type_counts": dict(zip(TYPE_TOKENS, district.type_counts().tolist()))}


def stage_simulate(cfg: PipelineConfig, out: Path):
    district = load_district(out, cfg.seed)
    timeline = load_timeline(out, cfg.scenario.dt_min / 60.0)
    truth = simulate_district(district, timeline, cfg.thermal, cfg.seed)
    _io.write_matrix_csv(out / "truth.csv", "t_index", range(len(timeline)), _node_cols(district), truth.T)

    # physics-only reference trajectory per building type
    ref = {t.token: simulate_building(default_params(t), timeline, TruthMode.Model)[:, 1] for t in BuildingType}
    rows = ([k, timeline.t_h[k], timeline.T_out[k], int(timeline.outage[k]), *(ref[tok][k] for tok in TYPE_TOKENS)]
            for k in range(len(timeline)))
    _io.write_csv(out / "fig3.csv", ("t_index", "time_h", "T_out", "outage", *TYPE_TOKENS), rows)
    peaks = daily_blackout_peaks(ref["SCH"], timeline)
    return {"inputs": ["nodes.csv", "time.csv"], "outputs": ["truth.csv", "fig3.csv"],
            "school_blackout_peaks": peaks.tolist(), "truth_mode": cfg.thermal.truth_mode}


def stage_sense(cfg: PipelineConfig, out: Path):
    district = load_district(out, cfg.seed)
    timeline = load_timeline(out, cfg.scenario.dt_min / 60.0)
    (tpath,) = _io.require(out, "truth.csv")
    truth = _io.read_matrix_csv(tpath)[2].T
    s = synthesize_streams(truth, district, timeline, cfg.sensing, cfg.seed)
    cols = _node_cols(district)
    _io.write_matrix_csv(out / "iot.csv", "t_index", range(len(timeline)), cols, s.iot.T)
    for name in ("uav", "sat"):
        idx = getattr(s, f"{name}_idx")
        _io.write_matrix_csv(out / f"{name}.csv", "k", range(len(idx)), cols, getattr(s, name).T)
        _io.write_csv(out / f"{name}_idx.csv", ("k", "t_index"), enumerate(idx))
    return {"inputs": ["nodes.csv", "time.csv", "truth.csv"],
            "outputs": ["iot.csv", "uav.csv", "uav_idx.csv", "sat.csv", "sat_idx.csv"],
            "iot_missing_fraction": float(np.mean(np.isnan(s.iot[district.has_sensor]))),
            "n_uav": len(s.uav_idx), "n_sat": len(s.sat_idx)}


STREAM_FILES = ["iot.csv", "uav.csv", "uav_idx.csv", "sat.csv", "sat_idx.csv"]


def stage_fuse(cfg: PipelineConfig, out: Path):
    district = load_district(out, cfg.seed)
    timeline = load_timeline(out, cfg.scenario.dt_min / 60.0)
    streams = load_streams(out, _sigmas(cfg))
    state = fuse_weights(streams, cfg.fusion)
    H = state.history
    _io.write_csv(out / "fusion_weights_series.csv", ("t", "w_iot", "w_uav", "w_sat"),
                  ([t, *H[t]] for t in range(len(H))))
    _io.write_csv(out / "fig5.csv", ("t_index", "time_h", "w_iot", "w_uav", "w_sat", "s_iot", "s_uav", "s_sat"),
                  ([t, timeline.t_h[t], *H[t], *state.scores[t]] for t in range(len(H))))
    params = [default_params(n.btype) for n in district.nodes]
    mean, _ = assimilate_district(params, timeline, streams, H, cfg.fusion)
    _io.write_matrix_csv(out / "fused_state.csv", "t_index", range(len(timeline)), _node_cols(district), mean.T)
    final = dict(zip(STREAMS, state.w_ema.tolist()))
    _io.write_json(out / "fusion_weights.json", {"final": final, "T": len(H)})
    return {"inputs": ["nodes.csv", "time.csv", *STREAM_FILES],
            "outputs": ["fusion_weights_series.csv", "fusion_weights.json", "fig5.csv", "fused_state.csv"],
            "final_weights": final}


def stage_calibrate(cfg: PipelineConfig, out: Path):
    district = load_district(out, cfg.seed)
    timeline = load_timeline(out, cfg.scenario.dt_min / 60.0)
    streams = load_streams(out, _sigmas(cfg))
    tc = cfg.calibration
    history = []
    params = train(district, timeline, streams, tc, cfg.seed, history=history)
    fit_nodes, val_nodes = split_nodes(district, streams, tc, cfg.seed)
    metrics = validate(params, district, timeline, streams, val_nodes, tc, cfg.seed)
    fit_metrics = validate(params, district, timeline, streams, fit_nodes, tc, cfg.seed)

    _io.write_json(out / "calib_params.json", params.to_dict())
    _io.write_csv(out / "metrics.csv", ("source", "rmse", "mae", "n"),
                  ([r["source"], r["rmse"], r["mae"], r["n"]] for r in metrics.as_rows()))
    last = history[-1] if history else None
    _io.write_json(out / "metrics.json", {
        "validation": {"rmse": metrics.rmse, "mae": metrics.mae, "count": metrics.count},
        "training": {"rmse": fit_metrics.rmse, "mae": fit_metrics.mae, "count": fit_metrics.count},
        "train_nodes": fit_nodes.tolist(), "val_nodes": val_nodes.tolist(), "epochs": tc.epochs,
        "final_loss": dataclasses.asdict(last) if last else None,
    })
    rows = []
    merged, source = streams.merged()
    for i in val_nodes:
        pred = predict_node(params, district.types[i], timeline, tc.courant)
        for t in range(len(timeline)):
            src = STREAMS[source[i, t]] if source[i, t] >= 0 else ""
            rows.append([t, timeline.t_h[t], int(i), merged[i, t], src, pred[t]])
    _io.write_csv(out / "fig4.csv", ("t_index", "time_h", "node", "observed", "source", "predicted"), rows)
    return {"inputs": ["nodes.csv", "time.csv", *STREAM_FILES],
            "outputs": ["calib_params.json", "metrics.json", "metrics.csv", "fig4.csv"],
            "rmse": metrics.rmse, "mae": metrics.mae}


def stage_graph(cfg: PipelineConfig, out: Path):
    district = load_district(out, cfg.seed)
    timeline = load_timeline(out, cfg.scenario.dt_min / 60.0)
    graph = grl_update(build_knn_graph(district, cfg.graph), timeline, cfg.graph)
    rep = centrality_and_criticals(graph, cfg.graph)
    gain = rep.gain
    _io.write_csv(out / "edges.csv", ("u", "v", "d", "w0", "w", "gain"),
                  ([int(u), int(v), graph.d[e], graph.w0[e], graph.w[e], gain[e]]
                   for e, (u, v) in enumerate(graph.edges)))
    for t, w in graph.snapshots:
        _io.write_csv(out / "edge_snapshots" / f"edges_t{t:04d}.csv", ("u", "v", "w"),
                      ([int(u), int(v), w[e]] for e, (u, v) in enumerate(graph.edges)))
    nodes = [{"id": i, "type": TYPE_TOKENS[graph.types[i]], "betweenness": rep.betweenness[i],
              "closeness": rep.closeness[i], "eigenvector": rep.eigenvector[i], "crit_score": rep.crit_score[i],
              "community": int(rep.community[i])} for i in range(graph.n)]
    report = {"sigma": graph.sigma, "n_edges": len(graph.edges), "connected": rep.connected,
              "n_communities": int(rep.community.max() + 1),
              "criticals_per_community": {str(k): v for k, v in rep.per_community.items()},
              "top_k": rep.top_k.tolist(), "nodes": nodes}
    _io.write_json(out / "graph_report.json", report)
    return {"inputs": ["nodes.csv", "time.csv"], "outputs": ["graph_report.json", "edges.csv"],
            "top_k": rep.top_k.tolist(), "connected": rep.connected}


def stage_equity(cfg: PipelineConfig, out: Path):
    district = load_district(out, cfg.seed)
    timeline = load_timeline(out, cfg.scenario.dt_min / 60.0)
    ec = cfg.equity
    risks = node_risks(district, timeline, ec)
    index = community_index(risks, district, ec.gamma, ec.beta_phys, ec.beta_sens)
    _io.write_csv(out / "equity_per_node.csv", ("id", "exposure", "V", "E", "r_node"), risks.rows())
    deciles = [{"decile": d, "count": c, "mean": m, "pop_weighted_mean": w} for d, c, m, w in index.deciles]
    _io.write_json(out / "equity_summary.json", {
        "r_eq": index.r_eq, "gamma": index.gamma, "beta_phys": index.beta_phys, "beta_sens": index.beta_sens,
        "exposure": float(risks.exposure[0]), "deciles": deciles})
    _io.write_csv(out / "fig8.csv", ("decile", "count", "mean", "pop_weighted_mean"), index.deciles)
    return {"inputs": ["nodes.csv", "time.csv"], "outputs": ["equity_per_node.csv", "equity_summary.json", "fig8.csv"],
            "r_eq": index.r_eq, "deciles": deciles}


def _load_risks(out, district, ec):
    path = Path(out) / "equity_per_node.csv"
    if not path.is_file():
        return fallback_risks(district, beta_phys=ec.beta_phys, beta_sens=ec.beta_sens), True
    cols = _io.read_columns(path)
    ids = np.array(cols["id"], dtype=int)
    if not np.array_equal(ids, [n.id for n in district.nodes]):
        raise ValueError("equity_per_node.csv does not match nodes.csv")
    arr = {k: np.array(cols[k], dtype=float) for k in ("exposure", "V", "E", "r_node")}
    return RiskTable(ids, arr["exposure"], arr["V"], arr["E"], arr["r_node"]), False


def _resimulated_oh(cfg, district, timeline, interventions):
    """Indoor overheating hours with and without each microgrid's outage removal."""
    base = simulate_district(district, timeline, cfg.thermal, cfg.seed)
    calm = HazardTimeline(timeline.dt_h, timeline.t_h, timeline.T_out, np.zeros_like(timeline.outage),
                          timeline.smoke)
    powered = simulate_district(district, calm, cfg.thermal, cfg.seed)
    thr, dt = cfg.intervention.oh_threshold, timeline.dt_h
    oh0 = overheating_hours(base, dt, thr)
    pairs = {}
    for iv in interventions:
        if iv.microgrid:
            post = np.where(iv.mask[:, None], powered, base)
            pairs[iv.id] = (oh0, overheating_hours(post, dt, thr))
    return pairs


def stage_intervene(cfg: PipelineConfig, out: Path):
    district = load_district(out, cfg.seed)
    timeline = load_timeline(out, cfg.scenario.dt_min / 60.0)
    ec, ic = cfg.equity, cfg.intervention
    risks, fallback = _load_risks(out, district, ec)
    ivs = standard_interventions(risks, district)
    pairs = _resimulated_oh(cfg, district, timeline, ivs) if ic.resimulate_oh else {}
    outcomes = [eval_metrics(risks, apply_intervention(risks, iv, ec.beta_phys, ec.beta_sens), district, timeline,
                             iv, ic.oh_threshold, pairs.get(iv.id)) for iv in ivs]

    def nan(v):
        return float("nan") if v is None else v

    cost_front = pareto_front([[o.cost_kusd, nan(o.d_rpop_pct)] for o in outcomes])
    staff_front = pareto_front([[o.staff_hours, nan(o.d_rpop_pct)] for o in outcomes])
    header = ("id", "name", "d_rpop_pct", "d_r95_pct", "d_oh_pct", "staff_hours", "cost_kusd",
              "on_staff_front", "on_cost_front")
    rows = [[o.id, o.name, o.d_rpop_pct, o.d_r95_pct, o.d_oh_pct, o.staff_hours, o.cost_kusd, sf, cf]
            for o, sf, cf in zip(outcomes, staff_front, cost_front)]
    _io.write_csv(out / "intervention_table.csv", header, rows)
    _io.write_csv(out / "fig9.csv", ("id", "cost_kusd", "staff_hours", "d_rpop_pct", "d_r95_pct", "d_oh_pct",
                                     "on_cost_front", "on_staff_front"),
                  ([o.id, o.cost_kusd, o.staff_hours, o.d_rpop_pct, o.d_r95_pct, o.d_oh_pct, cf, sf]
                   for o, sf, cf in zip(outcomes, staff_front, cost_front)))
    report = {
        "fallback_frame": fallback,
        "oh_mode": "resimulated" if ic.resimulate_oh else "exposure_scaled",
        "outcomes": [dict(dataclasses.asdict(o), selector=iv.selector, masked_ids=np.flatnonzero(iv.mask).tolist(),
                          on_cost_front=bool(cf), on_staff_front=bool(sf))
                     for o, iv, cf, sf in zip(outcomes, ivs, cost_front, staff_front)],
        "cost_front": [o.id for o, f in zip(outcomes, cost_front) if f],
        "staff_front": [o.id for o, f in zip(outcomes, staff_front) if f],
    }
    _io.write_json(out / "intervention_report.json", report)
    inputs = ["nodes.csv", "time.csv"] + ([] if fallback else ["equity_per_node.csv"])
    return {"inputs": inputs, "outputs": ["intervention_table.csv", "intervention_report.json", "fig9.csv"],
            "outcomes": report["outcomes"], "cost_front": report["cost_front"],
            "staff_front": report["staff_front"], "fallback_frame": fallback}


_RUNNERS = {
    "generate": stage_generate, "simulate": stage_simulate, "sense": stage_sense, "fuse": stage_fuse,
    "calibrate": stage_calibrate, "graph": stage_graph, "equity": stage_equity, "intervene": stage_intervene,
}


def _update_manifest(out: Path, stage, cfg, info):
    path = out / "manifest.json"
    manifest = _io.read_json(path) if path.is_file() else {"stages": {}}
    manifest["stages"][stage] = {
        "stage": stage,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "inputs": {n: _io.file_hash(out / n) for n in info["inputs"]},
        "outputs": {n: _io.file_hash(out / n) for n in info["outputs"]},
    }
    manifest["last_stage"] = stage
    _io.write_json(path, manifest)


def run_stage(stage: str, cfg: PipelineConfig, out=None) -> dict:
    """Run one stage into ``out`` (default ``cfg.out_dir``) and record it in the manifest."""
    if stage not in _RUNNERS:
        raise ValueError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    out = Path(cfg.out_dir if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        info = _RUNNERS[stage](cfg, out)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"{type(exc).__name__}: {exc}") from exc
    _update_manifest(out, stage, cfg, info)
    return info


def run_pipeline(cfg: PipelineConfig, out=None, stages=STAGES) -> dict:
    """Every stage in order, then ``summary.json`` with the headline numbers."""
    out = Path(cfg.out_dir if out is None else out)
    results = {}
    for stage in stages:
        try:
            results[stage] = run_stage(stage, cfg, out)
        except HazardTwinError as exc:
            raise type(exc)(f"stage {stage} failed: {exc}") from exc
        except Exception as exc:
            raise HazardTwinError(f"stage {stage} failed: {type(exc).__name__}: {exc}") from exc
    summary = {"seed": cfg.seed, "config_hash": config_hash(cfg)}
    if "simulate" in results:
        peaks = results["simulate"]["school_blackout_peaks"]
        summary["school_blackout_peaks"] = peaks
        summary["indoor_peak_band"] = [min(peaks), max(peaks)]
    if "fuse" in results:
        summary["final_fusion_weights"] = results["fuse"]["final_weights"]
    if "calibrate" in results:
        summary["pooled_rmse"] = results["calibrate"]["rmse"]["pooled"]
        summary["pooled_mae"] = results["calibrate"]["mae"]["pooled"]
        summary["rmse_by_source"] = results["calibrate"]["rmse"]
    if "equity" in results:
        summary["r_eq"] = results["equity"]["r_eq"]
    if "intervene" in results:
        r = results["intervene"]
        summary["interventions"] = [{k: o[k] for k in ("id", "name", "d_rpop_pct", "d_r95_pct", "d_oh_pct",
                                                       "staff_hours", "cost_kusd", "on_cost_front",
                                                       "on_staff_front")} for o in r["outcomes"]]
        summary["cost_front"] = r["cost_front"]
        summary["staff_front"] = r["staff_front"]
    _io.write_json(out / "summary.json", summary)
    return summary
