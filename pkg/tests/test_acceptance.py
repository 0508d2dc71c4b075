"""Acceptance suite: one test per shipped guarantee, run at full scale.

Each test prints a single PASS line with the measured margin next to its
fixed tolerance. Expected posterior values are frozen outputs of the oracle
routes in simzoo (closed form, dense grid quadrature, channel enumeration
plus 3-D quadrature); the oracle machinery itself is cross-validated against
independent estimators in tests/test_simzoo.py. Nothing here reads the
clock for seeding, so every run measures the same computation.
"""

import json
import math
import statistics
import time
from types import SimpleNamespace

import numpy as np
import pytest

from simppl import cli, simzoo
from simppl.distributions import (
    Categorical,
    Exponential,
    Normal,
    Poisson,
    ScaledBeta,
    Uniform,
)
from simppl.inspector import (
    END,
    START,
    SuccessionGraph,
    TraceStats,
    hotspot_report,
)
from simppl.net import (
    TrainedProposal,
    TrainingConfig,
    _derived_seed,
    discover_architecture,
    glorot_init,
    ic_grad,
    ic_loss,
    train,
)
from simppl.net import ProposalNetwork
from simppl.runtime import FixedProposal, Mode, run_model
from simppl.sis import (
    effective_sample_size,
    particle_seed,
    posterior_summary,
    sis_infer,
)

GAUSSIAN = simzoo.get_model("gaussian_unknown_mean")
REJECTION = simzoo.get_model("rejection_demo")
TAU = simzoo.get_model("tau_decay_toy")

# Frozen oracle posterior for rejection_demo at y=0.5 (512x512 grid over the
# square masked to the disc; doubling the resolution moves it by < 1e-5).
REJECTION_ORACLE_MEAN_U = 0.4930785960495851

# Frozen oracle posteriors for the five tau test observations (channel
# enumeration + adaptive 3-D quadrature, 64 points per axis on the fine
# pass; the channel posterior is degenerate at the ground-truth channel to
# double precision in all five cases). Keyed by observation seed.
TAU_ORACLE = {
    23: {"channel": 0,
         "p_x": (-0.03741245349250026, 0.2158971326560125),
         "p_y": (-0.14270883351423522, 0.24917999964131388),
         "p_z": (26.033634982566525, 0.7852330104884677)},
    8: {"channel": 1,
        "p_x": (2.77959983234825, 0.23829521245212956),
        "p_y": (3.0395584541953937, 0.24292744147133957),
        "p_z": (19.764104357333014, 0.5668853768048614)},
    6: {"channel": 2,
        "p_x": (-5.364486684114657, 0.20616081736861389),
        "p_y": (-3.348968335231814, 0.19567060340474007),
        "p_z": (15.755715237847813, 0.4155959866047072)},
    4: {"channel": 3,
        "p_x": (-2.4215512784342454, 0.15820868028126273),
        "p_y": (5.224836254628533, 0.18408552703549338),
        "p_z": (12.242948553630262, 0.3588650379379938)},
    10: {"channel": 4,
         "p_x": (3.435099967022381, 0.1797140321929206),
         "p_y": (-0.3559842289034324, 0.14571346322669473),
         "p_z": (11.02638486075445, 0.33410850981171714)},
}


def test_conjugate_posterior_recovery():
    # gaussian_unknown_mean, y=1: posterior is N(0.5, 0.5). Mean within 3
    # standard errors (se = sqrt(var/ESS)), variance within 20%, under 10 s
    # single-threaded at 10^4 particles with prior proposals.
    t0 = time.perf_counter()
    ps = sis_infer(GAUSSIAN.run, {"y": 1.0}, 10_000, master_seed=42)
    elapsed = time.perf_counter() - t0
    summary = posterior_summary(ps, "mu")
    ess = effective_sample_size(ps)
    se = math.sqrt(0.5 / ess)
    mean_err = abs(summary["mean"] - 0.5)
    var_rel = abs(summary["var"] - 0.5) / 0.5
    assert mean_err <= 3 * se
    assert var_rel <= 0.20
    assert elapsed < 10.0
    print(f"PASS conjugate recovery: |mean-0.5|={mean_err:.4f} <= {3 * se:.4f}, "
          f"var rel err {var_rel:.4f} <= 0.20, {elapsed:.1f}s < 10s")


def test_rejection_trace_lengths():
    # Record mode commits only the accepted disc attempt: length exactly 2
    # across 10^4 seeds. Prior mode keeps every rejected attempt: mean
    # length within 5% of 2*(4/pi), the geometric-retry expectation.
    for i in range(10_000):
        trace = run_model(REJECTION.run, Mode.RECORD, particle_seed(201, i))
        assert trace.length == 2
    total = 0
    n_prior = 100_000
    for i in range(n_prior):
        total += run_model(REJECTION.run, Mode.PRIOR, particle_seed(202, i)).length
    mean_len = total / n_prior
    target = 8.0 / math.pi
    rel = abs(mean_len - target) / target
    assert rel <= 0.05
    print(f"PASS rejection trace lengths: record len == 2 for 10^4 seeds, "
          f"prior mean {mean_len:.4f} vs {target:.4f} (rel {rel:.4f} <= 0.05)")


def test_biased_proposal_weight_accounting():
    # Deliberately biased proposals (interval-rescaled Beta(2,2) replacing
    # each Uniform inside the rejection scope) must still reproduce the
    # grid-oracle posterior mean of u, because every executed draw,
    # rejected ones included, contributes log_p - log_q to its weight.
    biased = FixedProposal({
        "disc/u:Uniform": ScaledBeta(2.0, 2.0, -1.0, 1.0),
        "disc/v:Uniform": ScaledBeta(2.0, 2.0, -1.0, 1.0),
    })
    ps = sis_infer(REJECTION.run, {"y": 0.5}, 10_000,
                   proposal_source=biased, master_seed=31)
    assert all(t.proposal_fallbacks == 0 for t in ps.traces)
    mean_u = posterior_summary(ps, "u")["mean"]
    err = abs(mean_u - REJECTION_ORACLE_MEAN_U)
    assert err <= 0.05
    print(f"PASS biased-proposal accounting: |mean_u - oracle| = {err:.4f} "
          f"<= 0.05 (ESS {effective_sample_size(ps):.0f})")


def _all_family_model(ctx):
    mu = ctx.sample("mu", Normal(0.0, 1.0))
    u = ctx.sample("u", Uniform(-1.0, 2.0))
    k = ctx.sample("k", Categorical((0.2, 0.3, 0.5)))
    rate = ctx.sample("rate", Exponential(0.5))
    count = ctx.sample("count", Poisson(3.0))
    ctx.observe("y", Normal(mu + u + k + rate + count, 1.0), ctx.observed("y"))
    ctx.predict("mu", mu)


def test_gradient_against_finite_differences():
    # ic_grad vs central differences (h = 1e-5) on 200 random coordinates
    # of a network whose heads cover all five proposal families; max
    # relative error < 1e-4, under 30 s.
    t0 = time.perf_counter()
    spec = SimpleNamespace(run=_all_family_model)
    arch, std = discover_architecture(spec, 404, n_sims=16)
    families = {h.family for h in arch.heads.values()}
    assert families == {"Normal", "Uniform", "Categorical", "Exponential",
                        "Poisson"}
    params = glorot_init(arch, _derived_seed(404, 0))
    rng = np.random.default_rng(4242)
    vec = params.to_vector()
    vec = vec + rng.normal(0.0, 0.05, vec.shape)
    params.from_vector(vec)
    net = ProposalNetwork(arch=arch, params=params, standardization=std)
    batch = [run_model(_all_family_model, Mode.RECORD, particle_seed(400, i))
             for i in range(6)]
    analytic = ic_grad(net, batch).to_vector()
    h = 1e-5
    idx = rng.choice(vec.size, size=200, replace=False)
    worst = 0.0
    for j in idx:
        shifted = vec.copy()
        shifted[j] += h
        params.from_vector(shifted)
        hi = ic_loss(net, batch)
        shifted[j] -= 2 * h
        params.from_vector(shifted)
        lo = ic_loss(net, batch)
        fd = (hi - lo) / (2 * h)
        rel = abs(fd - analytic[j]) / max(abs(fd), abs(analytic[j]), 1e-6)
        worst = max(worst, rel)
    elapsed = time.perf_counter() - t0
    assert worst < 1e-4
    assert elapsed < 30.0
    print(f"PASS gradient check: max rel err {worst:.2e} < 1e-4 over 200 "
          f"coordinates, all 5 families, {elapsed:.1f}s < 30s")


def test_amortization_benefit():
    # After 2000 default training steps on gaussian_unknown_mean, the
    # trained proposals must raise the median ESS at 1000 particles across
    # 20 prior-predictive observations, strictly.
    net = train(GAUSSIAN, TrainingConfig(steps=2000, master_seed=5))
    guided, prior = [], []
    for i in range(20):
        obs, _ = simzoo.make_observation("gaussian_unknown_mean", 100 + i)
        source = TrainedProposal(net, GAUSSIAN.obs_to_vector(obs))
        ps_g = sis_infer(GAUSSIAN.run, obs, 1000, proposal_source=source,
                         master_seed=7000 + i)
        ps_p = sis_infer(GAUSSIAN.run, obs, 1000, master_seed=7000 + i)
        guided.append(effective_sample_size(ps_g))
        prior.append(effective_sample_size(ps_p))
    med_g = statistics.median(guided)
    med_p = statistics.median(prior)
    assert med_g > med_p
    print(f"PASS amortization benefit: median ESS {med_g:.1f} (trained) > "
          f"{med_p:.1f} (prior) over 20 observations")


def test_tau_posterior_equivalence():
    # Five fixed observations covering all five decay channels: guided SIS
    # at 10^4 particles must match the enumeration+quadrature oracle within
    # total variation 0.05 on the channel posterior and within 3 oracle
    # standard deviations on each momentum mean, all inside 5 minutes.
    t0 = time.perf_counter()
    net = train(TAU, TrainingConfig(steps=3000, master_seed=7, batch_size=32,
                                    learning_rate=3e-2))
    worst_tv = 0.0
    worst_dev = 0.0
    for obs_seed, oracle in TAU_ORACLE.items():
        obs, gt = simzoo.make_observation("tau_decay_toy", obs_seed)
        assert gt["channel"] == oracle["channel"]
        source = TrainedProposal(net, TAU.obs_to_vector(obs))
        ps = sis_infer(TAU.run, obs, 10_000, proposal_source=source,
                       master_seed=999, threads=4)
        hist = posterior_summary(ps, "channel")["histogram"]
        tv = 0.5 * sum(abs(hist.get(c, 0.0) - (1.0 if c == oracle["channel"] else 0.0))
                       for c in range(5))
        assert tv <= 0.05, f"obs seed {obs_seed}: channel TV {tv:.4f}"
        worst_tv = max(worst_tv, tv)
        for name in ("p_x", "p_y", "p_z"):
            mean, sd = oracle[name]
            dev = abs(posterior_summary(ps, name)["mean"] - mean) / sd
            assert dev <= 3.0, f"obs seed {obs_seed}: {name} at {dev:.2f} sd"
            worst_dev = max(worst_dev, dev)
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    print(f"PASS tau posterior equivalence: worst channel TV {worst_tv:.4f} "
          f"<= 0.05, worst momentum dev {worst_dev:.2f} sd <= 3, "
          f"{elapsed:.0f}s < 300s")


def test_inspector_structure():
    # 988 prior tau traces: flow-conserved succession graph, START outflow
    # 988, no cycles. rejection_demo traces: exactly one cycle, through the
    # two disc-scope addresses, and hotspot_report names it.
    graph = SuccessionGraph()
    stats = TraceStats()
    for i in range(988):
        trace = run_model(TAU.run, Mode.PRIOR, particle_seed(55, i))
        graph.add_trace(trace)
        stats.add_trace(trace)
    for node in graph.nodes - {START, END}:
        assert graph.in_degree(node) == graph.out_degree(node)
    assert graph.out_degree(START) == 988
    tau_report = hotspot_report(stats, graph)
    assert tau_report["cycles"] == []

    rej_graph = SuccessionGraph()
    rej_stats = TraceStats()
    for i in range(2000):
        trace = run_model(REJECTION.run, Mode.PRIOR, particle_seed(56, i))
        rej_graph.add_trace(trace)
        rej_stats.add_trace(trace)
    report = hotspot_report(rej_stats, rej_graph)
    assert len(report["cycles"]) == 1
    cycle = report["cycles"][0]
    assert cycle["nodes"] == ["disc/u:Uniform", "disc/v:Uniform"]
    assert cycle["traversals"] > 0
    print(f"PASS inspector structure: tau graph flow-conserved and acyclic "
          f"(START outflow 988); rejection graph has exactly the disc cycle "
          f"({cycle['traversals']} traversals)")


def test_cli_determinism(tmp_path, capsys):
    # Every command, re-run with identical flags, must write bit-identical
    # files, and thread counts 1 and 4 must agree.
    def run(argv):
        assert cli.main(argv) == 0

    def generate(tag, threads):
        out = tmp_path / f"gen_{tag}.jsonl"
        run(["generate", "--model", "rejection_demo", "--n", "60", "--seed",
             "13", "--out", str(out), "--threads", threads])
        return out.read_bytes()

    def train_cmd(tag, threads):
        out = tmp_path / f"net_{tag}.json"
        run(["train", "--model", "gaussian_unknown_mean", "--steps", "5",
             "--seed", "3", "--batch-size", "8", "--net-out", str(out),
             "--threads", threads])
        return out.read_bytes()

    obs_path = tmp_path / "obs.json"
    obs_path.write_text(json.dumps(
        {"model": "gaussian_unknown_mean", "values": {"y": 0.7}}))
    net_path = tmp_path / "net_a.json"

    def infer(tag, threads):
        out = tmp_path / f"post_{tag}.json"
        run(["infer", "--model", "gaussian_unknown_mean", "--observation",
             str(obs_path), "--net", str(net_path), "--particles", "300",
             "--seed", "17", "--out", str(out), "--threads", threads])
        return out.read_bytes()

    traces_path = tmp_path / "gen_a.jsonl"

    def inspect(tag, threads):
        dot = tmp_path / f"graph_{tag}.dot"
        stats = tmp_path / f"stats_{tag}.json"
        run(["inspect", "--traces", str(traces_path), "--dot-out", str(dot),
             "--stats-out", str(stats), "--threads", threads])
        return dot.read_bytes() + stats.read_bytes()

    for name, command in (("generate", generate), ("train", train_cmd),
                          ("infer", infer), ("inspect", inspect)):
        a = command("a", "1")
        b = command("b", "1")
        c = command("c", "4")
        assert a == b, f"{name}: rerun differs"
        assert a == c, f"{name}: thread count changed the bytes"
    capsys.readouterr()
    print("PASS CLI determinism: generate/train/infer/inspect bit-identical "
          "across reruns and across thread counts 1 and 4")
