"""System acceptance suite.

Ten release gates, one test each, run end to end at desk scale: gradient
correctness, distribution recovery, conditioning invariants, the
stride-1 degeneracy, corridor coverage, out-of-distribution stitching,
the segment-length ablation, the generalization-gap probe, planning
latency, and on-disk format round-trips. Every test prints a single
``[criterion NN] name: PASS/FAIL`` line with its key numbers and wall
time, and the thresholds sit right next to the assertions.

The heavier gates train real models; the whole file takes roughly an
hour on one core. Everything is seeded, so reruns reproduce the same
numbers bit for bit.
"""

import math
import time

import numpy as np
import pytest

from diffplan.autodiff import Tensor
from diffplan.diffusion import (
    Constraint,
    SampleConfig,
    build_schedule,
    denoise_loss,
    denoise_loss_eval,
    guidance_loss,
    guidance_loss_eval,
    sample_plan,
    sample_plan_batch,
)
from diffplan.evaluation import (
    corridor_index,
    generalization_gap,
    mode_coverage,
    plan_deviation,
    time_callable,
)
from diffplan.maze import (
    bfs_path,
    builtin_maze,
    cell_center,
    generate_dataset,
    make_corner_task,
    reference_paths,
    routed_pair_sampler,
    uniform_pair_sampler,
)
from diffplan.nets import (
    NetConfig,
    init_denoiser,
    init_guidance,
    load_checkpoint,
    return_predict,
    save_checkpoint,
)
from diffplan.planners import (
    EpisodeConfig,
    FlatPlanner,
    HierarchicalPlanner,
    LevelModel,
    plan_flat,
    plan_high,
    plan_hierarchical,
    run_episode,
)
from diffplan.rng import EVAL, PLAN, TRAIN, derive_seed, substream
from diffplan.trajectory import (
    Layout,
    NormStats,
    layout_channels,
    load_dataset,
    make_flat,
    normalize,
    denormalize,
    save_dataset,
)
from diffplan.training import (
    TrainConfig,
    WindowSpec,
    train_denoiser,
    train_guidance,
)

D_S, D_A = 4, 2
CH = D_S + D_A
M_DESK = 32  # diffusion steps for the maze experiments


@pytest.fixture
def report(capsys):
    def _report(line):
        with capsys.disabled():
            print(line, flush=True)
    return _report


def _verdict(report, num, name, ok, detail):
    word = "PASS" if ok else "FAIL"
    report(f"[criterion {num:02d}] {name}: {word} ({detail})")
    assert ok, f"criterion {num} {name}: {detail}"


def _wide_stats():
    return NormStats(
        state_min=np.array([-12.0, -12.0, -3.0, -3.0]),
        state_max=np.array([12.0, 12.0, 3.0, 3.0]),
        action_min=np.array([-1.5, -1.5]),
        action_max=np.array([1.5, 1.5]),
    )


def _fit(dataset, window, net, sched, steps, seed, batch=32, lr=2e-3):
    cfg = TrainConfig(steps=steps, batch_size=batch, lr=lr, seed=seed,
                      val_fraction=0.1, log_interval=100)
    params, history = train_denoiser(dataset, window, net, sched, cfg)
    return params, history


# ------------------------------------------------------------ shared datasets


@pytest.fixture(scope="session")
def umaze_data():
    spec = builtin_maze("umaze5")
    return generate_dataset(spec, 3000, 31,
                            pair_sampler=uniform_pair_sampler(spec),
                            min_length=20)


def _marked_routes_sampler(spec):
    pair = (spec.start_cell, spec.goal_cell)
    mid = spec.cols // 2
    vias = tuple((r, mid) for r in range(spec.rows) if spec.is_free((r, mid)))
    return routed_pair_sampler([pair], lambda _: tuple((v,) for v in vias))


@pytest.fixture(scope="session")
def threepath_data():
    spec = builtin_maze("threepath")
    return generate_dataset(spec, 45000, 1,
                            pair_sampler=_marked_routes_sampler(spec),
                            min_length=160)


@pytest.fixture(scope="session")
def oodgrid_data():
    spec = builtin_maze("oodgrid")
    task = make_corner_task(spec)
    sampler = routed_pair_sampler(task.train_pairs, task.via_choices)
    return generate_dataset(spec, 60000, 2, pair_sampler=sampler,
                            min_length=184)


@pytest.fixture(scope="session")
def medium8_data():
    spec = builtin_maze("medium8")
    return generate_dataset(spec, 40000, 3,
                            pair_sampler=uniform_pair_sampler(spec),
                            min_length=80)


# -------------------------------------------------- 1: gradient correctness


def test_criterion_01_gradient_correctness(report):
    t0 = time.perf_counter()
    net = NetConfig(channels_in=D_S, hidden_channels=6, depth=1,
                    kernel_size=3, embed_dim=4)
    sched = build_schedule(8, "cosine")

    def fd_vs_returned(kind, seed):
        """Full-coordinate central differences against the returned
        parameter gradients."""
        data_rng = substream(100, TRAIN, seed)
        if kind == "denoise":
            params = init_denoiser(net, seed=seed)
            batch = data_rng.normal(size=(2, D_S, 6))
            loss_g, loss_e = denoise_loss, denoise_loss_eval
        else:
            params = init_guidance(net, seed=seed)
            batch = (data_rng.normal(size=(2, D_S, 6)),
                     data_rng.normal(size=2))
            loss_g, loss_e = guidance_loss, guidance_loss_eval
        path = (200, EVAL, seed)
        _, grads = loss_g(params, batch, sched, substream(*path))
        tensors = params.tensors()
        worst = 0.0
        h = 1e-4
        for ti, t in enumerate(tensors):
            ad = grads[t].data.reshape(-1)
            flat = t.data.reshape(-1)
            for ci in range(flat.size):
                bumped = flat.copy()
                bumped[ci] = flat[ci] + h
                hi = loss_e(_swap(params, tensors, ti, bumped, t.shape),
                            batch, sched, substream(*path))
                bumped[ci] = flat[ci] - h
                lo = loss_e(_swap(params, tensors, ti, bumped, t.shape),
                            batch, sched, substream(*path))
                fd = (hi - lo) / (2 * h)
                worst = max(worst, abs(ad[ci] - fd) / (abs(fd) + 1e-8))
        return worst

    def _swap(params, tensors, ti, flat, shape):
        new = list(tensors)
        new[ti] = Tensor(flat.reshape(shape))
        return params.with_tensors(new)

    def fd_input_gradient(seed):
        """Gradient of the return head with respect to its input matrix."""
        params = init_guidance(net, seed=300 + seed)
        rng = substream(400, EVAL, seed)
        x = rng.normal(size=(D_S, 6))
        m = int(rng.integers(1, sched.num_steps + 1))
        ad = params.input_gradient(Tensor(x), m).reshape(-1)
        flat = x.reshape(-1)
        worst = 0.0
        h = 1e-4
        for ci in range(flat.size):
            bumped = flat.copy()
            bumped[ci] = flat[ci] + h
            hi = return_predict(params, Tensor(bumped.reshape(x.shape)),
                                m).item()
            bumped[ci] = flat[ci] - h
            lo = return_predict(params, Tensor(bumped.reshape(x.shape)),
                                m).item()
            fd = (hi - lo) / (2 * h)
            worst = max(worst, abs(ad[ci] - fd) / (abs(fd) + 1e-8))
        return worst

    worst_d = max(fd_vs_returned("denoise", s) for s in range(10))
    worst_g = max(fd_vs_returned("guidance", s) for s in range(10))
    worst_x = max(fd_input_gradient(s) for s in range(10))
    elapsed = time.perf_counter() - t0
    ok = worst_d <= 1e-4 and worst_g <= 1e-4 and worst_x <= 1e-4 \
        and elapsed < 60
    _verdict(report, 1, "gradient correctness", ok,
             f"max rel err: denoise {worst_d:.2e}, guidance {worst_g:.2e}, "
             f"input {worst_x:.2e}; {elapsed:.0f}s")


# ------------------------------------------------------- 2: diffusion sanity


GMM_CENTERS = np.array([[-0.6, -0.6], [0.6, 0.6]])
GMM_STD = 0.1


def test_criterion_02_diffusion_sanity(report):
    t0 = time.perf_counter()
    seed = 13
    net = NetConfig(channels_in=2, hidden_channels=32, depth=2,
                    kernel_size=3, embed_dim=16)
    params = init_denoiser(net, seed=seed)
    sched = build_schedule(100, "cosine")

    from diffplan.training import AdamState, adam_step
    state = AdamState(params.tensors())
    for step in range(1, 2501):
        rng = substream(seed, TRAIN, step)
        comp = rng.integers(0, 2, size=128)
        batch = (GMM_CENTERS[comp]
                 + GMM_STD * rng.normal(size=(128, 2))).reshape(128, 2, 1)
        _, grads = denoise_loss(params, batch, sched, rng)
        tensors = params.tensors()
        params = params.with_tensors(
            adam_step(state, tensors, [grads[t] for t in tensors], 2e-3))

    chunks = []
    for chunk in range(8):
        cfgs = [SampleConfig(seed=derive_seed(seed, PLAN, chunk, i))
                for i in range(250)]
        out = sample_plan_batch(params, None, (2, 1), sched, cfgs,
                                [[] for _ in range(250)])
        chunks.append(out.reshape(250, 2))
    samples = np.concatenate(chunks)

    assign = np.argmin(((samples[:, None, :] - GMM_CENTERS[None]) ** 2)
                       .sum(-1), axis=1)
    weights = np.array([(assign == c).mean() for c in (0, 1)])
    mean_err = max(np.abs(samples[assign == c].mean(axis=0)
                          - GMM_CENTERS[c]).max() for c in (0, 1))
    elapsed = time.perf_counter() - t0
    ok = np.all(np.abs(weights - 0.5) <= 0.1) and mean_err <= 0.2 \
        and elapsed < 600
    _verdict(report, 2, "diffusion sanity", ok,
             f"weights {weights[0]:.3f}/{weights[1]:.3f}, "
             f"mean err {mean_err:.3f}; {elapsed:.0f}s")


# ------------------------------------------------ 3: conditioning invariants


def test_criterion_03_conditioning_invariants(report):
    t0 = time.perf_counter()
    sched = build_schedule(4, "cosine")
    layouts = (Layout.FLAT, Layout.SD_WITH_ACTIONS, Layout.SD_STATES_ONLY,
               Layout.SD_DENSE_ACTIONS, Layout.SEGMENT)
    params_by_ch = {}
    rng = substream(500, PLAN, 0)

    def params_for(channels):
        if channels not in params_by_ch:
            net = NetConfig(channels_in=channels, hidden_channels=8,
                            depth=1, kernel_size=3, embed_dim=4)
            params_by_ch[channels] = init_denoiser(net, seed=channels)
        return params_by_ch[channels]

    exact = 0
    n_calls = 1000
    for i in range(n_calls):
        layout = layouts[int(rng.integers(len(layouts)))]
        stride = int(rng.integers(2, 5)) if layout in (
            Layout.SD_WITH_ACTIONS, Layout.SD_STATES_ONLY,
            Layout.SD_DENSE_ACTIONS) else 1
        channels = layout_channels(layout, D_S, D_A, stride)
        columns = int(rng.integers(4, 9))
        cols = rng.choice(columns, size=int(rng.integers(1, 4)),
                          replace=False)
        constraints = []
        for col in cols:
            r0 = int(rng.integers(0, channels))
            r1 = int(rng.integers(r0 + 1, channels + 1))
            vals = rng.uniform(-1, 1, size=r1 - r0)
            constraints.append(Constraint(r0, r1, int(col), vals))
        cfg = SampleConfig(seed=int(rng.integers(2 ** 63)))
        out = sample_plan(params_for(channels), None, (channels, columns),
                          sched, cfg, constraints).data
        if all(np.array_equal(out[c.row_start:c.row_stop, c.col], c.values)
               for c in constraints):
            exact += 1

    continuity = 0
    n_hd = 30
    stats = _wide_stats()
    for i in range(n_hd):
        k = int(rng.integers(2, 5))
        h = int(rng.integers(2, 5))
        net = NetConfig(channels_in=CH, hidden_channels=8, depth=1,
                        kernel_size=3, embed_dim=4)
        high = LevelModel(params=init_denoiser(net, seed=600 + i),
                          window=WindowSpec(Layout.SD_WITH_ACTIONS, k, h + 1),
                          sched=sched)
        low = LevelModel(params=init_denoiser(net, seed=700 + i),
                         window=WindowSpec(Layout.SEGMENT, 1, k + 1),
                         sched=sched)
        start = np.concatenate([rng.uniform(-8, 8, size=2),
                                rng.uniform(-2, 2, size=2)])
        goal = np.concatenate([rng.uniform(-8, 8, size=2),
                               rng.uniform(-2, 2, size=2)])
        plan = plan_hierarchical(high, low, stats, start, goal,
                                 int(rng.integers(2 ** 63)))
        bounds_ok = all(
            np.array_equal(plan.states[j * k], plan.subgoals[j])
            for j in range(h + 1))
        endpoint_ok = np.array_equal(plan.states[0], start) and \
            np.array_equal(plan.states[-1], goal)
        continuity += bounds_ok and endpoint_ok

    elapsed = time.perf_counter() - t0
    ok = exact == n_calls and continuity == n_hd and elapsed < 300
    _verdict(report, 3, "conditioning invariants", ok,
             f"bit-exact {exact}/{n_calls}, continuous {continuity}/{n_hd}; "
             f"{elapsed:.0f}s")


# ------------------------------------------------------ 4: stride-1 oracle


def test_criterion_04_stride1_degeneracy(report, umaze_data):
    t0 = time.perf_counter()
    sched = build_schedule(16, "cosine")
    net = NetConfig(channels_in=CH, hidden_channels=16, depth=2,
                    kernel_size=3, embed_dim=8)
    w_flat = WindowSpec(Layout.FLAT, 1, 13)
    w_sd1 = WindowSpec(Layout.SD_WITH_ACTIONS, 1, 13)
    cfg = TrainConfig(steps=300, batch_size=16, lr=2e-3, seed=5,
                      val_fraction=0.1, log_interval=60)
    p_flat, h_flat = train_denoiser(umaze_data, w_flat, net, sched, cfg)
    p_sd1, h_sd1 = train_denoiser(umaze_data, w_sd1, net, sched, cfg)

    hist_same = len(h_flat) == len(h_sd1) and all(
        a.step == b.step and a.train_loss == b.train_loss
        and a.val_loss == b.val_loss
        for a, b in zip(h_flat, h_sd1))
    params_same = all(np.array_equal(a.data, b.data)
                      for a, b in zip(p_flat.tensors(), p_sd1.tensors()))

    stats = umaze_data.norm_stats()
    start = np.array([1.5, 1.5, 0.0, 0.0])
    goal = np.array([5.5, 1.5, 0.0, 0.0])
    pf = plan_flat(LevelModel(params=p_flat, window=w_flat, sched=sched),
                   stats, start, goal, 77)
    ps = plan_high(LevelModel(params=p_sd1, window=w_sd1, sched=sched),
                   stats, start, goal, 77)
    plans_same = np.array_equal(pf.states, ps.states) and \
        np.array_equal(pf.actions, ps.actions)

    elapsed = time.perf_counter() - t0
    ok = hist_same and params_same and plans_same and elapsed < 300
    _verdict(report, 4, "stride-1 degeneracy", ok,
             f"history identical {hist_same}, params identical "
             f"{params_same}, plans identical {plans_same}; {elapsed:.0f}s")


# ------------------------------------------------------- 5: corridor coverage


def test_criterion_05_mode_coverage(report, threepath_data):
    t0 = time.perf_counter()
    spec = builtin_maze("threepath")
    sched = build_schedule(M_DESK, "cosine")
    stats = threepath_data.norm_stats()
    span = 144

    def flat_planner(kernel):
        net = NetConfig(channels_in=CH, hidden_channels=64, depth=4,
                        kernel_size=kernel, embed_dim=32)
        params, _ = _fit(threepath_data, WindowSpec(Layout.FLAT, 1, span + 1),
                         net, sched, 2500, 0)
        return FlatPlanner(model=LevelModel(
            params=params, window=WindowSpec(Layout.FLAT, 1, span + 1),
            sched=sched), stats=stats)

    def hd_planner():
        w_high = WindowSpec(Layout.SD_WITH_ACTIONS, 8, 19)
        w_low = WindowSpec(Layout.SEGMENT, 1, 9)
        net_high = NetConfig(channels_in=CH, hidden_channels=64, depth=4,
                             kernel_size=5, embed_dim=32)
        net_low = NetConfig(channels_in=CH, hidden_channels=32, depth=4,
                            kernel_size=5, embed_dim=32)
        p_high, _ = _fit(threepath_data, w_high, net_high, sched, 2500, 0)
        p_low, _ = _fit(threepath_data, w_low, net_low, sched, 2500, 0)
        return HierarchicalPlanner(
            high=LevelModel(params=p_high, window=w_high, sched=sched),
            low=LevelModel(params=p_low, window=w_low, sched=sched),
            stats=stats)

    start = np.concatenate([cell_center(spec.start_cell), np.zeros(2)])
    goal = np.concatenate([cell_center(spec.goal_cell), np.zeros(2)])

    def coverage(planner):
        idxs = [corridor_index(
            planner.plan(start, goal, derive_seed(7, PLAN, i)).states)
            for i in range(64)]
        return mode_coverage(idxs)

    cov_hd = coverage(hd_planner())
    cov_f3 = coverage(flat_planner(3))
    cov_f9 = coverage(flat_planner(9))

    elapsed = time.perf_counter() - t0
    ok = cov_hd == 1.0 and cov_f3 < cov_f9 \
        and cov_hd >= cov_f3 + 1.0 / 3.0 and elapsed < 2700
    _verdict(report, 5, "mode coverage", ok,
             f"coverage hd {cov_hd:.2f}, flat-k3 {cov_f3:.2f}, "
             f"flat-k9 {cov_f9:.2f}; {elapsed:.0f}s")


# ---------------------------------------------------------- 6: OOD stitching


def test_criterion_06_ood_stitching(report, oodgrid_data):
    t0 = time.perf_counter()
    spec = builtin_maze("oodgrid")
    task = make_corner_task(spec)
    sched = build_schedule(M_DESK, "cosine")
    stats = oodgrid_data.norm_stats()
    span = 160

    refs = {}
    for pair in task.test_pairs:
        moves = len(bfs_path(spec, *pair)) - 1
        refs[pair] = reference_paths(spec, *pair, count=3,
                                     target_horizon=11 * moves, seed=4,
                                     tolerance=6)

    def episodes(planner):
        succ, cosines, mses = 0, [], []
        for s in range(10):
            for j, pair in enumerate(task.test_pairs):
                ec = EpisodeConfig(seed=derive_seed(9, EVAL, s, j),
                                   max_steps=300, mode="track")
                rec = run_episode(spec, planner, *pair, ec)
                succ += rec.success
                dev = plan_deviation(rec.first_plan.states, refs[pair])
                cosines.append(dev.cosine)
                mses.append(dev.mse)
        n = 10 * len(task.test_pairs)
        return succ / n, float(np.mean(cosines)), float(np.mean(mses))

    w_flat = WindowSpec(Layout.FLAT, 1, span + 1)
    flat_stats = {}
    for kernel in (3, 5, 9):
        net = NetConfig(channels_in=CH, hidden_channels=64, depth=4,
                        kernel_size=kernel, embed_dim=32)
        params, _ = _fit(oodgrid_data, w_flat, net, sched, 2000, 0)
        planner = FlatPlanner(model=LevelModel(params=params, window=w_flat,
                                               sched=sched), stats=stats)
        flat_stats[kernel] = episodes(planner)

    w_high = WindowSpec(Layout.SD_WITH_ACTIONS, 16, 11)
    w_low = WindowSpec(Layout.SEGMENT, 1, 17)
    net = NetConfig(channels_in=CH, hidden_channels=64, depth=4,
                    kernel_size=5, embed_dim=32)
    p_high, _ = _fit(oodgrid_data, w_high, net, sched, 2000, 0)
    p_low, _ = _fit(oodgrid_data, w_low, net, sched, 2000, 0)
    hd = HierarchicalPlanner(
        high=LevelModel(params=p_high, window=w_high, sched=sched),
        low=LevelModel(params=p_low, window=w_low, sched=sched),
        stats=stats)
    hd_succ, hd_cos, hd_mse = episodes(hd)

    elapsed = time.perf_counter() - t0
    flats_ok = all(rate <= 0.30 for rate, _, _ in flat_stats.values())
    cos_ok = all(hd_cos > cos for _, cos, _ in flat_stats.values())
    mse_ok = all(hd_mse < mse for _, _, mse in flat_stats.values())
    ok = hd_succ >= 0.90 and flats_ok and cos_ok and mse_ok \
        and elapsed < 7200
    flat_str = ", ".join(f"k{k} {rate:.2f}/{cos:.2f}/{mse:.1f}"
                         for k, (rate, cos, mse) in flat_stats.items())
    _verdict(report, 6, "ood stitching", ok,
             f"hd {hd_succ:.2f}/{hd_cos:.2f}/{hd_mse:.1f} vs "
             f"success/cosine/mse {flat_str}; {elapsed:.0f}s")


# ----------------------------------------------------------- 7: K ablation


def test_criterion_07_k_ablation(report, medium8_data):
    t0 = time.perf_counter()
    spec = builtin_maze("medium8")
    sched = build_schedule(M_DESK, "cosine")
    stats = medium8_data.norm_stats()
    span = 64
    episodes = 30

    def planner_for(k):
        if k == 1:
            w = WindowSpec(Layout.FLAT, 1, span + 1)
            net = NetConfig(channels_in=CH, hidden_channels=64, depth=4,
                            kernel_size=5, embed_dim=32)
            params, _ = _fit(medium8_data, w, net, sched, 2000, 0)
            return FlatPlanner(model=LevelModel(params=params, window=w,
                                                sched=sched), stats=stats)
        w_high = WindowSpec(Layout.SD_WITH_ACTIONS, k, span // k + 1)
        w_low = WindowSpec(Layout.SEGMENT, 1, k + 1)
        net = NetConfig(channels_in=CH, hidden_channels=64, depth=4,
                        kernel_size=5, embed_dim=32)
        p_high, _ = _fit(medium8_data, w_high, net, sched, 2000, 0)
        p_low, _ = _fit(medium8_data, w_low, net, sched, 2000, 0)
        return HierarchicalPlanner(
            high=LevelModel(params=p_high, window=w_high, sched=sched),
            low=LevelModel(params=p_low, window=w_low, sched=sched),
            stats=stats)

    rates = {}
    for k in (1, 4, 8, 16):
        planner = planner_for(k)
        succ = 0
        for i in range(episodes):
            ec = EpisodeConfig(seed=derive_seed(11, EVAL, k, i),
                               max_steps=300, mode="track")
            rec = run_episode(spec, planner, (1, 1), (6, 6), ec)
            succ += rec.success
        rates[k] = succ / episodes

    best_k = max((4, 8, 16), key=lambda k: rates[k])
    margin = rates[best_k] - rates[1]
    largest_dominates = all(rates[16] > rates[k] for k in (1, 4, 8))
    elapsed = time.perf_counter() - t0
    ok = margin >= 0.10 and not largest_dominates and elapsed < 7200
    rate_str = ", ".join(f"K={k} {rates[k]:.2f}" for k in (1, 4, 8, 16))
    _verdict(report, 7, "segment-length ablation", ok,
             f"{rate_str}; best margin {margin:+.2f}; {elapsed:.0f}s")


# --------------------------------------------------- 8: generalization gap


def test_criterion_08_generalization_gap(report, oodgrid_data):
    t0 = time.perf_counter()
    sched = build_schedule(M_DESK, "cosine")
    windows = {
        "sparse": (WindowSpec(Layout.SD_WITH_ACTIONS, 16, 11), 5),
        "flat": (WindowSpec(Layout.FLAT, 1, 161), 9),
    }
    gaps = {"sparse": [], "flat": []}
    for seed in (0, 1, 2):
        for name, (window, kernel) in windows.items():
            net = NetConfig(channels_in=CH, hidden_channels=64, depth=4,
                            kernel_size=kernel, embed_dim=32)
            cfg = TrainConfig(steps=800, batch_size=32, lr=2e-3, seed=seed,
                              val_fraction=0.1, log_interval=400)
            params, _ = train_denoiser(oodgrid_data, window, net, sched, cfg)
            rep = generalization_gap(params, oodgrid_data, window, sched,
                                     cfg, batches=8)
            gaps[name].append(rep.gap)
    mean_sparse = float(np.mean(gaps["sparse"]))
    mean_flat = float(np.mean(gaps["flat"]))
    elapsed = time.perf_counter() - t0
    ok = mean_sparse <= mean_flat and elapsed < 3600
    _verdict(report, 8, "generalization gap", ok,
             f"sparse {mean_sparse:.5f} vs flat {mean_flat:.5f} "
             f"(3 seeds); {elapsed:.0f}s")


# ------------------------------------------------------- 9: planning latency


def test_criterion_09_planning_latency(report):
    t0 = time.perf_counter()
    sched = build_schedule(100, "cosine")
    stats = _wide_stats()
    start = np.array([1.0, 1.0, 0.0, 0.0])
    goal = np.array([9.0, 9.0, 0.0, 0.0])

    flat_net = NetConfig(channels_in=CH, hidden_channels=64, depth=4,
                         kernel_size=5, embed_dim=32)
    w_flat = WindowSpec(Layout.FLAT, 1, 257)
    flat = FlatPlanner(model=LevelModel(
        params=init_denoiser(flat_net, seed=0), window=w_flat, sched=sched),
        stats=stats)

    hd_net = NetConfig(channels_in=CH, hidden_channels=32, depth=2,
                       kernel_size=9, embed_dim=32)
    w_high = WindowSpec(Layout.SD_WITH_ACTIONS, 16, 17)
    w_low = WindowSpec(Layout.SEGMENT, 1, 17)
    hd = HierarchicalPlanner(
        high=LevelModel(params=init_denoiser(hd_net, seed=1), window=w_high,
                        sched=sched),
        low=LevelModel(params=init_denoiser(hd_net, seed=2), window=w_low,
                       sched=sched),
        stats=stats)

    bench_flat = time_callable(lambda: flat.plan(start, goal, 3),
                               repeats=20, warmup=2)
    bench_hd = time_callable(lambda: hd.plan(start, goal, 3),
                             repeats=20, warmup=2)
    ratio = bench_hd.median_seconds / bench_flat.median_seconds
    elapsed = time.perf_counter() - t0
    ok = ratio <= 0.5 and elapsed < 900
    _verdict(report, 9, "planning latency", ok,
             f"hd {bench_hd.median_seconds * 1000:.0f}ms vs flat "
             f"{bench_flat.median_seconds * 1000:.0f}ms, ratio "
             f"{ratio:.2f} at horizon 256; {elapsed:.0f}s")


# ------------------------------------------------------ 10: format roundtrip


def test_criterion_10_format_roundtrips(report, umaze_data, tmp_path):
    t0 = time.perf_counter()

    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    save_dataset(a, umaze_data)
    save_dataset(b, load_dataset(a))
    ds_ok = a.read_bytes() == b.read_bytes()
    norm_ok = (tmp_path / "a.bin.norm").read_bytes() == \
        (tmp_path / "b.bin.norm").read_bytes()

    net = NetConfig(channels_in=CH, hidden_channels=8, depth=1,
                    kernel_size=3, embed_dim=4)
    ckpt_ok = True
    for params in (init_denoiser(net, seed=9), init_guidance(net, seed=9)):
        c, d = tmp_path / "c.ckpt", tmp_path / "d.ckpt"
        save_checkpoint(c, params)
        save_checkpoint(d, load_checkpoint(c))
        ckpt_ok = ckpt_ok and c.read_bytes() == d.read_bytes()

    stats = umaze_data.norm_stats()
    worst = 0.0
    for traj in umaze_data.trajectories[:16]:
        pm = make_flat(traj)
        back = denormalize(normalize(pm, stats), stats)
        worst = max(worst, float(np.abs(back.data - pm.data).max()))

    elapsed = time.perf_counter() - t0
    ok = ds_ok and norm_ok and ckpt_ok and worst <= 1e-12 and elapsed < 60
    _verdict(report, 10, "format round-trips", ok,
             f"dataset identical {ds_ok}, sidecar identical {norm_ok}, "
             f"checkpoint identical {ckpt_ok}, norm round-trip "
             f"{worst:.1e}; {elapsed:.0f}s")
