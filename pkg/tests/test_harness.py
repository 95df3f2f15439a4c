"""Tests for the experiment harness: datasets, training loop, evaluation."""

import json

import numpy as np
import pytest

from priorseg import harness
from priorseg.agent import ActorNetwork, AgentError, ReplayEntry
from priorseg.config import parse_config
from priorseg.harness import HarnessError
from priorseg.imaging.formats import read_labels, write_labels
from priorseg.pretrain import EmbeddingConfig, pretrain_features
from priorseg.rewards import circles_suite_rewards, dice_suite_rewards

SMOKE = """
[dataset]
count = 4
size = 32
min_objects = 2
max_objects = 2
radius_min = 4.0
radius_max = 5.0

[features]
mode = handcrafted

[rewards]
suite = supervised-dice

[agent]
width = 8
conv_layers = 2
subgraph_sizes = 4,8
buffer_capacity = 64

[training]
steps = 6
eval_every = 3
seed = 11
"""


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = parse_config(SMOKE)
    manifest = harness.train(cfg, out)
    return cfg, out, manifest


class TestDataset:
    def test_scene_generation_deterministic(self):
        spec = parse_config(SMOKE).dataset
        a_img, a_gt = harness.generate_scene(spec, 3, 1)
        b_img, b_gt = harness.generate_scene(spec, 3, 1)
        c_img, _ = harness.generate_scene(spec, 3, 2)
        np.testing.assert_array_equal(a_img, b_img)
        np.testing.assert_array_equal(a_gt, b_gt)
        assert not np.array_equal(a_img, c_img)

    def test_write_then_load_round_trip(self, tmp_path):
        spec = parse_config(SMOKE).dataset
        originals = harness.build_dataset(spec, 7)
        harness.write_dataset(spec, 7, tmp_path / "d")
        spec.data_dir = str(tmp_path / "d")
        loaded = harness.build_dataset(spec, 7)
        assert len(loaded) == len(originals)
        for (img_a, gt_a), (img_b, gt_b) in zip(originals, loaded):
            # images pass through 8-bit quantization
            np.testing.assert_allclose(img_a, img_b, atol=0.5 / 255.0 + 1e-12)
            np.testing.assert_array_equal(gt_a, gt_b)

    def test_write_dataset_refuses_nonempty_dir(self, tmp_path):
        spec = parse_config(SMOKE).dataset
        (tmp_path / "blocker.txt").write_text("x")
        with pytest.raises(HarnessError, match="force"):
            harness.write_dataset(spec, 0, tmp_path)

    def test_force_rewrite_is_byte_identical(self, tmp_path):
        spec = parse_config(SMOKE).dataset
        harness.write_dataset(spec, 0, tmp_path)
        before = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
        harness.write_dataset(spec, 0, tmp_path, force=True)
        after = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
        assert before == after

    def test_zero_count_rejected(self, tmp_path):
        spec = parse_config(SMOKE).dataset
        spec.count = 0
        with pytest.raises(HarnessError, match=">= 1"):
            harness.write_dataset(spec, 0, tmp_path / "x")

    def test_heldout_split_sizes(self):
        assert harness.split_heldout(list(range(10))) == \
            (list(range(8)), [8, 9])
        assert harness.split_heldout(list(range(8))) == \
            (list(range(7)), [7])
        assert harness.split_heldout([0, 1]) == ([0], [1])
        assert harness.split_heldout([0]) == ([0], [])


class TestContexts:
    @pytest.fixture(scope="class")
    def cfg_and_scene(self):
        cfg = parse_config(SMOKE)
        image, gt = harness.generate_scene(cfg.dataset, cfg.training.seed, 0)
        return cfg, image, gt

    def test_context_fields_consistent(self, cfg_and_scene):
        cfg, image, gt = cfg_and_scene
        ctx = harness.prepare_context(cfg, 0, image, gt)
        n_edges = ctx.rag.topo.num_edges
        assert ctx.gt_edges.shape == (n_edges,)
        assert set(ctx.gt_edges) <= {0.0, 1.0}
        assert set(ctx.subgraphs) <= set(cfg.agent.subgraph_sizes)
        assert ctx.agent_image.pixel_stack is None  # handcrafted mode
        assert ctx.rag.node_features.shape[1] == harness.HANDCRAFTED_DIM

    def test_oversized_subgraph_sizes_skipped(self, cfg_and_scene):
        cfg, image, gt = cfg_and_scene
        cfg = parse_config(SMOKE)
        cfg.agent.subgraph_sizes = (4, 10 ** 6)
        ctx = harness.prepare_context(cfg, 0, image, gt)
        assert list(ctx.subgraphs) == [4]

    def test_unhostable_graph_rejected(self, cfg_and_scene):
        cfg, image, gt = cfg_and_scene
        cfg = parse_config(SMOKE)
        cfg.agent.subgraph_sizes = (10 ** 6,)
        with pytest.raises(HarnessError, match="fewer than every"):
            harness.prepare_context(cfg, 0, image, gt)

    def test_pretrained_mode_appends_embedding_columns(self, cfg_and_scene):
        cfg, image, gt = cfg_and_scene
        cfg = parse_config(SMOKE)
        cfg.features.mode = "pretrained"
        cfg.features.encoder_dim = 3
        sp = harness.compute_superpixels(image, cfg.dataset)
        result = pretrain_features([(image, sp)], EmbeddingConfig(dim=3),
                                   epochs=1, hidden=4)
        ctx = harness.prepare_context(cfg, 0, image, gt, result.encoder)
        assert ctx.rag.node_features.shape[1] == harness.HANDCRAFTED_DIM + 3
        assert harness.static_feature_dim(cfg) == harness.HANDCRAFTED_DIM + 3

    def test_joint_mode_carries_pixel_stack(self, cfg_and_scene):
        cfg, image, gt = cfg_and_scene
        cfg = parse_config(SMOKE)
        cfg.features.mode = "joint"
        ctx = harness.prepare_context(cfg, 0, image, gt)
        assert ctx.agent_image.pixel_stack.shape == image.shape + (2,)


class TestRewardPlumbing:
    @pytest.fixture(scope="class")
    def contexts(self):
        cfg = parse_config(SMOKE)
        cfg.rewards.suite = "mixed"
        dataset = harness.build_dataset(cfg.dataset, cfg.training.seed)
        return cfg, harness.build_contexts(cfg, dataset)

    def test_mixed_suite_is_dice_on_first_image_only(self, contexts):
        cfg, ctxs = contexts
        rcfg = harness.build_reward_config(cfg, 32)
        from priorseg.agent import act, explore_episode  # noqa: F401
        from priorseg.partitioning import actions_to_costs, solve_multicut
        for ctx, expect_dice in ((ctxs[0], True), (ctxs[1], False)):
            rng = np.random.default_rng(0)
            actions = rng.uniform(0.1, 0.9, ctx.rag.topo.num_edges)
            part = solve_multicut(ctx.rag.topo, actions_to_costs(actions))
            sgs = ctx.subgraphs[4]
            got = harness.make_reward_fn(cfg, ctx, rcfg)(actions, part, sgs)
            if expect_dice:
                want = dice_suite_rewards(actions, ctx.gt_edges, sgs)
            else:
                want = circles_suite_rewards(ctx.superpixels, part,
                                             ctx.rag.topo, sgs, rcfg)
            np.testing.assert_array_equal(got.values, want.values)

    def test_supervised_without_ground_truth_rejected(self, contexts):
        cfg, ctxs = contexts
        rcfg = harness.build_reward_config(cfg, 32)
        import dataclasses
        blind = dataclasses.replace(ctxs[0], gt_edges=None)
        with pytest.raises(HarnessError, match="ground truth"):
            harness.make_reward_fn(cfg, blind, rcfg)

    def test_ring_geometry_derived_from_size(self):
        cfg = parse_config(SMOKE)
        cfg.rewards.suite = "ring"
        rcfg = harness.build_reward_config(cfg, 100)
        assert rcfg.ring_radius == pytest.approx(30.0)
        assert rcfg.center == (49.5, 49.5)
        assert rcfg.max_center_dist > rcfg.ring_radius
        assert 0 < rcfg.box_short <= rcfg.box_long

    def test_ring_geometry_overrides_respected(self):
        cfg = parse_config(SMOKE)
        cfg.rewards.suite = "ring"
        cfg.rewards.ring_radius = 12.0
        cfg.rewards.box_long = 9.0
        rcfg = harness.build_reward_config(cfg, 100)
        assert rcfg.ring_radius == 12.0
        assert rcfg.box_long == 9.0


class TestCheckpoints:
    def test_round_trip_restores_exact_state(self, tmp_path):
        cfg = parse_config(SMOKE)
        actor, critic = harness.build_networks(cfg, 4)
        temp0 = harness.TemperatureState(log_alpha=-1.5)
        path = tmp_path / "ck.npz"
        harness.save_checkpoint(path, actor, critic, temp0, cfg, step=17)
        cfg2, step, arrays = harness.load_checkpoint(path)
        assert step == 17
        assert cfg2.to_dict() == cfg.to_dict()
        actor2, critic2, temp = harness.restore_networks(cfg2, arrays, 4)
        for a, b in ((actor, actor2), (critic, critic2)):
            sa, sb = a.pset.state_arrays(), b.pset.state_arrays()
            assert {k: v.tobytes() for k, v in sa.items()} == \
                   {k: v.tobytes() for k, v in sb.items()}
        assert temp.log_alpha == temp0.log_alpha

    def test_incompatible_width_rejected(self, tmp_path):
        cfg = parse_config(SMOKE)
        actor, critic = harness.build_networks(cfg, 4)
        path = tmp_path / "ck.npz"
        harness.save_checkpoint(path, actor, critic,
                                harness.TemperatureState(), cfg, 1)
        cfg2, _, arrays = harness.load_checkpoint(path)
        cfg2.agent.width = 16
        with pytest.raises(HarnessError, match="does not fit"):
            harness.restore_networks(cfg2, arrays, 4)

    def test_non_checkpoint_file_rejected(self, tmp_path):
        path = tmp_path / "junk.npz"
        np.savez(path, x=np.zeros(3))
        with pytest.raises(HarnessError, match="not a training checkpoint"):
            harness.load_checkpoint(path)
        with pytest.raises(HarnessError, match="not found"):
            harness.load_checkpoint(tmp_path / "missing.npz")

    def test_encoder_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        image = rng.uniform(size=(12, 12))
        sp = np.repeat(np.repeat(np.arange(4).reshape(2, 2), 6, 0), 6, 1)
        result = pretrain_features([(image, sp)], EmbeddingConfig(dim=3),
                                   epochs=1, hidden=4)
        path = tmp_path / "enc.npz"
        harness.save_encoder(path, result, hidden=4, num_layers=3)
        loaded = harness.load_encoder(path)
        from priorseg.pretrain import encode_node_features
        np.testing.assert_array_equal(
            encode_node_features(result.encoder, image, sp),
            encode_node_features(loaded, image, sp))

    def test_non_encoder_file_rejected(self, tmp_path):
        path = tmp_path / "junk.npz"
        np.savez(path, x=np.zeros(3))
        with pytest.raises(HarnessError, match="not an encoder"):
            harness.load_encoder(path)


class TestTraining:
    def test_artifacts_exist(self, smoke_run):
        cfg, out, manifest = smoke_run
        train_lines = (out / "train_log.csv").read_text().splitlines()
        assert train_lines[0] == "step,critic_loss,actor_loss,alpha," \
                                 "batch_reward"
        assert len(train_lines) == cfg.training.steps + 1
        eval_lines = (out / "eval_log.csv").read_text().splitlines()
        assert eval_lines[0] == "step,heldout_mean_reward,checkpoint"
        assert len(eval_lines) == 1 + 2  # steps 3 and 6
        for point in manifest.evaluations:
            assert (out / point.checkpoint).is_file()
            assert np.isfinite(point.heldout_reward)

    def test_manifest_best_is_max_heldout_reward(self, smoke_run):
        _, out, manifest = smoke_run
        best = manifest.best
        assert best.heldout_reward == max(
            e.heldout_reward for e in manifest.evaluations)
        assert (out / "best.npz").read_bytes() == \
               (out / best.checkpoint).read_bytes()
        on_disk = json.loads((out / "manifest.json").read_text())
        assert on_disk["best"]["checkpoint"] == best.checkpoint
        assert on_disk["version"]

    def test_repeated_run_is_bit_identical(self, smoke_run, tmp_path):
        cfg_used, out, _ = smoke_run
        harness.train(parse_config(SMOKE), tmp_path)
        for path in sorted(out.iterdir()):
            again = tmp_path / path.name
            assert again.read_bytes() == path.read_bytes(), path.name

    def test_ground_truth_metrics_never_run_during_training(
            self, tmp_path, monkeypatch):
        def forbidden(*a, **k):
            raise AssertionError("GT metric invoked during training")
        monkeypatch.setattr(harness, "symmetric_best_dice", forbidden)
        monkeypatch.setattr(harness, "variation_of_information", forbidden)
        monkeypatch.setattr(harness, "instance_recovery", forbidden)
        monkeypatch.setattr(harness, "superpixel_gt_majority", forbidden)
        cfg = parse_config(SMOKE)
        cfg.training.steps = 2
        cfg.training.eval_every = 2
        harness.train(cfg, tmp_path)  # must not touch any of the above

    def test_nonfinite_loss_aborts_with_diagnostics(self, tmp_path,
                                                    monkeypatch):
        def poisoned(*args, **kwargs):
            err = AgentError("non-finite critic loss nan on images [0]")
            err.batch = [ReplayEntry(0, np.array([0.25, 0.75]),
                                     {4: np.array([0.5])})]
            raise err
        monkeypatch.setattr(harness, "train_step", poisoned)
        cfg = parse_config(SMOKE)
        cfg.training.steps = 3
        with pytest.raises(HarnessError, match="diagnostic"):
            harness.train(cfg, tmp_path)
        payload = json.loads((tmp_path / "diagnostic.json").read_text())
        assert payload["step"] == 1
        assert payload["batch"][0]["image_id"] == 0
        assert payload["batch"][0]["actions"] == [0.25, 0.75]
        assert payload["batch"][0]["rewards"]["4"] == [0.5]
        assert (tmp_path / "train_log.csv").is_file()

    def test_single_image_dataset_rejected(self, tmp_path):
        cfg = parse_config(SMOKE)
        cfg.dataset.count = 1
        with pytest.raises(HarnessError, match="held out"):
            harness.train(cfg, tmp_path)

    def test_inline_pretraining_records_encoder_path(self, tmp_path):
        cfg = parse_config(SMOKE)
        cfg.features.mode = "pretrained"
        cfg.features.encoder_dim = 3
        cfg.features.encoder_hidden = 4
        cfg.features.pretrain_epochs = 1
        cfg.training.steps = 2
        cfg.training.eval_every = 2
        harness.train(cfg, tmp_path)
        assert (tmp_path / "encoder.npz").is_file()
        cfg2, _, _ = harness.load_checkpoint(tmp_path / "best.npz")
        assert cfg2.features.encoder_path == str(tmp_path / "encoder.npz")
        harness.load_encoder(cfg2.features.encoder_path)


class TestEvaluation:
    @pytest.fixture(scope="class")
    def eval_setup(self, smoke_run):
        cfg, out, _ = smoke_run
        dataset = harness.build_dataset(cfg.dataset, cfg.training.seed)
        contexts = harness.build_contexts(cfg, dataset)
        _, _, arrays = harness.load_checkpoint(out / "best.npz")
        actor, _, _ = harness.restore_networks(
            cfg, arrays, contexts[0].rag.node_features.shape[1])
        return cfg, contexts, actor

    def test_oracle_reaches_projection_ceiling(self, eval_setup):
        cfg, contexts, _ = eval_setup
        rows = harness.evaluate(cfg, contexts, None, oracle=True)
        for row in rows[:-2]:
            assert row["sbd"] == pytest.approx(row["sbd_ceiling"],
                                               abs=1e-12)
            assert row["recovery"] == 1.0

    def test_rows_and_aggregates(self, eval_setup, tmp_path):
        cfg, contexts, actor = eval_setup
        path = tmp_path / "m.csv"
        rows = harness.evaluate(cfg, contexts, actor, metrics_path=path)
        assert len(rows) == len(contexts) + 2
        mean_row = rows[-2]
        assert mean_row["index"] == "mean"
        for key in ("sbd", "vi_merge", "vi_split", "recovery"):
            vals = [r[key] for r in rows[:-2]]
            assert mean_row[key] == pytest.approx(np.mean(vals))
        header = path.read_text().splitlines()[0]
        assert header == "index,sbd,vi_merge,vi_split,recovery,sbd_ceiling"

    def test_evaluation_is_deterministic(self, eval_setup, tmp_path):
        cfg, contexts, actor = eval_setup
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        harness.evaluate(cfg, contexts, actor, metrics_path=a)
        harness.evaluate(cfg, contexts, actor, metrics_path=b)
        assert a.read_bytes() == b.read_bytes()

    def test_empty_contexts_rejected(self, eval_setup):
        cfg, _, actor = eval_setup
        with pytest.raises(HarnessError, match="at least one"):
            harness.evaluate(cfg, [], actor)

    def test_policy_required_unless_oracle(self, eval_setup):
        cfg, contexts, _ = eval_setup
        with pytest.raises(HarnessError, match="policy"):
            harness.evaluate(cfg, contexts, None, oracle=False)


class TestSegment:
    def test_blank_image_single_superpixel(self):
        cfg = parse_config(SMOKE)
        labelmap, rows = harness.segment_image(cfg, None, np.zeros((16, 16)))
        assert labelmap.shape == (16, 16)
        assert labelmap.max() == 0
        assert rows == []

    def test_all_merge_actions_yield_single_cluster(self):
        cfg = parse_config(SMOKE)
        image, _ = harness.generate_scene(cfg.dataset, 0, 0)
        actor = ActorNetwork(np.random.default_rng(0), 4, width=4,
                             conv_layers=1)
        for name in actor.pset.names():
            if name.startswith("edge."):
                actor.pset.params[name].tensor.data[...] = 0.0
        actor.pset.params["edge.b1"].tensor.data[...] = [3.0, -8.0]
        labelmap, rows = harness.segment_image(cfg, actor, image)
        assert labelmap.max() == 0
        assert rows and all(r[3] == "merge" for r in rows)
        assert all(r[2] > 0.5 for r in rows)

    def test_labelmap_round_trips_lbl1(self, tmp_path):
        cfg = parse_config(SMOKE)
        image, _ = harness.generate_scene(cfg.dataset, 0, 0)
        actor = ActorNetwork(np.random.default_rng(3), 4, width=4,
                             conv_layers=1)
        labelmap, _ = harness.segment_image(cfg, actor, image)
        path = tmp_path / "pred.lbl"
        write_labels(path, labelmap)
        np.testing.assert_array_equal(read_labels(path), labelmap)

    def test_shape_mismatch_rejected(self):
        cfg = parse_config(SMOKE)
        with pytest.raises(HarnessError, match="shape"):
            harness.segment_image(cfg, None, np.zeros((8, 8)),
                                  superpixels=np.zeros((4, 4), dtype=int))


class TestFanOut:
    def test_thread_count_env_override(self, monkeypatch):
        monkeypatch.setenv("PRIORSEG_THREADS", "3")
        assert harness.thread_count() == 3
        monkeypatch.setenv("PRIORSEG_THREADS", "0")
        assert harness.thread_count() == 1
        monkeypatch.setenv("PRIORSEG_THREADS", "many")
        with pytest.raises(HarnessError, match="PRIORSEG_THREADS"):
            harness.thread_count()

    def test_fan_out_preserves_order(self, monkeypatch):
        monkeypatch.setenv("PRIORSEG_THREADS", "4")
        got = harness._fan_out(lambda i: i * i, list(range(40)))
        assert got == [i * i for i in range(40)]


class TestWriteCsv:
    def test_formatting(self, tmp_path):
        path = tmp_path / "t.csv"
        harness.write_csv(path, ("a", "b", "c"), [(1, 0.5, "x")])
        assert path.read_text() == "a,b,c\n1,0.5,x\n"

    def test_row_width_mismatch_rejected(self, tmp_path):
        with pytest.raises(HarnessError, match="width"):
            harness.write_csv(tmp_path / "t.csv", ("a", "b"), [(1,)])
