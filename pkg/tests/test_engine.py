"""Training engine: model growth, task loop, evaluation, checkpoints."""

import json
import math

import numpy as np
import pytest

from mtcl.bridge import build_vocabulary
from mtcl.engine import (
    AVG_DATASET,
    PrevModelTeacher,
    StudentModel,
    TrainSettings,
    encode_inputs,
    encode_question,
    evaluate,
    load_checkpoint,
    read_metrics_csv,
    run_continual,
    save_checkpoint,
    train_task,
    write_metrics_csv,
)
from mtcl.errors import ConfigError, DataError, NumericError
from mtcl.taskstream import (
    GeneratorConfig,
    ImbalanceLedger,
    LabelClass,
    Sample,
    TaskDataset,
    generate_synthetic_stream,
    load_manifest,
    load_task,
)
from mtcl.teachers import NoisyOracleTeacher
from mtcl.weights import WeightConfig, WeightTrace

MINI_CFG = GeneratorConfig(
    tasks=3,
    classes_per_task=3,
    feature_length=4,
    samples_per_task=60,
    imbalance=2.0,
    overlap=0.5,
    shift=2.0,
)

FAST = dict(learning_rate=0.05, epochs=3, batch_size=16, hidden1=16, hidden2=16)


@pytest.fixture(scope="module")
def mini_stream(tmp_path_factory):
    out = tmp_path_factory.mktemp("mini")
    return load_manifest(generate_synthetic_stream(MINI_CFG, seed=5, out_dir=out))


def standard_weights():
    return WeightConfig(alpha=0.2, theta_ds=0.4, theta_di=0.4)


class TestEncodeQuestion:
    VOCAB = build_vocabulary(["cut", "idle"])

    def test_unit_norm_and_determinism(self):
        v = encode_question("cut it", self.VOCAB)
        assert np.linalg.norm(v) == pytest.approx(1.0)
        np.testing.assert_array_equal(v, encode_question("cut it", self.VOCAB))

    def test_order_insensitive_bag(self):
        np.testing.assert_array_equal(
            encode_question("tiled", self.VOCAB), encode_question("delit", self.VOCAB)
        )

    def test_empty_question_is_zero_vector(self):
        assert not encode_question("", self.VOCAB).any()

    def test_unknown_characters_share_one_slot(self):
        v = encode_question("@@", self.VOCAB)
        assert v[len(self.VOCAB)] == pytest.approx(1.0)
        assert np.count_nonzero(v) == 1

    def test_space_uses_separator_token_slot(self):
        v = encode_question(" ", self.VOCAB)
        sp_id = self.VOCAB.index["<sp>"]
        assert v[sp_id] == pytest.approx(1.0)

    def test_encode_inputs_shape_and_validation(self):
        samples = [
            Sample(id="a", features=np.zeros(3), question="q", answer=0, answer_name="cut")
        ]
        design = encode_inputs(samples, self.VOCAB, 3)
        assert design.shape == (1, 3 + len(self.VOCAB) + 1)
        with pytest.raises(DataError):
            encode_inputs(samples, self.VOCAB, 7)


def toy_label(i, name="c"):
    return LabelClass(id=i, name=f"{name}{i}", tokens=())


class TestStudentModel:
    def test_trunk_depends_only_on_seed(self):
        a = StudentModel(3, 4, 6, 8, 8)
        b = StudentModel(3, 4, 6, 8, 8)
        np.testing.assert_array_equal(a.w1, b.w1)
        np.testing.assert_array_equal(a.w2, b.w2)
        c = StudentModel(4, 4, 6, 8, 8)
        assert not np.array_equal(a.w1, c.w1)

    def test_growing_in_stages_matches_growing_at_once(self):
        classes = [toy_label(i) for i in range(5)]
        staged = StudentModel(3, 4, 6, 8, 8)
        staged.grow_head(classes[:2])
        staged.grow_head(classes[2:])
        at_once = StudentModel(3, 4, 6, 8, 8).grow_head(classes)
        np.testing.assert_array_equal(staged.w3, at_once.w3)
        np.testing.assert_array_equal(staged.b3, at_once.b3)
        assert staged.class_ids == at_once.class_ids

    def test_growth_leaves_existing_columns_alone(self):
        model = StudentModel(3, 4, 6, 8, 8).grow_head([toy_label(0), toy_label(1)])
        before = model.w3.copy()
        model.grow_head([toy_label(2)])
        np.testing.assert_array_equal(model.w3[:, :2], before)

    def test_duplicate_class_rejected(self):
        model = StudentModel(3, 4, 6, 8, 8).grow_head([toy_label(0)])
        with pytest.raises(DataError):
            model.grow_head([toy_label(0)])

    def test_forward_shape_and_input_validation(self):
        model = StudentModel(3, 4, 6, 8, 8).grow_head([toy_label(0), toy_label(1)])
        x = np.random.default_rng(0).normal(size=(5, 10))
        assert model.forward(x).shape == (5, 2)
        with pytest.raises(DataError):
            model.forward(np.zeros((5, 3)))

    def test_non_finite_logits_raise(self):
        model = StudentModel(3, 4, 6, 8, 8).grow_head([toy_label(0)])
        model.w3[0, 0] = np.nan
        with pytest.raises(NumericError):
            model.forward(np.zeros((1, 10)))

    def test_flat_roundtrip(self):
        model = StudentModel(3, 4, 6, 8, 8).grow_head([toy_label(0), toy_label(1)])
        flat = model.get_flat()
        twin = StudentModel(9, 4, 6, 8, 8).grow_head([toy_label(0), toy_label(1)])
        twin.set_flat(flat)
        x = np.random.default_rng(1).normal(size=(4, 10))
        np.testing.assert_array_equal(model.forward(x), twin.forward(x))
        with pytest.raises(DataError):
            twin.set_flat(flat[:-1])

    def test_clone_is_independent(self):
        model = StudentModel(3, 4, 6, 8, 8).grow_head([toy_label(0)])
        twin = model.clone()
        before = model.get_flat().copy()
        np.testing.assert_array_equal(twin.get_flat(), before)
        model.w1 += 1.0
        model.w3 += 1.0
        model.class_ids.append(99)
        np.testing.assert_array_equal(twin.get_flat(), before)
        assert twin.class_ids == [0]

    def test_backward_matches_central_differences(self):
        from mtcl.losses import hard_label_loss

        model = StudentModel(7, 3, 4, 5, 4).grow_head([toy_label(0), toy_label(1), toy_label(2)])
        rng = np.random.default_rng(2)
        x = rng.normal(size=(4, 7))
        y = np.array([0, 2, 1, 0])

        def loss_at(flat):
            model.set_flat(flat)
            logits = model.forward(x)
            return sum(hard_label_loss(logits[i], int(y[i]))[0] for i in range(4)) / 4.0

        flat0 = model.get_flat().copy()
        model.set_flat(flat0)
        logits, cache = model.forward(x, want_cache=True)
        dz = np.zeros_like(logits)
        for i in range(4):
            dz[i] = hard_label_loss(logits[i], int(y[i]))[1] / 4.0
        grads = model.backward(cache, dz)
        analytic = np.concatenate(
            [grads[name].ravel() for name, _ in model.param_items()]
        )
        step = 1e-5
        for k in rng.choice(flat0.size, size=25, replace=False):
            probe = flat0.copy()
            probe[k] += step
            up = loss_at(probe)
            probe[k] -= 2 * step
            down = loss_at(probe)
            numeric = (up - down) / (2 * step)
            assert analytic[k] == pytest.approx(numeric, abs=1e-7)
        model.set_flat(flat0)


class TestPrevModelTeacher:
    def make_model(self):
        names = ["cut", "idle", "grasp"]
        vocab = build_vocabulary(names)
        classes = [
            LabelClass(id=i, name=n, tokens=tuple(vocab.encode(n)))
            for i, n in enumerate(names)
        ]
        model = StudentModel(3, 2, len(vocab) + 1, 8, 8).grow_head(classes)
        return model, vocab

    def sample(self):
        return Sample(
            id="s", features=np.array([0.3, -0.1]), question="what", answer=0,
            answer_name="cut",
        )

    def test_serves_logits_in_mask_order(self):
        model, vocab = self.make_model()
        teacher = PrevModelTeacher(model, vocab)
        s = self.sample()
        x = np.concatenate([s.features, encode_question(s.question, vocab)])
        full = model.forward(x[None])[0]
        out = teacher.query(s, ("grasp", "cut"))
        np.testing.assert_array_equal(out, full[[2, 0]])

    def test_unknown_class_rejected(self):
        model, vocab = self.make_model()
        teacher = PrevModelTeacher(model, vocab)
        with pytest.raises(DataError):
            teacher.query(self.sample(), ("cut", "phantom"))

    def test_snapshot_does_not_track_live_model(self):
        model, vocab = self.make_model()
        teacher = PrevModelTeacher(model.clone(), vocab)
        before = teacher.query(self.sample(), ("cut", "idle", "grasp"))
        model.w3 += 0.5
        after = teacher.query(self.sample(), ("cut", "idle", "grasp"))
        np.testing.assert_array_equal(before, after)


class TestTrainSettings:
    def test_defaults(self):
        s = TrainSettings()
        assert (s.learning_rate, s.epochs, s.batch_size) == (0.05, 30, 32)

    def test_violations_collected(self):
        with pytest.raises(ConfigError) as info:
            TrainSettings(learning_rate=0.0, epochs=0, mode="magic")
        message = str(info.value)
        for fragment in ("learning_rate", "epochs", "mode"):
            assert fragment in message


def reference_supervised_loop(manifest, task, settings):
    """Plain single-loss SGD written independently of the trainer."""
    vocab = manifest.vocab
    model = StudentModel(
        settings.seed, manifest.feature_length, len(vocab) + 1,
        settings.hidden1, settings.hidden2,
    )
    model.grow_head(task.classes)
    position = {name: i for i, name in enumerate(model.class_names)}
    inputs = encode_inputs(task.samples, vocab, manifest.feature_length)
    labels = np.array([position[s.answer_name] for s in task.samples])
    rng = np.random.default_rng([settings.seed, 2, 1])
    n = len(task.samples)
    for _ in range(settings.epochs):
        order = rng.permutation(n)
        for start in range(0, n, settings.batch_size):
            idx = order[start : start + settings.batch_size]
            logits, cache = model.forward(inputs[idx], want_cache=True)
            dz = np.zeros_like(logits)
            for i, row in enumerate(idx):
                z = logits[i] - logits[i].max()
                p = np.exp(z)
                p = p / p.sum()
                p[labels[row]] -= 1.0
                dz[i] += 1.0 * p / len(idx)
            model.apply_gradients(model.backward(cache, dz), settings.learning_rate)
    return model


class TestTrainTask:
    def test_plain_fine_tuning_matches_reference_loop(self, mini_stream):
        task = load_task(mini_stream, 1)
        settings = TrainSettings(seed=5, mode="ft", **FAST)
        student = StudentModel(
            settings.seed, mini_stream.feature_length, len(mini_stream.vocab) + 1,
            settings.hidden1, settings.hidden2,
        ).grow_head(task.classes)
        ledger = ImbalanceLedger().update(task)
        bystander = NoisyOracleTeacher(seed=1, accuracy=0.9)
        train_task(
            student, None, bystander, task, ledger, settings,
            standard_weights(), mini_stream.vocab, 1, WeightTrace(),
        )
        reference = reference_supervised_loop(mini_stream, task, settings)
        np.testing.assert_array_equal(student.get_flat(), reference.get_flat())
        assert bystander.query_count == 0

    def test_first_task_pins_weights_to_hard_labels_only(self, mini_stream):
        task = load_task(mini_stream, 1)
        settings = TrainSettings(seed=5, mode="ours", **FAST)
        student = StudentModel(
            settings.seed, mini_stream.feature_length, len(mini_stream.vocab) + 1,
            settings.hidden1, settings.hidden2,
        ).grow_head(task.classes)
        trace = WeightTrace()
        train_task(
            student, None, NoisyOracleTeacher(seed=1, accuracy=0.9), task,
            ImbalanceLedger().update(task), settings, standard_weights(),
            mini_stream.vocab, 1, trace,
        )
        assert trace.latest_triple().alpha == 1.0
        assert trace.latest_triple().beta == 0.0
        assert len(trace.rows) == 1

    def continue_to_second_task(self, mini_stream, settings, weight_cfg, trace):
        task1 = load_task(mini_stream, 1)
        task2 = load_task(mini_stream, 2)
        student = StudentModel(
            settings.seed, mini_stream.feature_length, len(mini_stream.vocab) + 1,
            settings.hidden1, settings.hidden2,
        ).grow_head(task1.classes)
        ledger = ImbalanceLedger().update(task1)
        train_task(
            student, None, None, task1, ledger, settings, weight_cfg,
            mini_stream.vocab, 1, WeightTrace(),
        )
        prev = PrevModelTeacher(student.clone(), mini_stream.vocab)
        llm = NoisyOracleTeacher(seed=2, accuracy=0.8)
        llm.set_label_space([c.name for c in mini_stream.labels])
        known = set(student.class_ids)
        student.grow_head([c for c in task2.classes if c.id not in known])
        ledger.update(task2)
        train_task(
            student, prev, llm, task2, ledger, settings, weight_cfg,
            mini_stream.vocab, 2, trace,
        )
        return student, prev, llm

    def test_adaptive_mode_records_measurements(self, mini_stream):
        settings = TrainSettings(seed=5, mode="ours", **FAST)
        trace = WeightTrace()
        _, prev, llm = self.continue_to_second_task(
            mini_stream, settings, standard_weights(), trace
        )
        assert len(trace.rows) == 1
        row = trace.rows[0]
        assert 0.0 <= row["acc_prev"] <= 1.0
        assert 0.0 <= row["acc_llm"] <= 1.0
        assert row["ir"] > 1.0
        assert row["alpha"] == pytest.approx(0.2)
        assert prev.query_count > 0
        assert llm.query_count > 0

    def test_per_epoch_recompute_traces_every_epoch(self, mini_stream):
        settings = TrainSettings(seed=5, mode="ours", **FAST)
        weight_cfg = WeightConfig(
            alpha=0.2, theta_ds=0.4, theta_di=0.4, recompute="per-epoch"
        )
        trace = WeightTrace()
        self.continue_to_second_task(mini_stream, settings, weight_cfg, trace)
        assert len(trace.rows) == settings.epochs
        assert [r["epoch"] for r in trace.rows] == list(range(settings.epochs))

    def test_single_teacher_mode_never_touches_general_teacher(self, mini_stream):
        settings = TrainSettings(seed=5, mode="lwf", **FAST)
        trace = WeightTrace()
        _, prev, llm = self.continue_to_second_task(
            mini_stream, settings, standard_weights(), trace
        )
        assert llm.query_count == 0
        assert prev.query_count > 0
        triple = trace.latest_triple()
        assert triple.beta == pytest.approx(0.8)
        assert triple.chi == 0.0

    def test_adaptive_mode_requires_both_teachers(self, mini_stream):
        task2 = load_task(mini_stream, 2)
        settings = TrainSettings(seed=5, mode="ours", **FAST)
        student = StudentModel(
            settings.seed, mini_stream.feature_length, len(mini_stream.vocab) + 1,
            settings.hidden1, settings.hidden2,
        ).grow_head(mini_stream.classes_up_to(2))
        ledger = ImbalanceLedger().update(task2)
        with pytest.raises(ConfigError):
            train_task(
                student, None, None, task2, ledger, settings, standard_weights(),
                mini_stream.vocab, 2, WeightTrace(),
            )

    def test_missing_head_class_rejected(self, mini_stream):
        task = load_task(mini_stream, 1)
        settings = TrainSettings(seed=5, mode="ft", **FAST)
        student = StudentModel(
            settings.seed, mini_stream.feature_length, len(mini_stream.vocab) + 1,
            settings.hidden1, settings.hidden2,
        )
        with pytest.raises(DataError, match="grow"):
            train_task(
                student, None, None, task, ImbalanceLedger().update(task),
                settings, standard_weights(), mini_stream.vocab, 1, WeightTrace(),
            )

    def test_observer_sees_every_batch(self, mini_stream):
        task = load_task(mini_stream, 1)
        settings = TrainSettings(seed=5, mode="ft", **FAST)
        student = StudentModel(
            settings.seed, mini_stream.feature_length, len(mini_stream.vocab) + 1,
            settings.hidden1, settings.hidden2,
        ).grow_head(task.classes)
        seen = []
        train_task(
            student, None, None, task, ImbalanceLedger().update(task), settings,
            standard_weights(), mini_stream.vocab, 1, WeightTrace(),
            observer=seen.append,
        )
        per_epoch = math.ceil(len(task.samples) / settings.batch_size)
        assert len(seen) == settings.epochs * per_epoch
        first = seen[0]
        assert first["t"] == 1 and first["epoch"] == 0 and first["batch"] == 0
        assert len(first["sample_ids"]) == len(first["labels"])
        assert first["student_logits"].shape[0] == len(first["labels"])
        assert first["prev_logits"] is None
        assert math.isfinite(first["breakdown"].total)


def rigged_constant_model(n_classes, favored, vocab, feature_length=2):
    names = [f"k{i}" for i in range(n_classes)]
    classes = [LabelClass(id=i, name=n, tokens=()) for i, n in enumerate(names)]
    model = StudentModel(0, feature_length, len(vocab) + 1, 4, 4).grow_head(classes)
    model.w3[:] = 0.0
    model.b3[:] = 0.0
    model.b3[favored] = 1.0
    return model, classes


def metrics_oracle(predicted, truth):
    """Accuracy and macro F1 with plain counting loops."""
    n = len(truth)
    acc = sum(1 for p, t in zip(predicted, truth) if p == t) / n
    f1s = []
    for c in sorted(set(truth)):
        tp = sum(1 for p, t in zip(predicted, truth) if p == c and t == c)
        fp = sum(1 for p, t in zip(predicted, truth) if p == c and t != c)
        fn = sum(1 for p, t in zip(predicted, truth) if p != c and t == c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return acc, sum(f1s) / len(f1s)


class TestEvaluate:
    def test_constant_predictor_on_balanced_pair(self):
        vocab = build_vocabulary(["k0", "k1"])
        model, classes = rigged_constant_model(2, favored=0, vocab=vocab)
        samples = [
            Sample(id=f"s{i}", features=np.zeros(2), question="q",
                   answer=i % 2, answer_name=f"k{i % 2}")
            for i in range(4)
        ]
        dataset = TaskDataset(task_index=1, samples=samples, classes=classes)
        row = evaluate(model, dataset, vocab)
        assert row.accuracy == pytest.approx(0.5)
        assert row.macro_f1 == pytest.approx(1.0 / 3.0)

    def test_matches_independent_metric_oracle(self, mini_stream):
        settings = TrainSettings(seed=5, mode="ft", **FAST)
        task = load_task(mini_stream, 1)
        student = StudentModel(
            settings.seed, mini_stream.feature_length, len(mini_stream.vocab) + 1,
            settings.hidden1, settings.hidden2,
        ).grow_head(task.classes)
        train_task(
            student, None, None, task, ImbalanceLedger().update(task), settings,
            standard_weights(), mini_stream.vocab, 1, WeightTrace(),
        )
        test = load_task(mini_stream, 1, split="test")
        row = evaluate(student, test, mini_stream.vocab)
        inputs = encode_inputs(test.samples, mini_stream.vocab, mini_stream.feature_length)
        predicted = [
            student.class_ids[int(k)] for k in student.forward(inputs).argmax(axis=1)
        ]
        truth = [s.answer for s in test.samples]
        acc, f1 = metrics_oracle(predicted, truth)
        assert row.accuracy == pytest.approx(acc, abs=1e-12)
        assert row.macro_f1 == pytest.approx(f1, abs=1e-12)

    def test_f1_averages_only_classes_present(self):
        vocab = build_vocabulary(["k0", "k1", "k2"])
        model, classes = rigged_constant_model(3, favored=1, vocab=vocab)
        samples = [
            Sample(id=f"s{i}", features=np.zeros(2), question="q",
                   answer=1, answer_name="k1")
            for i in range(3)
        ]
        dataset = TaskDataset(task_index=1, samples=samples, classes=classes)
        row = evaluate(model, dataset, vocab)
        assert row.accuracy == 1.0
        assert row.macro_f1 == 1.0

    def test_uncovered_class_rejected(self):
        vocab = build_vocabulary(["k0", "k1"])
        model, classes = rigged_constant_model(1, favored=0, vocab=vocab)
        stranger = LabelClass(id=5, name="k5", tokens=())
        samples = [
            Sample(id="s", features=np.zeros(2), question="q", answer=5, answer_name="k5")
        ]
        dataset = TaskDataset(task_index=1, samples=samples, classes=[stranger])
        with pytest.raises(DataError):
            evaluate(model, dataset, vocab)

    def test_empty_dataset_rejected(self):
        vocab = build_vocabulary(["k0"])
        model, classes = rigged_constant_model(1, favored=0, vocab=vocab)
        dataset = TaskDataset(task_index=1, samples=[], classes=classes)
        with pytest.raises(DataError):
            evaluate(model, dataset, vocab)


class TestRunContinual:
    def run(self, manifest, mode, run_dir=None, **kw):
        settings = TrainSettings(seed=5, mode=mode, **FAST)
        llm = NoisyOracleTeacher(seed=5, accuracy=0.8)
        return (
            run_continual(
                manifest, settings, standard_weights(),
                llm_teacher=llm, run_dir=run_dir, **kw,
            ),
            llm,
        )

    def test_row_layout_and_average(self, mini_stream):
        (rows, trace, student), _ = self.run(mini_stream, "ours")
        by_t = {}
        for row in rows:
            by_t.setdefault(row.t, []).append(row)
        assert sorted(by_t) == [1, 2, 3]
        for t, step_rows in by_t.items():
            assert [r.dataset for r in step_rows] == [
                f"task{i}" for i in range(1, t + 1)
            ] + [AVG_DATASET]
            avg = step_rows[-1]
            assert avg.accuracy == pytest.approx(
                np.mean([r.accuracy for r in step_rows[:-1]]), abs=1e-12
            )
            assert avg.macro_f1 == pytest.approx(
                np.mean([r.macro_f1 for r in step_rows[:-1]]), abs=1e-12
            )
        assert student.n_classes == len(mini_stream.labels)

    def test_deterministic_across_repeats(self, mini_stream):
        (rows_a, _, _), _ = self.run(mini_stream, "ours")
        (rows_b, _, _), _ = self.run(mini_stream, "ours")
        assert rows_a == rows_b

    def test_fine_tuning_never_queries_the_general_teacher(self, mini_stream):
        (rows, trace, _), llm = self.run(mini_stream, "ft")
        assert llm.query_count == 0
        assert all(row["alpha"] == 1.0 for row in trace.rows)

    def test_artifacts_written_and_reload(self, mini_stream, tmp_path):
        (rows, trace, student), _ = self.run(
            mini_stream, "ours", run_dir=tmp_path, config_digest="abc123"
        )
        for t in (1, 2, 3):
            assert (tmp_path / f"checkpoint_t{t}.bin").exists()
        reread = read_metrics_csv(tmp_path / "metrics.csv")
        assert reread == rows
        model, header = load_checkpoint(tmp_path / "checkpoint_t3.bin")
        assert header["task_index"] == 3
        assert header["config_digest"] == "abc123"
        assert header["class_names"] == student.class_names
        assert len(header["trace_rows"]) == len(trace.rows)
        test = load_task(mini_stream, 3, split="test")
        inputs = encode_inputs(test.samples, mini_stream.vocab, mini_stream.feature_length)
        np.testing.assert_array_equal(model.forward(inputs), student.forward(inputs))


class TestCheckpointFormat:
    def test_roundtrip_preserves_parameters_exactly(self, tmp_path):
        model = StudentModel(3, 4, 6, 8, 8).grow_head([toy_label(0), toy_label(1)])
        model.w1 += 0.123456789
        trace = WeightTrace()
        from mtcl.weights import WeightTriple

        trace.record(1, 0, WeightTriple(1.0, 0.0, 0.0))
        path = tmp_path / "ck.bin"
        save_checkpoint(path, model, 1, trace, "digest")
        restored, header = load_checkpoint(path)
        np.testing.assert_array_equal(restored.get_flat(), model.get_flat())
        assert restored.class_ids == model.class_ids
        assert header["seed"] == 3

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "ck.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(DataError, match="magic"):
            load_checkpoint(path)

    def test_truncated_blob_rejected(self, tmp_path):
        model = StudentModel(3, 4, 6, 8, 8).grow_head([toy_label(0)])
        path = tmp_path / "ck.bin"
        save_checkpoint(path, model, 1, WeightTrace(), "")
        data = path.read_bytes()
        path.write_bytes(data[:-16])
        with pytest.raises(DataError, match="truncated"):
            load_checkpoint(path)

    def test_no_leftover_temp_file(self, tmp_path):
        model = StudentModel(3, 4, 6, 8, 8).grow_head([toy_label(0)])
        path = tmp_path / "ck.bin"
        save_checkpoint(path, model, 1, WeightTrace(), "")
        assert list(tmp_path.iterdir()) == [path]


class TestMetricsCsv:
    def test_roundtrip_is_exact(self, tmp_path):
        from mtcl.engine import MetricsRow

        rows = [
            MetricsRow(t=1, dataset="task1", accuracy=1.0 / 3.0, macro_f1=0.7531),
            MetricsRow(t=1, dataset=AVG_DATASET, accuracy=0.1 + 0.2, macro_f1=0.0),
        ]
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, rows)
        assert read_metrics_csv(path) == rows
        header = path.read_text().splitlines()[0]
        assert header == "t,dataset,accuracy,macro_f1"
