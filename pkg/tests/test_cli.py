# Copyright 2025 The orthogonal-kge Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#   http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
from pathlib import Path

import numpy as np
import pytest

from orthokge.checkpoint import Checkpoint
from orthokge.cli import main
from orthokge.kg_data import CACHE_MANIFEST_FILE, Vocabulary, load_dataset
from orthokge.manifold import random_orthogonal_blocks
from orthokge.model import EntityTable, RelationTable, init_params
from orthokge.settings import TrainingConfig
from orthokge.studies import SWEEP_FILE
from orthokge.trainer import CHECKPOINT_DIR, METRICS_FILE

CYCLE_TRIPLES = "e0\tr\te1\ne1\tr\te2\ne2\tr\te3\ne3\tr\te0\n"


def machine_values(output: str, prefix: str) -> dict[str, str]:
    line = next(ln for ln in output.splitlines() if ln.startswith(prefix))
    return dict(item.split("=", 1) for item in line.split())


def write_config(path: Path, **values: object) -> Path:
    path.write_text("".join(f"{k}={v}\n" for k, v in values.items()))
    return path


def save_checkpoint(
    directory: Path, weights: np.ndarray, relation_names: list[str]
) -> Path:
    n = weights.shape[1] * weights.shape[2]
    vocab = Vocabulary(["a", "b"], relation_names)
    d = weights.shape[2]
    Checkpoint.from_training(
        config=TrainingConfig(n=n, d=d),
        vocab=vocab,
        dataset="constructed",
        epoch=0,
        valid_mrr=None,
        entities=EntityTable(np.ones((2, n, 1)), np.zeros(2)),
        relations=RelationTable(weights),
    ).save(directory)
    return directory


@pytest.mark.parametrize(
    "n, m, d, relation, entity, reference",
    [
        (500, 1, 2, 250, 500, 250),
        (40, 7, 2, 20, 280, 140),
        (501, 1, 3, 501, 501, 250),
    ],
)
def test_param_count(
    tmp_path: Path,
    capsys: pytest.CaptureFixture[str],
    n: int,
    m: int,
    d: int,
    relation: int,
    entity: int,
    reference: int,
) -> None:
    config = write_config(tmp_path / "c.conf", n=n, m=m, d=d)
    assert main(["param-count", "--config", str(config)]) == 0
    values = machine_values(capsys.readouterr().out, "entity_per_entity=")
    assert int(values["relation_per_relation"]) == relation
    assert int(values["entity_per_entity"]) == entity
    assert int(values["reference_per_relation"]) == reference
    assert float(values["ratio"]) == pytest.approx(relation / reference, abs=1e-6)


def test_param_count_ratio_is_one_over_m(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    config = write_config(tmp_path / "c.conf", n=40, m=7, d=2)
    main(["param-count", "--config", str(config)])
    values = machine_values(capsys.readouterr().out, "entity_per_entity=")
    assert float(values["ratio"]) == pytest.approx(1 / 7, abs=1e-6)


def test_param_count_with_data(
    tmp_path: Path, toy_kg_dir: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    config = write_config(tmp_path / "c.conf", n=4, m=1, d=2)
    args = ["param-count", "--config", str(config), "--data", str(toy_kg_dir)]
    assert main(args) == 0
    out = capsys.readouterr().out
    assert "Entity parameters in total" in out
    assert "15" in out


def test_train_then_eval(
    tmp_path: Path,
    toy_kg_dir: Path,
    toy_config: Path,
    capsys: pytest.CaptureFixture[str],
) -> None:
    out = tmp_path / "run"
    code = main(
        [
            "train",
            "--config",
            str(toy_config),
            "--data",
            str(toy_kg_dir),
            "--out",
            str(out),
        ]
    )
    assert code == 0
    assert (out / CHECKPOINT_DIR / "manifest.json").is_file()
    assert len((out / METRICS_FILE).read_text().splitlines()) == 4
    capsys.readouterr()

    outputs = []
    for _ in range(2):
        args = ["eval", "--checkpoint", str(out / CHECKPOINT_DIR)]
        assert main([*args, "--data", str(toy_kg_dir), "--split", "valid"]) == 0
        outputs.append(machine_values(capsys.readouterr().out, "mrr="))
    assert outputs[0] == outputs[1]
    assert outputs[0]["n"] == "1"


def test_train_seed_override(
    tmp_path: Path, toy_kg_dir: Path, toy_config: Path
) -> None:
    for name, seed in (("a", "1"), ("b", "2")):
        args = ["train", "--config", str(toy_config), "--data", str(toy_kg_dir)]
        assert main([*args, "--out", str(tmp_path / name), "--seed", seed]) == 0
    first = Checkpoint.load(tmp_path / "a" / CHECKPOINT_DIR)
    second = Checkpoint.load(tmp_path / "b" / CHECKPOINT_DIR)
    assert first.manifest.config.seed == 1
    assert not np.array_equal(
        first.arrays["entity_matrices"], second.arrays["entity_matrices"]
    )


def test_prepare_writes_cache_usable_by_eval(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    data = tmp_path / "cycle"
    data.mkdir()
    (data / "train.txt").write_text(CYCLE_TRIPLES)
    (data / "test.txt").write_text("e0\tr\te1\n")
    cache = tmp_path / "cache"
    assert main(["prepare", "--data", str(data), "--out", str(cache)]) == 0
    assert (cache / CACHE_MANIFEST_FILE).is_file()

    points = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    quarter = np.array([[0.0, -1.0], [1.0, 0.0]])
    Checkpoint.from_training(
        config=TrainingConfig(n=2, d=2),
        vocab=Vocabulary(["e0", "e1", "e2", "e3"], ["r"]),
        dataset="cycle",
        epoch=0,
        valid_mrr=None,
        entities=EntityTable(points[:, :, None], np.zeros(4)),
        relations=RelationTable(quarter[None, None].copy()),
    ).save(tmp_path / "perfect")
    capsys.readouterr()

    args = ["eval", "--checkpoint", str(tmp_path / "perfect"), "--data", str(cache)]
    assert main(args) == 0
    values = machine_values(capsys.readouterr().out, "mrr=")
    assert values["mrr"] == "1.000000"
    assert main([*args, "--both-sides"]) == 0
    values = machine_values(capsys.readouterr().out, "mrr=")
    assert (values["mrr"], values["n"]) == ("1.000000", "2")


def test_eval_vocabulary_mismatch(
    tmp_path: Path, toy_kg_dir: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    weights = random_orthogonal_blocks(2, 2, 0).reshape(1, 2, 2, 2)
    ckpt = save_checkpoint(tmp_path / "ckpt", weights, ["r"])
    code = main(["eval", "--checkpoint", str(ckpt), "--data", str(toy_kg_dir)])
    assert code == 2
    assert "CompatibilityError" in capsys.readouterr().err


def analyze_output(
    capsys: pytest.CaptureFixture[str], checkpoint: Path, out: Path, *args: str
) -> dict[str, str]:
    capsys.readouterr()
    code = main(
        ["analyze", "--checkpoint", str(checkpoint), "--out", str(out), *args]
    )
    assert code == 0
    return machine_values(capsys.readouterr().out, "kind=")


def test_analyze_symmetry_of_involution(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    involution = np.stack([np.diag([1.0, -1.0]), -np.eye(2)])[None]
    ckpt = save_checkpoint(tmp_path / "ckpt", involution, ["similar_to"])
    values = analyze_output(
        capsys, ckpt, tmp_path / "out", "--kind", "symmetry", "similar_to"
    )
    assert float(values["residual_norm"]) < 1e-10
    assert (tmp_path / "out" / "symmetry__similar_to.csv").is_file()
    assert (tmp_path / "out" / "symmetry__similar_to.json").is_file()


def test_analyze_composition_and_commutator_gap(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    gen = np.random.default_rng(3)
    r1, r2 = random_orthogonal_blocks(4, 3, gen, std=1.0).reshape(2, 2, 3, 3)
    weights = np.stack([r1, r2, r2 @ r1])
    ckpt = save_checkpoint(tmp_path / "ckpt", weights, ["r1", "r2", "r3"])

    values = analyze_output(
        capsys, ckpt, tmp_path / "out", "--kind", "composition", "r1", "r2", "r3"
    )
    assert float(values["residual_norm"]) < 1e-10

    values = analyze_output(
        capsys, ckpt, tmp_path / "out", "--kind", "commutator-gap", "r1", "r2", "r3"
    )
    assert float(values["residual_norm"]) < 1e-10
    assert float(values["swapped_norm"]) > 1e-3


def test_analyze_unknown_relation(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    weights = random_orthogonal_blocks(1, 2, 0).reshape(1, 1, 2, 2)
    ckpt = save_checkpoint(tmp_path / "ckpt", weights, ["similar_to"])
    args = ["analyze", "--checkpoint", str(ckpt), "--kind", "symmetry", "similar"]
    assert main([*args, "--out", str(tmp_path / "out")]) == 2
    assert "similar_to" in capsys.readouterr().err


def test_analyze_wrong_arity(tmp_path: Path) -> None:
    weights = random_orthogonal_blocks(1, 2, 0).reshape(1, 1, 2, 2)
    ckpt = save_checkpoint(tmp_path / "ckpt", weights, ["r"])
    args = ["analyze", "--checkpoint", str(ckpt), "--kind", "inversion", "r"]
    assert main([*args, "--out", str(tmp_path / "out")]) == 2


def test_config_errors_exit_with_two(
    tmp_path: Path, toy_kg_dir: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    config = write_config(tmp_path / "bad.conf", n=5, d=2)
    args = ["train", "--config", str(config), "--data", str(toy_kg_dir)]
    assert main([*args, "--out", str(tmp_path / "run")]) == 2
    err = capsys.readouterr().err
    assert "ConfigError" in err and "divisible" in err
    assert not (tmp_path / "run").exists()


def test_missing_data_exits_with_two(tmp_path: Path, toy_config: Path) -> None:
    args = ["train", "--config", str(toy_config), "--data", str(tmp_path / "none")]
    assert main([*args, "--out", str(tmp_path / "run")]) == 2


def test_unknown_kind_is_a_usage_error(tmp_path: Path) -> None:
    with pytest.raises(SystemExit) as info:
        main(["analyze", "--checkpoint", str(tmp_path), "--kind", "shear", "r"])
    assert info.value.code == 2


def test_global_flags_before_subcommand(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    config = write_config(tmp_path / "c.conf", n=4, m=1, d=2)
    args = ["--threads", "2", "--log-level", "WARNING", "param-count"]
    assert main([*args, "--config", str(config)]) == 0
    assert "relation_per_relation=2" in capsys.readouterr().out


def test_eval_of_untrained_model_ranks_like_chance(
    tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    size, offset = 300, 7
    data = tmp_path / "ring"
    data.mkdir()
    (data / "train.txt").write_text(
        "".join(f"e{i}\tr\te{(i + 1) % size}\n" for i in range(size))
    )
    (data / "test.txt").write_text(
        "".join(f"e{i}\tr\te{(i + offset) % size}\n" for i in range(size))
    )
    dataset = load_dataset(data)
    config = TrainingConfig(n=8, d=2, relation_init="haar", seed=3)
    entities, relations = init_params(config, dataset.vocab)
    Checkpoint.from_training(
        config=config,
        vocab=dataset.vocab,
        dataset="ring",
        epoch=0,
        valid_mrr=None,
        entities=entities,
        relations=relations,
    ).save(tmp_path / "untrained")
    capsys.readouterr()

    args = ["eval", "--checkpoint", str(tmp_path / "untrained"), "--data", str(data)]
    assert main(args) == 0
    values = machine_values(capsys.readouterr().out, "mrr=")
    assert values["n"] == str(size)

    # one train tail is filtered from every query
    candidates = np.arange(1, size)
    expected = np.mean(1.0 / candidates)
    variance = np.mean(1.0 / candidates**2) - expected**2
    assert abs(float(values["mrr"]) - expected) <= 4.0 * np.sqrt(variance / size)


def test_sweep_over_block_sizes(
    tmp_path: Path,
    toy_kg_dir: Path,
    toy_config: Path,
    capsys: pytest.CaptureFixture[str],
) -> None:
    out = tmp_path / "sweep"
    args = ["sweep", "--config", str(toy_config), "--data", str(toy_kg_dir)]
    assert main([*args, "--out", str(out), "--block-sizes", "2", "4"]) == 0
    assert "Sweep over 2 runs" in capsys.readouterr().out
    rows = (out / SWEEP_FILE).read_text().splitlines()
    assert len(rows) == 3
    assert rows[0].split("\t")[:4] == ["label", "n", "m", "d"]


def test_sweep_rejects_unknown_optimizer(
    tmp_path: Path, toy_kg_dir: Path, toy_config: Path
) -> None:
    args = ["sweep", "--config", str(toy_config), "--data", str(toy_kg_dir)]
    with pytest.raises(SystemExit):
        main([*args, "--out", str(tmp_path / "s"), "--optimizers", "cayley"])
