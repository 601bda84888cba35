import numpy as np
import pytest

from kdasc.audit import audit
from kdasc.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from kdasc.estimators import extract_embedding
from kdasc.exceptions import ConfigError, CorruptFileError, IncompatibleVersionError, ShapeError, SpecMismatchError
from kdasc.frontend import Standardization
from kdasc.nn import Network
from kdasc.nn.spec import BN, RELU, SOFTMAX, Conv, Dense, LayerKind
from kdasc.zoo import ModelSpec, TeacherConfig, build_student, build_teacher


def student_checkpoint(seed=0):
    net = Network(build_student(), seed=seed)
    rng = np.random.default_rng(seed)
    # non-trivial running statistics so eval-mode BN is exercised
    for key, arr in net.buffers().items():
        arr[...] = rng.uniform(0.5, 1.5, arr.shape) if key.endswith("var") else rng.normal(0, 0.1, arr.shape)
    for arr in net.parameters().values():
        if arr.ndim == 1:
            arr[...] = rng.normal(0, 0.1, arr.shape)
    return Checkpoint(
        spec=build_student(),
        params={k: v.copy() for k, v in net.parameters().items()},
        buffers={k: v.copy() for k, v in net.buffers().items()},
        standardization=Standardization((0.1, 0.2, 0.3), (1.0, 2.0, 3.0)),
        train_config={"seed": seed},
        kind="MEL",
    )


# -- student and teacher specs --------------------------------------------------

def test_student_shape_chain():
    spec = build_student()
    shapes = spec.shapes
    pooled = [shapes[i] for i, layer in enumerate(spec.layers) if layer.kind in (LayerKind.AVGPOOL, LayerKind.GLOBALAVGPOOL)]
    assert pooled == [(64, 64, 16), (32, 32, 16), (16, 16, 16), (32,)]
    assert shapes[spec.embedding_layer_index] == (64,)
    assert shapes[-1] == (10,)
    assert spec.layers[spec.embedding_layer_index + 1] == RELU


def test_student_param_count_by_hand():
    conv = [2 * 2 * 3 * 16 + 16, 2 * 2 * 16 * 16 + 16, 2 * 2 * 16 * 16 + 16, 2 * 2 * 16 * 32 + 32]
    bn = [2 * 16, 2 * 16, 2 * 16, 2 * 32]
    dense = [32 * 64 + 64, 64 * 10 + 10]
    expected = sum(conv) + sum(bn) + sum(dense)
    assert expected == 7290
    assert audit(build_student()).params == expected
    assert Network(build_student()).n_params() == expected


def test_student_posterior_is_distribution():
    x = np.random.default_rng(0).standard_normal((3, 128, 128, 3))
    # untrained networks have no running statistics, so use batch statistics
    p = Network(build_student()).forward(x, training=True)
    assert p.shape == (3, 10) and np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_teacher_default_size_and_contract():
    spec = build_teacher()
    assert audit(spec).params > 10 * 7290
    assert spec.input_shape == build_student().input_shape
    assert spec.shapes[spec.embedding_layer_index] == (64,) and spec.shapes[-1] == (10,)
    p = Network(spec).forward(np.zeros((2, 128, 128, 3)), training=True)
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


@pytest.mark.parametrize("cfg", [TeacherConfig((8,), 1), TeacherConfig((8, 16), 4), TeacherConfig((4, 8, 8, 8, 8), 2)])
def test_teacher_embedding_is_64_for_any_config(cfg):
    spec = build_teacher(cfg)
    assert spec.shapes[spec.embedding_layer_index] == (64,)


def test_teacher_spatial_collapse_rejected():
    with pytest.raises(ConfigError):
        build_teacher(TeacherConfig((8,) * 8))
    with pytest.raises(ConfigError):
        build_teacher(TeacherConfig((8, 8, 8, 8, 8), stem_pool=8))
    with pytest.raises(ConfigError):
        build_teacher(TeacherConfig((8,), stem_pool=3))
    with pytest.raises(ConfigError):
        build_teacher(TeacherConfig(()))


def test_embedding_designation_is_validated():
    with pytest.raises(ShapeError):
        ModelSpec("bad", (Dense(32), RELU, Dense(10), SOFTMAX), (8,), 0)
    with pytest.raises(ShapeError):
        ModelSpec("bad", (Dense(64), Dense(10), SOFTMAX), (8,), 0)
    with pytest.raises(ShapeError):
        ModelSpec("bad", (Conv(2, 2, 4), BN, Dense(10)), (4, 4, 1))


def test_spec_dict_roundtrip():
    for spec in (build_student(), build_teacher()):
        assert ModelSpec.from_dict(spec.to_dict()) == spec


# -- checkpoints ---------------------------------------------------------------------

def test_save_load_save_is_byte_identical(tmp_path):
    ckpt = student_checkpoint()
    save_checkpoint(ckpt, tmp_path / "a.ckpt")
    loaded = load_checkpoint(tmp_path / "a.ckpt", expected_spec=build_student())
    save_checkpoint(loaded, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    for k, v in ckpt.params.items():
        assert loaded.params[k].tobytes() == v.astype("<f4").tobytes()
    assert loaded.standardization == ckpt.standardization and loaded.kind == "MEL"


def test_blob_sizes_match_audit(tmp_path):
    ckpt = student_checkpoint()
    report = audit(ckpt.spec)
    assert sum(v.size for v in ckpt.params.values()) == report.params
    assert 4 * sum(v.size for v in (*ckpt.params.values(), *ckpt.buffers.values())) == report.checkpoint_bytes


@pytest.mark.parametrize("where", [0.3, 0.6, 0.95])
def test_payload_byte_flip_detected(tmp_path, where):
    path = tmp_path / "c.ckpt"
    save_checkpoint(student_checkpoint(), path)
    data = bytearray(path.read_bytes())
    data[int(where * len(data))] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptFileError):
        load_checkpoint(path)


def test_truncation_reports_offset(tmp_path):
    path = tmp_path / "c.ckpt"
    save_checkpoint(student_checkpoint(), path)
    data = path.read_bytes()
    cut = len(data) - 1000
    path.write_bytes(data[:cut])
    with pytest.raises(CorruptFileError, match="offset") as info:
        load_checkpoint(path)
    assert info.value.offset is not None and info.value.offset <= cut


def test_version_mismatch(tmp_path):
    path = tmp_path / "c.ckpt"
    save_checkpoint(student_checkpoint(), path)
    data = bytearray(path.read_bytes())
    data[5:7] = (2).to_bytes(2, "little")
    path.write_bytes(bytes(data))
    with pytest.raises(IncompatibleVersionError):
        load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "c.ckpt"
    path.write_bytes(b"NOTIT" + bytes(20))
    with pytest.raises(CorruptFileError):
        load_checkpoint(path)


def test_wrong_spec_names_first_layer(tmp_path):
    path = tmp_path / "c.ckpt"
    save_checkpoint(student_checkpoint(), path)
    with pytest.raises(SpecMismatchError, match="layer 00"):
        load_checkpoint(path, expected_spec=build_teacher(TeacherConfig((8,), 4)))
    layers = list(build_student().layers)
    layers[5] = Conv(2, 2, 8)
    other = ModelSpec("student", tuple(layers), (128, 128, 3), build_student().embedding_layer_index)
    with pytest.raises(SpecMismatchError, match="layer 05"):
        load_checkpoint(path, expected_spec=other)


# -- embeddings -------------------------------------------------------------------------

def _np_conv(x, w, b):
    kh, kw = w.shape[:2]
    pt, pl = (kh - 1) // 2, (kw - 1) // 2
    xp = np.pad(x, ((pt, kh - 1 - pt), (pl, kw - 1 - pl), (0, 0)))
    h, wd = x.shape[:2]
    out = np.broadcast_to(b, (h, wd, len(b))).astype(np.float64)
    for i in range(kh):
        for j in range(kw):
            out = out + xp[i:i + h, j:j + wd] @ w[i, j]
    return out


def naive_embedding(ckpt, x):
    """Independent float64 eval-mode forward of one sample up to the embedding tap."""
    p = {k: v.astype(np.float64) for k, v in ckpt.params.items()}
    s = {k: v.astype(np.float64) for k, v in ckpt.buffers.items()}
    x = x.astype(np.float64)
    for i, layer in enumerate(ckpt.spec.layers[:ckpt.spec.embedding_layer_index + 2]):
        name = f"{i:02d}_{layer.kind.value.lower()}"
        kind = layer.kind
        if kind is LayerKind.CONV2D:
            x = _np_conv(x, p[name + "/weight"], p[name + "/bias"])
        elif kind is LayerKind.DENSE:
            x = x @ p[name + "/weight"] + p[name + "/bias"]
        elif kind is LayerKind.RELU:
            x = np.maximum(x, 0)
        elif kind is LayerKind.BATCHNORM:
            x = (x - s[name + "/running_mean"]) / np.sqrt(s[name + "/running_var"] + 1e-5)
            x = x * p[name + "/gamma"] + p[name + "/beta"]
        elif kind is LayerKind.AVGPOOL:
            h, w, c = x.shape
            x = x.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))
        elif kind is LayerKind.GLOBALAVGPOOL:
            x = x.mean(axis=(0, 1))
    return x


def test_param_naming_matches_oracle():
    ckpt = student_checkpoint()
    assert "00_conv2d/weight" in ckpt.params and "02_batchnorm/running_var" in ckpt.buffers


def test_zero_input_embedding_matches_naive_forward():
    ckpt = student_checkpoint(3)
    got = extract_embedding(ckpt, np.zeros((128, 128, 3)))
    want = naive_embedding(ckpt, np.zeros((128, 128, 3)))
    assert got.shape == (64,)
    np.testing.assert_allclose(got, want, rtol=1e-4, atol=1e-5)


def test_random_input_embedding_matches_naive_forward():
    ckpt = student_checkpoint(4)
    x = np.random.default_rng(5).standard_normal((128, 128, 3)).astype(np.float32)
    np.testing.assert_allclose(extract_embedding(ckpt, x), naive_embedding(ckpt, x), rtol=1e-3, atol=1e-4)


def test_embedding_determinism_and_nonnegativity():
    ckpt = student_checkpoint(1)
    x = np.random.default_rng(2).standard_normal((4, 128, 128, 3))
    a, b = extract_embedding(ckpt, x), extract_embedding(ckpt, x)
    assert a.tobytes() == b.tobytes() and a.shape == (4, 64) and np.all(a >= 0)


def test_embedding_spec_mismatch():
    with pytest.raises(SpecMismatchError):
        extract_embedding(student_checkpoint(), np.zeros((128, 128, 3)), expected_spec=build_teacher())
