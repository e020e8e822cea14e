import pytest

from rotadapt.config_flow import RunConfig, load_config, parse_config_text, translate, validate_config
from rotadapt.const import OcTarget
from rotadapt.exceptions import ConfigValidationError

CONFIG_TEXT = """
# desk-scale run
epochs = 30
batch_size=16   # trailing comment
V = 3
point_augment = yes
seeds = 0, 1, 2
sweep_values = 0.5,2
oc_target = teacher_on_original
"""


def _issues(text: str = "", overrides: dict[str, str] | None = None) -> list[tuple[str, str]]:
    with pytest.raises(ConfigValidationError) as error:
        validate_config(text, overrides)
    return [(issue.key, issue.constraint) for issue in error.value.issues]


@pytest.mark.parametrize(
    ("key", "expected"),
    [
        ("epochs", 200),
        ("batch_size", 32),
        ("num_classes", 4),
        ("lr0", 1e-3),
        ("gamma", 10.0),
        ("beta", 0.75),
        ("ema_momentum", 0.99),
        ("weight_decay", 1e-4),
        ("V", 5),
        ("AT", 10),
        ("T", 20),
        ("steps", 20),
        ("step_size", 0.1),
        ("lambda_oc", 0.01),
        ("lambda_ms", 0.01),
        ("tau_s", 0.5),
        ("tau_t", 0.5),
        ("tau_prime", 0.07),
        ("seeds", ()),
        ("sweep_values", (0.001, 0.01, 0.1, 1.0)),
        ("oc_target", "teacher_on_intricate"),
        ("point_augment", False),
        ("ckpt", ""),
    ],
)
def test_defaults(key, expected) -> None:
    assert getattr(RunConfig.defaults(), key) == expected


def test_parse_config_text() -> None:
    values, issues = parse_config_text(CONFIG_TEXT + "\nnot a pair\n")
    assert values["batch_size"] == "16"
    assert values["seeds"] == "0, 1, 2"
    assert [issue.key for issue in issues] == ["line 11"]


def test_validate_config() -> None:
    cfg = validate_config(CONFIG_TEXT, {"epochs": "5"})
    assert cfg.epochs == 5
    assert cfg.batch_size == 16
    assert cfg.point_augment is True
    assert cfg.seeds == (0, 1, 2)
    assert cfg.seed_list() == (0, 1, 2)
    assert cfg.sweep_values == (0.5, 2.0)

    train_cfg = cfg.train_config(workers=2)
    assert train_cfg.variants == 3
    assert train_cfg.workers == 2
    assert train_cfg.oc_target is OcTarget.TEACHER_ON_ORIGINAL
    assert train_cfg.mining.repetitions == 10
    assert train_cfg.weights.tau_prime == pytest.approx(0.07)


def test_benchmark_spec() -> None:
    cfg = validate_config("num_classes = 3\nper_class = 20\ntarget_occlusion_fraction = 0.1")
    spec = cfg.benchmark_spec()
    assert (spec.num_classes, spec.per_class) == (3, 20)
    assert spec.target.occlusion_fraction == pytest.approx(0.1)
    assert spec.target.jitter_sigma == pytest.approx(0.02)
    assert spec.source.name == "source"


def test_variants_exceed_repetitions() -> None:
    assert _issues("V = 20\nAT = 10") == [("V", "V must be ≤ AT.")]


def test_all_issues_reported_together() -> None:
    assert _issues("tau_prime = 0\nbatch_size = 1\nfoo = 3") == [
        ("batch_size", "Must be >= 2."),
        ("foo", "Unknown configuration key."),
        ("tau_prime", "Must be > 0."),
    ]


@pytest.mark.parametrize(
    ("overrides", "expected"),
    [
        ({"epochs": "abc"}, ("epochs", "Must be an integer.")),
        ({"lr0": "fast"}, ("lr0", "Must be a number.")),
        ({"num_classes": "5"}, ("num_classes", "Must lie in [2, 4].")),
        ({"ema_momentum": "1.5"}, ("ema_momentum", "Must lie in [0, 1].")),
        ({"source_occlusion_fraction": "0.7"}, ("source_occlusion_fraction", "Must lie in [0, 0.5].")),
        ({"n_points": "8"}, ("n_points", "Must be >= 32.")),
        ({"weight_decay": "-1"}, ("weight_decay", "Must be >= 0.")),
        ({"oc_target": "student"}, ("oc_target", "Must be teacher_on_intricate or teacher_on_original.")),
        ({"seeds": "1,x"}, ("seeds", "Must be a comma-separated list of integers.")),
        ({"point_augment": "maybe"}, ("point_augment", "Must be true or false.")),
        ({"target_scale_min": "2.0"}, ("target_scale_min", "scale_min must be ≤ scale_max.")),
    ],
)
def test_invalid_values(overrides, expected) -> None:
    assert _issues("", overrides) == [expected]


def test_load_config(tmp_path) -> None:
    path = tmp_path / "run.cfg"
    path.write_text("seed = 7\n", encoding="utf-8")
    assert load_config(path).seed == 7
    assert load_config(None, {"seed": "3"}).seed == 3
    with pytest.raises(ConfigValidationError) as error:
        load_config(tmp_path / "absent.cfg")
    assert error.value.issues[0].constraint == translate("unreadable_file")


def test_translate() -> None:
    assert translate("v_exceeds_at") == "V must be ≤ AT."
    assert translate("no_such_key") == "no_such_key"
