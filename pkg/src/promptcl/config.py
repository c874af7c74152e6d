"""Flat key = value run configuration files.

The format is one assignment per line, ``#`` comments allowed. Every key
must be in the schema below; parse errors carry the 1-based line number.
"""

from __future__ import annotations

from .losses import AslConfig
from .protocol import RunConfig
from .vit import ModelConfig


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


# key -> (converter, default, help)
SCHEMA: dict[str, tuple] = {
    "dataset": (str, "", "directory of the benchmark dataset (required for run)"),
    "pretrain_dataset": (str, "", "directory of the pretraining dataset (for the pretrain command)"),
    "pretrain_checkpoint": (str, "", "checkpoint whose backbone seeds the run (optional)"),
    "out_dir": (str, "runs", "where reports and checkpoints are written"),
    "method": (str, "p2l_ca", "p2l_ca | p2l_ca_plus | fine_tuning"),
    "seed": (int, 0, "master seed for init, batching and data order"),
    "embed_dim": (int, 32, "token embedding width"),
    "layers": (int, 4, "number of transformer blocks"),
    "heads": (int, 4, "attention heads per block"),
    "image_side": (int, 16, "input image side length"),
    "patch_side": (int, 4, "patch side length"),
    "prompt_layer": (int, 2, "prompts join after this many blocks"),
    "adapter_start": (int, 3, "first adapted block (1-indexed)"),
    "adapter_dim": (int, 8, "adapter bottleneck width"),
    "gamma_pos": (float, 0.0, "positive focusing power of the asymmetric loss"),
    "gamma_neg": (float, 4.0, "negative focusing power of the asymmetric loss"),
    "clamp_eps": (float, 1e-7, "probability clamp for the loss"),
    "base_classes": (int, 4, "classes in the first task (0 means inc_classes)"),
    "inc_classes": (int, 4, "classes added by each later task"),
    "lr": (float, 4e-4, "initial Adam learning rate (cosine-decayed per stage)"),
    "epochs": (int, 20, "epochs per incremental stage"),
    "batch_size": (int, 64, "minibatch size (capped by the task's sample count)"),
    "pretrain_epochs": (int, 15, "epochs for the one-off backbone pretraining"),
    "threshold": (float, 0.5, "probability threshold for CF1/OF1"),
    "use_adapters": (_bool, True, "attach bottleneck adapters"),
    "ca_unfrozen": (_bool, False, "ablation: keep adapters trainable in every stage"),
    "prompts_unfrozen": (_bool, False, "ablation: keep old prompts trainable"),
    "ortho_weight": (float, 0.0, "weight of the prompt orthogonality penalty (0 disables)"),
    "semantic_embeddings": (str, "", "embedding table for p2l_ca_plus prompt init"),
}


def default_config() -> dict:
    return {key: default for key, (_, default, _) in SCHEMA.items()}


def _strip_inline_comment(line: str) -> str:
    """Drop a ``#`` comment when it starts the line or follows whitespace."""
    for i, ch in enumerate(line):
        if ch == "#" and (i == 0 or line[i - 1].isspace()):
            return line[:i].strip()
    return line


def parse_config_file(path) -> dict:
    values = default_config()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = _strip_inline_comment(raw.strip())
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in SCHEMA:
                raise ValueError(f"{path}: line {lineno}: unknown key {key!r}")
            convert = SCHEMA[key][0]
            try:
                values[key] = convert(value)
            except ValueError as err:
                raise ValueError(f"{path}: line {lineno}: bad value for {key}: {err}") from None
    return values


def print_config() -> str:
    """Schema as a ready-to-edit config file; parsing it back gives the defaults."""
    width = max(len(k) for k in SCHEMA)
    lines = ["# promptcl run configuration (defaults)"]
    for key, (_, default, help_text) in SCHEMA.items():
        lines.append(f"{key:<{width}} = {default}  # {help_text}")
    return "\n".join(lines) + "\n"


def build_run_config(values: dict) -> RunConfig:
    model = ModelConfig(
        embed_dim=values["embed_dim"],
        layers=values["layers"],
        heads=values["heads"],
        image_side=values["image_side"],
        patch_side=values["patch_side"],
        prompt_layer=values["prompt_layer"],
        adapter_start=values["adapter_start"],
        adapter_dim=values["adapter_dim"],
        seed=values["seed"],
    )
    asl = AslConfig(
        gamma_pos=values["gamma_pos"],
        gamma_neg=values["gamma_neg"],
        clamp_eps=values["clamp_eps"],
    )
    return RunConfig(
        model=model,
        asl=asl,
        base_classes=values["base_classes"],
        inc_classes=values["inc_classes"],
        method=values["method"],
        lr=values["lr"],
        epochs=values["epochs"],
        batch_size=values["batch_size"],
        pretrain_epochs=values["pretrain_epochs"],
        threshold=values["threshold"],
        seed=values["seed"],
        use_adapters=values["use_adapters"],
        ca_unfrozen=values["ca_unfrozen"],
        prompts_unfrozen=values["prompts_unfrozen"],
        ortho_weight=values["ortho_weight"],
        semantic_path=values["semantic_embeddings"],
    )
