#!/usr/bin/env python3
"""Regenerate the shipped wireframe models from the box-cab generator.

One-time script. Run from project root:
    python scripts/generate_models.py
"""

import os
import sys

sys.path.insert(0, os.getcwd())

from src.core.wireframe import default_models  # noqa: E402
from src.utils.formats import save_wireframe  # noqa: E402

os.makedirs("assets/models", exist_ok=True)

for model_id, model in default_models().items():
    path = f"assets/models/{model_id}.json"
    save_wireframe(path, model)
    print(f"Generated {path} ({len(model.vertices)} vertices)")
